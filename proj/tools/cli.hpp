#pragma once

#include "a5tmto/a5tmto.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace a5tmto::cli {

enum ExitCode : int
{
  kOk = 0,
  kError = 1,
  kNoHit = 2,
  kVerifyFailed = 3,
};

inline CipherSpec
parse_cipher(const std::string& text)
{
  if (text == "a5_1" || text == "a5/1")
    return CipherSpec::a5_1();
  if (text.rfind("toy:", 0) == 0) {
    std::vector<unsigned> lens;
    std::stringstream ss(text.substr(4));
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        std::size_t used = 0;
        const unsigned long v = std::stoul(item, &used);
        if (used != item.size())
          throw std::invalid_argument(item);
        lens.push_back(static_cast<unsigned>(v));
      } catch (const std::exception&) {
        throw std::invalid_argument("bad register length '" + item + "' in --cipher");
      }
    }
    if (lens.size() != 3)
      throw std::invalid_argument("--cipher toy needs three register lengths");
    return CipherSpec::toy(lens[0], lens[1], lens[2]);
  }
  throw std::invalid_argument("unknown cipher '" + text + "' (expected a5_1 or toy:l1,l2,l3)");
}

struct CipherOpts
{
  std::string cipher = "a5_1";
  int mix_clocks = -1;

  void add(CLI::App* app, const std::string& default_cipher)
  {
    cipher = default_cipher;
    app->add_option("--cipher", cipher, "a5_1 or toy:<l1>,<l2>,<l3>")->capture_default_str();
    app->add_option("--mix-clocks", mix_clocks, "override the number of mixing clocks");
  }

  CipherSpec spec() const
  {
    CipherSpec s = parse_cipher(cipher);
    if (mix_clocks >= 0)
      s = s.with_mix_clocks(static_cast<unsigned>(mix_clocks));
    return s;
  }
};

struct TableOpts
{
  std::string mode = "fixed";
  std::uint32_t colors = 4;
  std::uint32_t steps = 16;
  std::uint32_t dp_bits = 4;
  std::uint32_t max_segment = 0;
  std::uint64_t seed = 0;

  void add(CLI::App* app)
  {
    app->add_option("--mode", mode, "fixed or dp")
      ->check(CLI::IsMember({ "fixed", "dp" }))
      ->capture_default_str();
    app->add_option("--colors", colors, "colors per chain")->capture_default_str();
    app->add_option("--steps", steps, "steps per color (fixed mode)")->capture_default_str();
    app->add_option("--dp-bits", dp_bits, "distinguished-point bits (dp mode)")
      ->capture_default_str();
    app->add_option("--max-segment", max_segment, "dp segment cutoff (default 2^(dp_bits+4))");
    app->add_option("--seed", seed, "seed for reductions and start sampling")
      ->capture_default_str();
  }

  TableParams params(const CipherSpec& spec) const
  {
    TableParams p = mode == "dp" ? TableParams::dp_mode(spec.state_width(), colors, dp_bits)
                                 : TableParams::fixed_mode(spec.state_width(), colors, steps);
    if (mode == "dp" && max_segment)
      p.max_segment_steps = max_segment;
    p.reduction_seed = seed;
    p.validate();
    return p;
  }
};

// Start-sampler seed for one table of a generation run.
inline std::uint64_t
sampler_seed(std::uint64_t seed, std::uint64_t table_id)
{
  return mix64(seed ^ mix64(table_id + 0x9E3779B97F4A7C15ull));
}

inline std::vector<std::filesystem::path>
list_tables(const std::filesystem::path& dir)
{
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir))
    throw StoreError(StoreErrc::io_error, dir.string(), 0, "not a directory");
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".a5rt")
      out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// Tables of one attack must agree on everything but their id.
inline void
check_same_family(const std::vector<TableFile>& tables)
{
  for (const auto& t : tables) {
    TableParams a = t.params();
    TableParams b = tables.front().params();
    a.table_id = b.table_id = 0;
    if (!(a == b))
      throw StoreError(StoreErrc::params_mismatch,
                       t.path(),
                       0,
                       "parameters differ from " + tables.front().path());
  }
}

inline int
cmd_keystream(const CipherSpec& spec,
              const std::string& key_hex,
              const std::string& frame_hex,
              std::size_t count,
              std::ostream& out)
{
  const SessionKey key{ parse_hex(key_hex, spec.key_bits()) };
  const FrameNumber frame{ parse_hex(frame_hex, spec.frame_bits()) };
  const CipherState s = state_from_key(spec, key, frame);
  const Bits ks = keystream(spec, s, count);
  out << "key=" << format_hex(key.kc, spec.key_bits()) << "\n";
  out << "frame=" << format_hex(frame.fn, spec.frame_bits()) << "\n";
  out << "state=" << format_hex(pack(spec, s), spec.state_width()) << "\n";
  out << "count=" << count << "\n";
  out << "hex=" << bits_to_hex(ks) << "\n";
  out << "bits=" << bits_to_string(ks) << "\n";
  return kOk;
}

struct GenerateConfig
{
  CipherSpec spec = CipherSpec::a5_1();
  TableParams params;
  std::uint64_t chains = 1;
  std::uint64_t tables = 1;
  std::uint64_t first_table = 0;
  unsigned workers = 1;
  std::filesystem::path out_dir = ".";
  std::string prefix = "table";
};

inline int
cmd_generate(const GenerateConfig& cfg, std::ostream& out)
{
  std::filesystem::create_directories(cfg.out_dir);
  for (std::uint64_t i = 0; i < cfg.tables; ++i) {
    TableParams p = cfg.params;
    p.table_id = cfg.first_table + i;
    StartSampler sampler(sampler_seed(p.reduction_seed, p.table_id), cfg.spec.state_width());
    const auto built = build_table(cfg.spec, p, cfg.chains, sampler, cfg.workers);
    const auto path = cfg.out_dir / table_filename(cfg.prefix, p.table_id);
    write_table(path, built.table);
    const auto& r = built.report;
    const double rate = r.seconds > 0 ? static_cast<double>(r.generated) / r.seconds : 0.0;
    out << "table=" << path.string() << " table_id=" << p.table_id
        << " requested=" << r.requested << " generated=" << r.generated
        << " rejected=" << r.rejected << " lost=" << r.lost << " merged=" << r.merged
        << " final=" << r.final_count << " wall_seconds=" << std::fixed << std::setprecision(3)
        << r.seconds << " chains_per_second=" << std::setprecision(1) << rate << "\n";
    out.unsetf(std::ios::floatfield);
  }
  return kOk;
}

inline int
cmd_merge(const std::vector<std::filesystem::path>& shards,
          const std::filesystem::path& out_path,
          std::ostream& out)
{
  const auto s = merge_shards(shards, out_path);
  out << "out=" << out_path.string() << " records_in=" << s.records_in
      << " records_out=" << s.records_out << " merged=" << s.merged << "\n";
  return kOk;
}

struct AttackConfig
{
  CipherSpec spec = CipherSpec::a5_1();
  std::filesystem::path table_dir;
  std::vector<std::string> sample_hex;
  std::vector<std::uint64_t> offsets;
  std::string burst_hex;
  std::size_t burst_bits = 0;
  bool want_key = false;
  std::string frame_hex = "0";
  std::size_t max_candidates = std::size_t{ 1 } << 16;
};

inline int
cmd_attack(const AttackConfig& cfg, std::ostream& out)
{
  const auto& spec = cfg.spec;
  std::vector<KeystreamSample> samples;
  if (!cfg.burst_hex.empty()) {
    const std::size_t nbits = cfg.burst_bits ? cfg.burst_bits : cfg.burst_hex.size() * 4;
    samples = derive_samples(hex_to_bits(cfg.burst_hex, nbits), spec);
  }
  for (std::size_t i = 0; i < cfg.sample_hex.size(); ++i) {
    const std::uint64_t off = i < cfg.offsets.size() ? cfg.offsets[i] : 0;
    samples.push_back({ parse_hex(cfg.sample_hex[i], spec.state_width()), off, 0 });
  }
  if (samples.empty())
    throw std::invalid_argument("attack needs --sample or --burst");
  const FrameNumber frame{ parse_hex(cfg.frame_hex, spec.frame_bits()) };

  std::vector<TableFile> tables;
  for (const auto& p : list_tables(cfg.table_dir))
    tables.emplace_back(p);
  if (!tables.empty())
    check_same_family(tables);
  for (const auto& t : tables)
    check_compatible(spec, t.params());

  AttackOptions opt;
  opt.want_key = cfg.want_key;
  opt.frame = frame;
  opt.max_key_candidates = cfg.max_candidates;
  const auto report = attack<TableFile>(spec, samples, tables, opt);
  out << "tables=" << tables.size() << "\n";
  out << format_report(spec, report);
  return report.success ? kOk : kNoHit;
}

inline int
cmd_coverage(const CipherSpec& spec,
             const std::filesystem::path& table_dir,
             std::size_t n_samples,
             bool with_oracle,
             std::ostream& out)
{
  std::vector<TableFile> tables;
  for (const auto& p : list_tables(table_dir))
    tables.emplace_back(p, Validation::full);
  StateSet set(spec.state_width());
  std::uint64_t records = 0;
  for (const auto& t : tables) {
    collect_coverage(spec, t, set);
    records += t.size();
  }
  const double space = std::ldexp(1.0, static_cast<int>(spec.state_width()));
  out << "tables=" << tables.size() << "\n";
  out << "records=" << records << "\n";
  out << "coverage=" << set.count() << "\n";
  out << "state_space=" << static_cast<std::uint64_t>(space) << "\n";
  out << "fraction=" << static_cast<double>(set.count()) / space << "\n";
  out << "samples=" << n_samples << "\n";
  out << "predicted_success="
      << predict_success(static_cast<double>(set.count()), space, static_cast<double>(n_samples))
      << "\n";
  if (with_oracle) {
    const oracle::ImageTable image(spec);
    std::vector<Table> loaded;
    std::vector<oracle::TableRef> refs;
    for (const auto& t : tables)
      loaded.push_back(t.to_table());
    for (const auto& t : loaded)
      refs.push_back({ t.params(), t.records() });
    const auto exact = oracle::exact_coverage(refs, image);
    out << "oracle_coverage=" << exact << "\n";
    if (exact != set.count()) {
      out << "coverage_agreement=0\n";
      return kVerifyFailed;
    }
    out << "coverage_agreement=1\n";
  }
  return kOk;
}

struct VerifyConfig
{
  CipherSpec spec = CipherSpec::toy(3, 3, 3);
  std::filesystem::path table_dir;
  std::uint64_t seed = 1;
  std::size_t chains = 200;
  std::size_t targets = 400;
};

// Cross-checks every production path against the exhaustive oracle.
inline int
cmd_verify(const VerifyConfig& cfg, std::ostream& out)
{
  const auto& spec = cfg.spec;
  const unsigned width = spec.state_width();
  if (width > kEnumerationGuardBits)
    throw WidthExceedsGuard(width, kEnumerationGuardBits);
  bool all_ok = true;
  auto report = [&](const std::string& name, bool ok, const std::string& detail) {
    out << "check=" << name << " result=" << (ok ? "pass" : "FAIL") << " " << detail << "\n";
    all_ok = all_ok && ok;
  };

  // Table files first: a corrupt file is refused before anything else runs.
  std::vector<Table> file_tables;
  if (!cfg.table_dir.empty()) {
    for (const auto& p : list_tables(cfg.table_dir)) {
      const TableFile f(p, Validation::full);
      std::uint64_t bad = 0;
      check_compatible(spec, f.params());
      for (std::size_t i = 0; i < f.size(); ++i) {
        const auto r = f.record(i);
        const auto regen = generate_chain(spec, f.params(), r.start);
        bad += !regen || regen->end != r.end;
      }
      report("table_chains",
             bad == 0,
             "file=" + p.string() + " records=" + std::to_string(f.size()) +
               " bad=" + std::to_string(bad));
      file_tables.push_back(f.to_table());
    }
  }

  const oracle::ImageTable image(spec);

  const std::vector<TableParams> families = [&] {
    TableParams fixed = TableParams::fixed_mode(width, 4, 4);
    TableParams rainbow = TableParams::fixed_mode(width, 8, 1);
    TableParams dp = TableParams::dp_mode(width, 3, std::max(1u, std::min(3u, width - 1)));
    fixed.reduction_seed = rainbow.reduction_seed = dp.reduction_seed = cfg.seed;
    return std::vector<TableParams>{ fixed, rainbow, dp };
  }();

  // Dual-path chain equality.
  {
    std::uint64_t compared = 0;
    std::uint64_t mismatched = 0;
    std::mt19937_64 rng(cfg.seed);
    for (const auto& p : families) {
      for (std::size_t i = 0; i < cfg.chains; ++i) {
        const word start = rng() & low_mask(width);
        const auto a = expand_chain(spec, p, start);
        const auto b = oracle::walk(p, image, start);
        ++compared;
        if (!a) {
          mismatched += !b.rejected;
          continue;
        }
        mismatched += b.rejected || a->values != b.values || a->end != b.end;
      }
    }
    report("dual_path",
           mismatched == 0,
           "chains=" + std::to_string(compared) + " mismatched=" + std::to_string(mismatched));
  }

  // Coverage, production walk vs oracle walk.
  {
    std::uint64_t tables = 0;
    std::uint64_t disagree = 0;
    for (const auto& p : families) {
      StartSampler sampler(cfg.seed + tables, width);
      const auto built = build_table(spec, p, 16, sampler);
      const auto a = coverage(spec, built.table);
      const auto b = oracle::exact_coverage(p, built.table.records(), image);
      ++tables;
      disagree += a != b;
    }
    for (const auto& t : file_tables) {
      ++tables;
      disagree += coverage(spec, t) != oracle::exact_coverage(t.params(), t.records(), image);
    }
    report("coverage",
           disagree == 0,
           "tables=" + std::to_string(tables) + " disagreeing=" + std::to_string(disagree));
  }

  // Back-clock completeness over the whole state space.
  if (width <= 20) {
    const auto pre = oracle::exhaustive_preimages(spec);
    std::uint64_t wrong = 0;
    for (word t = 0; t < pre.size(); ++t) {
      std::vector<word> got;
      for (const auto& s : backclock_candidates(spec, unpack(spec, t)))
        got.push_back(pack(spec, s));
      std::sort(got.begin(), got.end());
      wrong += got != pre[t];
    }
    report("backclock",
           wrong == 0,
           "states=" + std::to_string(pre.size()) + " wrong=" + std::to_string(wrong));
  } else {
    out << "check=backclock result=skipped width=" << width << "\n";
  }

  // Success rate against prediction. One table, samples at offset 0 only:
  // the target is then uniform and the hit probability is exactly c/N.
  {
    oracle::ExperimentConfig ec;
    ec.params = TableParams::fixed_mode(width, 4, 1);
    ec.params.reduction_seed = cfg.seed;
    ec.n_tables = 1;
    ec.chains_per_table = std::max<std::uint64_t>(1, image.size() / 64);
    ec.n_targets = cfg.targets;
    ec.samples_per_target = 1;
    ec.max_offset = 0;
    ec.collect_all = true;
    ec.seed = cfg.seed;
    const auto r = oracle::success_rate_experiment(spec, ec, image);
    std::ostringstream d;
    d << "empirical=" << r.empirical << " predicted=" << r.predicted
      << " std_error=" << r.std_error << " deviation_se=" << r.deviation();
    report("success_rate", r.deviation() <= 3.0, d.str());
  }

  out << "verify=" << (all_ok ? "pass" : "fail") << "\n";
  return all_ok ? kOk : kVerifyFailed;
}

inline int
cmd_experiment(const CipherSpec& spec,
               const oracle::ExperimentConfig& cfg,
               std::ostream& out)
{
  const oracle::ImageTable image(spec, cfg.workers);
  const auto r = oracle::success_rate_experiment(spec, cfg, image);
  out << "tables=" << cfg.n_tables << "\n";
  out << "table_records=" << r.table_records << "\n";
  out << "coverage=" << r.coverage << "\n";
  out << "state_space=" << r.state_space << "\n";
  out << "targets=" << r.targets << "\n";
  out << "successes=" << r.successes << "\n";
  out << "empirical=" << r.empirical << "\n";
  out << "predicted=" << r.predicted << "\n";
  out << "std_error=" << r.std_error << "\n";
  out << "deviation_se=" << r.deviation() << "\n";
  out << "f_evals=" << r.f_evals << "\n";
  return kOk;
}

// Entry point shared by the executable and the tests. args excludes argv[0].
inline int
run(std::vector<std::string> args, std::ostream& out, std::ostream& err)
{
  CLI::App app{ "A5/1 time-memory trade-off toolkit" };
  app.require_subcommand(1);

  // One cipher option set per subcommand, each with its own default.
  CipherOpts ks_cipher, gen_cipher, att_cipher, cov_cipher, ver_cipher, exp_cipher;
  TableOpts table;

  auto* ks = app.add_subcommand("keystream", "print keystream for a key and frame");
  std::string key_hex = "0", frame_hex = "0";
  std::size_t count = 114;
  ks_cipher.add(ks, "a5_1");
  ks->add_option("--key", key_hex, "session key (hex)")->capture_default_str();
  ks->add_option("--frame", frame_hex, "frame number (hex)")->capture_default_str();
  ks->add_option("--count", count, "keystream bits")->capture_default_str();

  auto* gen = app.add_subcommand("generate", "build and write rainbow tables");
  GenerateConfig gcfg;
  std::string out_dir = ".";
  gen_cipher.add(gen, "a5_1");
  table.add(gen);
  gen->add_option("--chains", gcfg.chains, "chains per table")->capture_default_str();
  gen->add_option("--tables", gcfg.tables, "number of tables")->capture_default_str();
  gen->add_option("--first-table", gcfg.first_table, "id of the first table")
    ->capture_default_str();
  gen->add_option("--workers", gcfg.workers, "generation threads")->capture_default_str();
  gen->add_option("--out", out_dir, "output directory")->capture_default_str();
  gen->add_option("--prefix", gcfg.prefix, "file name prefix")->capture_default_str();

  auto* merge = app.add_subcommand("merge", "merge sorted table shards");
  std::vector<std::string> shards;
  std::string merge_out;
  merge->add_option("shards", shards, "shard files")->required();
  merge->add_option("--out", merge_out, "merged output file")->required();

  auto* att = app.add_subcommand("attack", "recover a state (and key) from keystream");
  AttackConfig acfg;
  std::string table_dir;
  att_cipher.add(att, "a5_1");
  att->add_option("--table-dir", table_dir, "directory of .a5rt tables")->required();
  att->add_option("--sample", acfg.sample_hex, "keystream window, packed hex");
  att->add_option("--offset", acfg.offsets, "clock offset of each --sample");
  att->add_option("--burst", acfg.burst_hex, "keystream burst, hex bit string");
  att->add_option("--burst-bits", acfg.burst_bits, "burst length in bits");
  att->add_flag("--want-key", acfg.want_key, "back-clock to the session key");
  att->add_option("--frame", acfg.frame_hex, "frame number (hex) for key recovery");
  att->add_option("--max-candidates", acfg.max_candidates, "key candidate cap");

  auto* cov = app.add_subcommand("coverage", "count states recoverable by a table set");
  std::size_t cov_samples = 51;
  bool cov_oracle = false;
  cov_cipher.add(cov, "toy:7,8,9");
  cov->add_option("--table-dir", table_dir, "directory of .a5rt tables")->required();
  cov->add_option("--samples", cov_samples, "samples for the success estimate")
    ->capture_default_str();
  cov->add_flag("--oracle", cov_oracle, "cross-check against the exhaustive oracle");

  auto* ver = app.add_subcommand("verify", "cross-check against exhaustive oracles");
  VerifyConfig vcfg;
  ver_cipher.add(ver, "toy:3,3,3");
  ver->add_option("--table-dir", table_dir, "also verify these tables");
  ver->add_option("--seed", vcfg.seed, "seed")->capture_default_str();
  ver->add_option("--chains", vcfg.chains, "chains per dual-path family")->capture_default_str();
  ver->add_option("--targets", vcfg.targets, "success-rate targets")->capture_default_str();

  auto* exp = app.add_subcommand("experiment", "measure success rate against prediction");
  oracle::ExperimentConfig ecfg;
  exp_cipher.add(exp, "toy:7,8,9");
  table.add(exp);
  exp->add_option("--chains", ecfg.chains_per_table, "chains per table")->required();
  exp->add_option("--tables", ecfg.n_tables, "number of tables")->capture_default_str();
  exp->add_option("--targets", ecfg.n_targets, "random targets")->capture_default_str();
  exp->add_option("--samples-per-target", ecfg.samples_per_target, "samples per target")
    ->capture_default_str();
  exp->add_option("--workers", ecfg.workers, "threads")->capture_default_str();
  ecfg.n_targets = 400;
  ecfg.samples_per_target = 51;

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: Usage: " << e.what() << "\n";
    return kError;
  }

  try {
    if (*ks)
      return cmd_keystream(ks_cipher.spec(), key_hex, frame_hex, count, out);
    if (*gen) {
      gcfg.spec = gen_cipher.spec();
      gcfg.params = table.params(gcfg.spec);
      gcfg.out_dir = out_dir;
      return cmd_generate(gcfg, out);
    }
    if (*merge) {
      std::vector<std::filesystem::path> paths(shards.begin(), shards.end());
      return cmd_merge(paths, merge_out, out);
    }
    if (*att) {
      acfg.spec = att_cipher.spec();
      acfg.table_dir = table_dir;
      return cmd_attack(acfg, out);
    }
    if (*cov)
      return cmd_coverage(cov_cipher.spec(), table_dir, cov_samples, cov_oracle, out);
    if (*ver) {
      vcfg.spec = ver_cipher.spec();
      vcfg.table_dir = table_dir;
      return cmd_verify(vcfg, out);
    }
    if (*exp) {
      const auto spec = exp_cipher.spec();
      ecfg.params = table.params(spec);
      ecfg.seed = table.seed;
      return cmd_experiment(spec, ecfg, out);
    }
  } catch (const HexParseError& e) {
    err << "error: BadHex: " << e.what() << " (token '" << e.token() << "')\n";
    return kError;
  } catch (const StoreError& e) {
    err << "error: " << e.what() << "\n";
    return kError;
  } catch (const WidthExceedsGuard& e) {
    err << "error: " << e.what() << "\n";
    return kError;
  } catch (const BurstTooShort& e) {
    err << "error: " << e.what() << "\n";
    return kError;
  } catch (const std::invalid_argument& e) {
    err << "error: InvalidArgument: " << e.what() << "\n";
    return kError;
  } catch (const std::exception& e) {
    err << "error: Internal: " << e.what() << "\n";
    return kError;
  }
  return kError;
}

} // namespace a5tmto::cli
