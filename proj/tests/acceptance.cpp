// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include "a5tmto/a5tmto.hpp"
#include "cli.hpp"
#include "support/reference_cipher.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

using namespace a5tmto;
namespace fs = std::filesystem;

namespace {

struct Outcome
{
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double
seconds_since(Clock::time_point t0)
{
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string
slurp(const fs::path& p)
{
  std::ifstream in(p, std::ios::binary);
  return { std::istreambuf_iterator<char>(in), {} };
}

const CipherSpec kToy = CipherSpec::toy(7, 8, 9);

const oracle::ImageTable&
toy_image()
{
  static const oracle::ImageTable image(kToy);
  return image;
}

// 1. Pinned vectors from the bit-array simulator. The simulator is rerun
// here so the pins are checked against it as well as frozen.
Outcome
known_answers()
{
  struct Pin
  {
    word key, frame;
    const char* ks;
  };
  const Pin pins[] = {
    { 0xefcdab8967452312, 0x134, "534eaa582fe8151ab6e1855a728c093f4d68d757ed949b4cbe41b7c6b" },
    { 0x0000000000000001, 0x0, "ea36ac11f8f23f48be6ab439a068c9a349eaf9adbf52787f0da11890a" },
    { 0x0123456789abcdef, 0x2aaaaa, "a20d5a3f2540a4bd21ac59bded8f0aee7a1c06a4413bacf61ba999aeb" },
    { 0xffffffffffffffff, 0x3fffff, "9ecc0c773fe335b41c1282205df9de10dbf11610865bae850a75bf686" },
    { 0xdeadbeefcafef00d, 0x1b3f5, "a1ee037b14f6933a4dc0e300ab2b3b1d4108231bfa762d6bd078ab8f8" },
    { 0x8000000000000000, 0x1, "407c41d53b4ca966c9be64f9430079c5531af9ea7f2efb54d332329b2" },
  };
  const auto spec = CipherSpec::a5_1();
  int ok = 0;
  for (const auto& p : pins) {
    const Bits ks =
      keystream(spec, state_from_key(spec, SessionKey{ p.key }, FrameNumber{ p.frame }), 228);
    const auto ref = reference::run(
      reference::setup(reference::a5_1(), p.key, 64, p.frame, 22, 100), 228);
    Bits ref_bits(ref.begin(), ref.end());
    ok += bits_to_hex(ks) == p.ks && ks == ref_bits;
  }
  return { ok == 6, std::to_string(ok) + "/6 vectors bit-exact over 228 bits" };
}

// 2. Back-clock completeness on the 9-bit micro-toy.
Outcome
backclock_completeness()
{
  const auto t0 = Clock::now();
  const auto spec = CipherSpec::toy(3, 3, 3);
  const auto pre = oracle::exhaustive_preimages(spec);
  int exact = 0;
  for (word t = 0; t < 512; ++t) {
    std::vector<word> got;
    for (const auto& s : backclock_candidates(spec, unpack(spec, t)))
      got.push_back(pack(spec, s));
    std::sort(got.begin(), got.end());
    exact += got == pre[t];
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << exact << "/512 states exact in " << secs << " s";
  return { exact == 512 && secs < 1.0, d.str() };
}

// 3. Key recovery round trips.
Outcome
key_recovery()
{
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  int toy_ok = 0, full_ok = 0;
  std::size_t max_keys = 0;
  const auto toy = kToy.with_mix_clocks(25);
  for (int i = 0; i < 100; ++i) {
    const SessionKey key{ rng() & low_mask(toy.key_bits()) };
    const FrameNumber frame{ rng() & low_mask(toy.frame_bits()) };
    const auto rec = recover_key(toy, state_from_key(toy, key, frame), frame, 1 << 16);
    toy_ok += std::binary_search(rec.keys.begin(), rec.keys.end(), key);
    max_keys = std::max(max_keys, rec.keys.size());
  }
  const auto full = CipherSpec::a5_1();
  for (int i = 0; i < 10; ++i) {
    const SessionKey key{ rng() };
    const FrameNumber frame{ rng() & low_mask(22) };
    const auto rec = recover_key(full, state_from_key(full, key, frame), frame, 1 << 16);
    full_ok += std::binary_search(rec.keys.begin(), rec.keys.end(), key);
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "toy " << toy_ok << "/100, A5/1 " << full_ok << "/10, most toy candidates " << max_keys
    << ", " << secs << " s";
  return { toy_ok == 100 && full_ok == 10 && secs < 120.0, d.str() };
}

// 4. Production walk vs oracle walk on 10^3 chains.
Outcome
dual_path()
{
  std::mt19937_64 rng(4);
  int chains = 0, agree = 0, values = 0;
  while (chains < 1000) {
    TableParams p = (chains % 2 == 0)
                      ? TableParams::fixed_mode(24, 1 + rng() % 16, 1 + rng() % 16)
                      : TableParams::dp_mode(24, 1 + rng() % 6, 2 + rng() % 6);
    p.reduction_seed = rng();
    p.table_id = rng() % 8;
    const word start = rng() & low_mask(24);
    const auto a = expand_chain(kToy, p, start);
    const auto b = oracle::walk(p, toy_image(), start);
    ++chains;
    if (!a) {
      agree += b.rejected;
      continue;
    }
    values += static_cast<int>(a->values.size());
    agree += !b.rejected && a->values == b.values && a->colors == b.colors &&
             a->steps == b.steps && a->end == b.end;
  }
  return { agree == chains,
           std::to_string(agree) + "/" + std::to_string(chains) + " chains identical (" +
             std::to_string(values) + " values)" };
}

// 5. Coverage against the oracle on 20 tables.
Outcome
coverage_exactness()
{
  std::mt19937_64 rng(5);
  int agree = 0;
  for (int i = 0; i < 20; ++i) {
    TableParams p;
    std::uint64_t chains;
    if (i == 0) {
      p = TableParams::fixed_mode(24, 4, 16);
      chains = 1 << 10;
    } else if (i % 3 == 0) {
      p = TableParams::dp_mode(24, 1 + rng() % 4, 3 + rng() % 5);
      chains = 100 + rng() % 900;
    } else {
      p = TableParams::fixed_mode(24, 1 + rng() % 32, 1 + rng() % 16);
      chains = 100 + rng() % 1500;
    }
    p.reduction_seed = i == 0 ? 0 : rng();
    p.table_id = rng() % 4;
    StartSampler sampler(rng(), 24);
    const auto t = build_table(kToy, p, chains, sampler).table;
    agree += coverage(kToy, t) == oracle::exact_coverage(p, t.records(), toy_image());
  }
  return { agree == 20, std::to_string(agree) + "/20 tables exact" };
}

// 6. Success rate against predict_success on toy (7,8,9).
Outcome
success_rate()
{
  const auto t0 = Clock::now();
  oracle::ExperimentConfig cfg;
  cfg.params = TableParams::fixed_mode(24, 64, 1);
  cfg.n_tables = 2;
  cfg.chains_per_table = 4300;
  cfg.n_targets = 400;
  cfg.samples_per_target = 51;
  cfg.seed = 1;
  const auto r = oracle::success_rate_experiment(kToy, cfg, toy_image());
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "empirical " << r.empirical << " (" << r.successes << "/" << r.targets
    << "), predicted " << r.predicted << " from exact coverage " << r.coverage << ", "
    << r.deviation() << " SE, " << secs << " s";
  return { r.deviation() <= 3.0 && std::abs(r.predicted - 0.8) < 0.05 && secs <= 600.0,
           d.str() };
}

// 7. Lookup cost on a FIXED t=16, s=16 table.
Outcome
lookup_cost()
{
  const auto p = TableParams::fixed_mode(24, 16, 16);
  StartSampler sampler(7, 24);
  const auto table = build_table(kToy, p, 2000, sampler).table;
  const std::uint64_t bound = lookup_cost_bound(p);

  // Windows that no recoverable state maps to cannot hit.
  StateSet covered(24);
  collect_coverage(kToy, table, covered);
  StateSet covered_images(24);
  for (word x = 0; x < toy_image().size(); ++x)
    if (covered.contains(x))
      covered_images.insert(toy_image()[x]);

  std::mt19937_64 rng(77);
  std::uint64_t misses = 0, walk_max = 0, total_max = 0, over_bound = 0, any_hit = 0;
  double miss_sum = 0;
  while (misses < 1000) {
    const word w = rng() & low_mask(24);
    if (covered_images.contains(w))
      continue;
    ++misses;
    bool hit = false;
    const auto st = lookup_sample(kToy, table, w, [&](word, std::uint32_t) {
      hit = true;
      return true;
    });
    any_hit += hit;
    walk_max = std::max(walk_max, st.walk_evals);
    total_max = std::max(total_max, st.f_evals());
    over_bound += st.walk_evals > bound;
    miss_sum += static_cast<double>(st.f_evals());
  }
  const double miss_mean = miss_sum / 1000;

  double hit_sum = 0;
  std::uint64_t planted_found = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto& rec = table.record(rng() % table.size());
    const auto ch = expand_chain(kToy, p, rec.start);
    const std::uint32_t color = rng() % 16;
    const word x = ch->values[color * 16];
    const auto st = lookup_sample(kToy, table, toy_image()[x], [&](word, std::uint32_t) {
      ++planted_found;
      return true;
    });
    hit_sum += static_cast<double>(st.f_evals());
  }
  const double hit_mean = hit_sum / 1000;

  std::ostringstream d;
  d << "misses: max walk " << walk_max << " <= " << bound << " (" << over_bound
    << " over), max incl. regeneration " << total_max << ", mean " << miss_mean
    << "; planted hits " << planted_found << "/1000, mean " << hit_mean << " ("
    << hit_mean / (bound / 2.0) << " x bound/2)";
  return { over_bound == 0 && any_hit == 0 && planted_found == 1000 && hit_mean < miss_mean,
           d.str() };
}

// 8. DP postcondition with dp_bits = 8.
Outcome
dp_postcondition()
{
  const fs::path dir = fs::temp_directory_path() / ("a5tmto_acc_dp_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  auto p = TableParams::dp_mode(24, 3, 8);
  p.reduction_seed = 8;
  StartSampler sampler(8, 24);
  const auto built = build_table(kToy, p, 4000, sampler);
  write_table(dir / "dp.a5rt", built.table);
  const TableFile f(dir / "dp.a5rt", Validation::full);
  std::uint64_t dp_ends = 0;
  for (std::size_t i = 0; i < f.size(); ++i)
    dp_ends += (f.end_at(i) & 0xff) == 0;
  fs::remove_all(dir);
  const auto& r = built.report;
  const double mean = static_cast<double>(r.segment_steps) / static_cast<double>(r.segments);
  std::ostringstream d;
  d << dp_ends << "/" << f.size() << " persisted ends distinguished; mean segment " << mean
    << " over " << r.segments << " segments (" << r.rejected << " rejected)";
  return { dp_ends == f.size() && f.size() > 0 && r.segments >= 10000 &&
             std::abs(mean - 256.0) <= 25.6,
           d.str() };
}

// 9. Merges from oracle-found collision pairs.
Outcome
merge_correctness()
{
  int same_ok = 0, same_found = 0, cross_ok = 0, cross_found = 0;
  for (int i = 0; i < 20; ++i) {
    TableParams p = i < 10 ? TableParams::fixed_mode(24, 4, 16) : TableParams::dp_mode(24, 3, 5);
    p.reduction_seed = 100 + i;
    const auto pair = oracle::find_collision_pair(p, toy_image(), oracle::CollisionKind::same_color,
                                                  1000 + i, 20000);
    if (!pair)
      continue;
    ++same_found;
    const auto t = build_table_from_starts(kToy, p, { pair->start_a, pair->start_b });
    same_ok += t.table.size() == 1 && t.report.merged == 1 &&
               t.table.record(0).start == std::min(pair->start_a, pair->start_b);
  }
  for (int i = 0; i < 20; ++i) {
    TableParams p = TableParams::fixed_mode(24, 8, 8);
    p.reduction_seed = 200 + i;
    const auto pair = oracle::find_collision_pair(p, toy_image(),
                                                  oracle::CollisionKind::cross_color, 2000 + i,
                                                  20000);
    if (!pair)
      continue;
    ++cross_found;
    const auto t = build_table_from_starts(kToy, p, { pair->start_a, pair->start_b });
    cross_ok += t.table.size() == 2 && t.report.merged == 0;
  }
  std::ostringstream d;
  d << "same-color " << same_ok << "/" << same_found << " merged to one record, cross-color "
    << cross_ok << "/" << cross_found << " kept two ends";
  return { same_found == 20 && same_ok == 20 && cross_found == 20 && cross_ok == 20, d.str() };
}

// 10. Storage round trip, header corruption, shard merge.
Outcome
storage()
{
  const fs::path dir = fs::temp_directory_path() / ("a5tmto_acc_st_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto p = TableParams::fixed_mode(24, 8, 8);
  p.reduction_seed = 10;
  p.table_id = 3;
  StartSampler sampler(10, 24);
  const auto table = build_table(kToy, p, 3000, sampler).table;
  const auto path = dir / "rt.a5rt";
  write_table(path, table);
  bool round_trip;
  {
    const TableFile f(path, Validation::full);
    round_trip = f.params() == p && f.load_records() == table.records();
    write_table(dir / "rt2.a5rt", f.to_table());
  }
  round_trip = round_trip && slurp(path) == slurp(dir / "rt2.a5rt");

  const std::string good = slurp(path);
  std::uint64_t corruptions = 0, detected = 0;
  for (std::size_t i = 0; i < kHeaderSize; ++i) {
    for (int x = 1; x < 256; ++x) {
      std::string bad = good;
      bad[i] = static_cast<char>(bad[i] ^ x);
      std::ofstream(path, std::ios::binary | std::ios::trunc) << bad;
      ++corruptions;
      try {
        TableFile f(path);
      } catch (const StoreError&) {
        ++detected;
      }
    }
  }

  int merges_ok = 0;
  for (int fixture = 0; fixture < 3; ++fixture) {
    std::vector<fs::path> shards;
    std::vector<ChainRecord> all;
    for (int s = 0; s < 4; ++s) {
      StartSampler ss(1000 * fixture + s, 24);
      const auto shard = build_table(kToy, p, 500 + 100 * s, ss).table;
      shards.push_back(dir / ("shard" + std::to_string(s) + ".a5rt"));
      write_table(shards.back(), shard);
      all.insert(all.end(), shard.records().begin(), shard.records().end());
    }
    detail::sort_and_dedup(all);
    merge_shards(shards, dir / "merged.a5rt");
    const TableFile merged(dir / "merged.a5rt", Validation::full);
    merges_ok += merged.load_records() == all && merged.params() == p;
  }
  fs::remove_all(dir);
  std::ostringstream d;
  d << "round trip " << (round_trip ? "identical" : "DIFFERS") << "; " << detected << "/"
    << corruptions << " single-byte header corruptions detected; " << merges_ok
    << "/3 four-shard merges equal the single sort";
  return { round_trip && detected == corruptions && merges_ok == 3, d.str() };
}

// 11. Byte-identical generation across runs and worker counts.
Outcome
determinism()
{
  const fs::path dir = fs::temp_directory_path() / ("a5tmto_acc_gen_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  int identical = 0, compared = 0;
  for (const char* mode : { "fixed", "dp" }) {
    std::vector<fs::path> runs;
    for (const char* workers : { "1", "4", "1" }) {
      const fs::path out = dir / (std::string(mode) + "_" + std::to_string(runs.size()));
      std::ostringstream o, e;
      const int code = cli::run({ "generate", "--cipher", "toy:7,8,9", "--mode", mode,
                                  "--colors", "4", "--steps", "8", "--dp-bits", "5", "--chains",
                                  "2000", "--tables", "2", "--seed", "11", "--workers", workers,
                                  "--out", out.string() },
                                o, e);
      if (code != 0)
        return { false, "generate failed: " + e.str() };
      runs.push_back(out);
    }
    for (const char* name : { "table_t0.a5rt", "table_t1.a5rt" }) {
      const auto ref = slurp(runs[0] / name);
      for (std::size_t r = 1; r < runs.size(); ++r) {
        ++compared;
        identical += !ref.empty() && slurp(runs[r] / name) == ref;
      }
    }
  }
  fs::remove_all(dir);
  return { identical == compared,
           std::to_string(identical) + "/" + std::to_string(compared) +
             " file pairs byte-identical (workers 1 vs 4, rerun)" };
}

} // namespace

int
main()
{
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
    { "cipher known-answer stability", known_answers },
    { "back-clock completeness", backclock_completeness },
    { "key-recovery round trip", key_recovery },
    { "dual-path chain equality", dual_path },
    { "coverage exactness", coverage_exactness },
    { "success probability at reduced scale", success_rate },
    { "rainbow lookup cost bound", lookup_cost },
    { "distinguished-point postcondition", dp_postcondition },
    { "merge correctness", merge_correctness },
    { "storage bit-exactness", storage },
    { "generation determinism", determinism },
  };
  int failed = 0;
  int n = 0;
  for (const auto& [name, fn] : criteria) {
    ++n;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = { false, std::string("exception: ") + e.what() };
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << n << " " << name << ": " << o.detail
              << std::endl;
  }
  return failed ? 1 : 0;
}
