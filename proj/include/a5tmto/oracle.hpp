#pragma once

#include "a5tmto/attack.hpp"
#include "a5tmto/cipher.hpp"
#include "a5tmto/tmto.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

// Ground truth for small state spaces. Chain walks here go through an
// exhaustive forward-image table and their own reduction arithmetic, never
// through tmto::step, so the two can be checked against each other.
namespace a5tmto::oracle {

class ImageTable
{
public:
  ImageTable(const CipherSpec& spec, unsigned workers = 1, unsigned guard = kEnumerationGuardBits)
    : width_(spec.state_width())
  {
    if (width_ > guard)
      throw WidthExceedsGuard(width_, guard);
    const std::uint64_t n = std::uint64_t{ 1 } << width_;
    images_.resize(n);
    const std::uint64_t block = 1 << 16;
    const std::uint64_t blocks = (n + block - 1) / block;
    a5tmto::detail::parallel_for(blocks, workers, [&](std::size_t b) {
      const std::uint64_t lo = b * block;
      const std::uint64_t hi = std::min(n, lo + block);
      for (std::uint64_t x = lo; x < hi; ++x)
        images_[x] = static_cast<std::uint32_t>(forward_image(spec, x));
    });
  }

  unsigned width() const { return width_; }
  std::uint64_t size() const { return images_.size(); }
  word operator[](word x) const { return images_[x]; }

private:
  unsigned width_;
  std::vector<std::uint32_t> images_;
};

inline ImageTable
build_image_table(const CipherSpec& spec, unsigned workers = 1)
{
  return ImageTable(spec, workers);
}

namespace detail {

inline word
finalizer(word z)
{
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

inline word
color_constant(const TableParams& p, std::uint64_t color)
{
  const word mixed_index = p.table_id * 0x100000000ull + color;
  return finalizer(p.reduction_seed ^ mixed_index);
}

} // namespace detail

struct OracleChain
{
  std::vector<word> values;
  std::vector<std::uint32_t> colors;
  std::vector<std::uint32_t> steps;
  word end = 0;
  bool rejected = false;
};

// Chain re-walk from first principles: x <- (image[x] xor K_color) & mask.
inline OracleChain
walk(const TableParams& p, const ImageTable& image, word start)
{
  OracleChain ch;
  const word mask = p.state_width >= 64 ? ~word{ 0 } : ((word{ 1 } << p.state_width) - 1);
  const word dp_mask = (word{ 1 } << p.dp_bits) - 1;
  word x = start & mask;
  for (std::uint32_t c = 0; c < p.n_colors; ++c) {
    const word k = detail::color_constant(p, c);
    std::uint32_t s = 0;
    while (true) {
      ch.values.push_back(x);
      ch.colors.push_back(c);
      ch.steps.push_back(s);
      x = (image[x] ^ k) & mask;
      ++s;
      if (p.mode == ChainMode::fixed) {
        if (s == p.steps_per_color)
          break;
      } else {
        if ((x & dp_mask) == 0)
          break;
        if (s == p.max_segment_steps) {
          ch.rejected = true;
          return ch;
        }
      }
    }
  }
  ch.end = x;
  return ch;
}

inline bool
recoverable(const TableParams& p, std::uint32_t step_in_color)
{
  return p.mode == ChainMode::dp || step_in_color == 0;
}

struct TableRef
{
  TableParams params;
  std::span<const ChainRecord> records;
};

// Distinct recoverable states over the union of several tables.
inline std::uint64_t
exact_coverage(std::span<const TableRef> tables, const ImageTable& image)
{
  std::vector<bool> seen(image.size(), false);
  std::uint64_t count = 0;
  for (const auto& t : tables) {
    if (t.params.state_width != image.width())
      throw std::invalid_argument("table width differs from image table width");
    for (const auto& r : t.records) {
      const auto ch = walk(t.params, image, r.start);
      for (std::size_t i = 0; i < ch.values.size(); ++i) {
        if (!recoverable(t.params, ch.steps[i]) || seen[ch.values[i]])
          continue;
        seen[ch.values[i]] = true;
        ++count;
      }
    }
  }
  return count;
}

inline std::uint64_t
exact_coverage(const TableParams& params,
               std::span<const ChainRecord> records,
               const ImageTable& image)
{
  const TableRef ref{ params, records };
  return exact_coverage(std::span<const TableRef>(&ref, 1), image);
}

enum class CollisionKind
{
  same_color,  // chains meet at the same color (and step, in FIXED mode)
  cross_color, // a value shared at different colors
};

struct CollisionPair
{
  word start_a = 0;
  word start_b = 0;
  std::uint32_t color_a = 0;
  std::uint32_t step_a = 0;
  std::uint32_t color_b = 0;
  std::uint32_t step_b = 0;
};

// Randomized search over up to `max_chains` chains from seeded distinct
// starts. For same_color the returned point is where the two chains first
// coincide.
inline std::optional<CollisionPair>
find_collision_pair(const TableParams& p,
                    const ImageTable& image,
                    CollisionKind kind,
                    std::uint64_t seed,
                    std::size_t max_chains)
{
  struct Hit
  {
    std::size_t chain;
    std::uint32_t color;
    std::uint32_t step;
  };
  std::unordered_multimap<word, Hit> index;
  std::vector<word> starts;
  std::mt19937_64 rng(seed);
  const word mask = (p.state_width >= 64) ? ~word{ 0 } : ((word{ 1 } << p.state_width) - 1);
  std::unordered_map<word, bool> used;

  for (std::size_t n = 0; n < max_chains && used.size() < image.size(); ++n) {
    word start;
    do {
      start = rng() & mask;
    } while (used.count(start));
    used[start] = true;
    const auto ch = walk(p, image, start);
    if (ch.rejected)
      continue;
    const std::size_t me = starts.size();
    starts.push_back(start);
    for (std::size_t i = 0; i < ch.values.size(); ++i) {
      const word v = ch.values[i];
      const auto range = index.equal_range(v);
      for (auto it = range.first; it != range.second; ++it) {
        const Hit& h = it->second;
        if (kind == CollisionKind::cross_color && h.color == ch.colors[i])
          continue;
        if (kind == CollisionKind::same_color && p.mode == ChainMode::fixed &&
            h.step != ch.steps[i])
          continue;
        if (kind == CollisionKind::same_color && h.color != ch.colors[i])
          continue;
        return CollisionPair{ starts[h.chain], start,        h.color,
                              h.step,          ch.colors[i], ch.steps[i] };
      }
    }
    for (std::size_t i = 0; i < ch.values.size(); ++i)
      index.emplace(ch.values[i], Hit{ me, ch.colors[i], ch.steps[i] });
  }
  return std::nullopt;
}

// preimages[t] = every s with clock(s) == t, by exhaustive enumeration.
inline std::vector<std::vector<word>>
exhaustive_preimages(const CipherSpec& spec, unsigned guard = 20)
{
  if (spec.state_width() > guard)
    throw WidthExceedsGuard(spec.state_width(), guard);
  const std::uint64_t n = std::uint64_t{ 1 } << spec.state_width();
  std::vector<std::vector<word>> pre(n);
  for (word s = 0; s < n; ++s)
    pre[pack(spec, clock(spec, unpack(spec, s)).state)].push_back(s);
  return pre;
}

struct ExperimentConfig
{
  TableParams params; // table_id is overwritten per table
  std::size_t n_tables = 1;
  std::uint64_t chains_per_table = 0;
  std::size_t n_targets = 0;
  std::size_t samples_per_target = 1;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  // Latest clock offset a sample may come from; defaults to the last window
  // of a burst.
  std::optional<std::size_t> max_offset;
  bool collect_all = false; // see AttackOptions::stop_at_first
};

struct ExperimentResult
{
  double empirical = 0.0;
  double predicted = 0.0;
  double std_error = 0.0;
  std::uint64_t coverage = 0;
  std::uint64_t state_space = 0;
  std::uint64_t successes = 0;
  std::uint64_t targets = 0;
  std::uint64_t f_evals = 0;
  std::uint64_t false_alarms = 0;
  std::uint64_t table_records = 0;

  // |empirical - predicted| in standard errors; 0 when both are certain.
  double deviation() const
  {
    const double d = std::abs(empirical - predicted);
    if (std_error == 0.0)
      return d == 0.0 ? 0.0 : INFINITY;
    return d / std_error;
  }
};

// Builds tables with the production path, measures their exact coverage
// here, then attacks random post-setup states through samples taken at
// random burst offsets and compares the hit rate with predict_success.
inline ExperimentResult
success_rate_experiment(const CipherSpec& spec,
                        const ExperimentConfig& cfg,
                        const ImageTable& image)
{
  const unsigned width = spec.state_width();
  if (image.width() != width)
    throw std::invalid_argument("image table does not match the cipher");

  std::vector<Table> tables;
  for (std::size_t t = 0; t < cfg.n_tables && cfg.chains_per_table > 0; ++t) {
    TableParams p = cfg.params;
    p.state_width = width;
    p.table_id = t;
    StartSampler sampler(mix64(cfg.seed ^ (0x5851F42D4C957F2Dull * (t + 1))), width);
    tables.push_back(build_table(spec, p, cfg.chains_per_table, sampler, cfg.workers).table);
  }
  std::vector<TableRef> refs;
  ExperimentResult res;
  for (const auto& t : tables) {
    refs.push_back({ t.params(), t.records() });
    res.table_records += t.size();
  }
  res.coverage = exact_coverage(refs, image);
  res.state_space = image.size();
  res.targets = cfg.n_targets;

  const std::size_t max_offset = cfg.max_offset.value_or(
    spec.burst_bits() >= width ? spec.burst_bits() - width : 0);
  const std::size_t per_target = std::min(cfg.samples_per_target, max_offset + 1);
  res.predicted = predict_success(static_cast<double>(res.coverage),
                                  static_cast<double>(res.state_space),
                                  static_cast<double>(per_target));
  res.std_error =
    cfg.n_targets ? std::sqrt(res.predicted * (1.0 - res.predicted) / cfg.n_targets) : 0.0;

  std::mt19937_64 rng(mix64(cfg.seed ^ 0xD1B54A32D192ED03ull));
  std::vector<std::size_t> offsets(max_offset + 1);
  for (std::size_t t = 0; t < cfg.n_targets; ++t) {
    const CipherState target = unpack(spec, rng() & low_mask(width));
    for (std::size_t i = 0; i < offsets.size(); ++i)
      offsets[i] = i;
    for (std::size_t i = 0; i < per_target; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, offsets.size() - 1);
      std::swap(offsets[i], offsets[pick(rng)]);
    }
    const Bits ks = keystream(spec, target, max_offset + width);
    std::vector<KeystreamSample> samples;
    for (std::size_t i = 0; i < per_target; ++i)
      samples.push_back({ window_at(ks, offsets[i], width), offsets[i], t });

    AttackOptions opt;
    opt.stop_at_first = !cfg.collect_all;
    const auto report = attack<Table>(spec, samples, tables, opt);
    res.f_evals += report.f_evals();
    res.false_alarms += report.lookup.false_alarms;
    const bool hit = std::find(report.post_setup_states.begin(),
                               report.post_setup_states.end(),
                               target) != report.post_setup_states.end();
    res.successes += hit;
  }
  res.empirical = cfg.n_targets ? static_cast<double>(res.successes) / cfg.n_targets : 0.0;
  return res;
}

} // namespace a5tmto::oracle
