#pragma once

#include "a5tmto/bits.hpp"
#include "a5tmto/cipher.hpp"

#include <algorithm>
#include <chrono>
#include <concepts>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

// Rainbow chains over the cipher's forward image: colored XOR reductions,
// fixed-length or distinguished-point segments, and table construction.
namespace a5tmto {

enum class ChainMode : std::uint8_t
{
  fixed = 0,
  dp = 1,
};

inline const char*
to_string(ChainMode m)
{
  return m == ChainMode::fixed ? "fixed" : "dp";
}

struct TableParams
{
  std::uint64_t table_id = 0;
  std::uint32_t n_colors = 1;
  std::uint32_t steps_per_color = 1; // FIXED mode
  std::uint32_t dp_bits = 0;         // DP mode
  std::uint32_t max_segment_steps = 0;
  ChainMode mode = ChainMode::fixed;
  unsigned state_width = 0;
  std::uint64_t reduction_seed = 0;

  bool operator==(const TableParams&) const = default;

  word mask() const { return low_mask(state_width); }

  bool is_distinguished(word x) const { return (x & low_mask(dp_bits)) == 0; }

  void validate() const
  {
    if (state_width == 0 || state_width > 64)
      throw std::invalid_argument("state width must be in [1, 64]");
    if (n_colors < 1)
      throw std::invalid_argument("n_colors must be at least 1");
    if (mode == ChainMode::fixed) {
      if (steps_per_color < 1)
        throw std::invalid_argument("steps_per_color must be at least 1");
    } else {
      if (dp_bits < 1 || dp_bits >= state_width)
        throw std::invalid_argument("dp_bits must be in [1, state_width)");
      if (dp_bits >= 32 || max_segment_steps < (std::uint64_t{ 1 } << dp_bits))
        throw std::invalid_argument("max_segment_steps must be at least 2^dp_bits");
    }
  }

  // DP parameters with the default segment cutoff of 2^(dp_bits+4).
  static TableParams dp_mode(unsigned width, std::uint32_t colors, std::uint32_t dp_bits)
  {
    TableParams p;
    p.mode = ChainMode::dp;
    p.state_width = width;
    p.n_colors = colors;
    p.dp_bits = dp_bits;
    p.max_segment_steps = dp_bits + 4 < 32 ? (std::uint32_t{ 1 } << (dp_bits + 4)) : 0xffffffffu;
    return p;
  }

  static TableParams fixed_mode(unsigned width, std::uint32_t colors, std::uint32_t steps)
  {
    TableParams p;
    p.mode = ChainMode::fixed;
    p.state_width = width;
    p.n_colors = colors;
    p.steps_per_color = steps;
    return p;
  }
};

// Only the two ends of a chain are persisted. Ordered by end, then start.
struct ChainRecord
{
  word end = 0;
  word start = 0;

  auto operator<=>(const ChainRecord&) const = default;
};

// A table that can be searched by end value, in memory or on disk.
template<class T>
concept RecordTable = requires(const T& t, std::size_t i) {
  { t.params() } -> std::convertible_to<const TableParams&>;
  { t.size() } -> std::convertible_to<std::size_t>;
  { t.record(i) } -> std::same_as<ChainRecord>;
  { t.end_at(i) } -> std::same_as<word>;
};

class Table
{
public:
  Table() = default;
  Table(TableParams params, std::vector<ChainRecord> records)
    : params_(params)
    , records_(std::move(records))
  {}

  const TableParams& params() const { return params_; }
  std::size_t size() const { return records_.size(); }
  ChainRecord record(std::size_t i) const { return records_[i]; }
  word end_at(std::size_t i) const { return records_[i].end; }
  const std::vector<ChainRecord>& records() const { return records_; }

private:
  TableParams params_;
  std::vector<ChainRecord> records_;
};

inline word
reduction_constant(const TableParams& p, std::uint32_t color)
{
  return mix64(p.reduction_seed ^ ((p.table_id << 32) + color));
}

inline word
reduction(const TableParams& p, std::uint32_t color, word x)
{
  return (x ^ reduction_constant(p, color)) & p.mask();
}

// One chain link: forward image, then the color's reduction.
inline word
step(const CipherSpec& spec, const TableParams& p, std::uint32_t color, word x)
{
  return reduction(p, color, forward_image(spec, x));
}

inline void
check_compatible(const CipherSpec& spec, const TableParams& p)
{
  p.validate();
  if (p.state_width != spec.state_width())
    throw std::invalid_argument("table width " + std::to_string(p.state_width) +
                                " does not match cipher width " +
                                std::to_string(spec.state_width()));
}

// Visits every value that enters the forward image along a chain, with its
// (color, step) coordinates, and returns the end, or nullopt when a DP
// segment overruns max_segment_steps. The visitor sees each input before it
// is stepped.
template<class Visitor>
std::optional<word>
walk_chain(const CipherSpec& spec, const TableParams& p, word start, Visitor&& visit)
{
  word x = start & p.mask();
  for (std::uint32_t c = 0; c < p.n_colors; ++c) {
    if (p.mode == ChainMode::fixed) {
      for (std::uint32_t k = 0; k < p.steps_per_color; ++k) {
        visit(c, k, x);
        x = step(spec, p, c, x);
      }
    } else {
      std::uint32_t k = 0;
      for (;;) {
        visit(c, k, x);
        x = step(spec, p, c, x);
        ++k;
        if (p.is_distinguished(x))
          break;
        if (k >= p.max_segment_steps)
          return std::nullopt;
      }
    }
  }
  return x;
}

// Full transient chain: every forward-image input plus where each color
// begins in `values`.
struct Chain
{
  std::vector<word> values;
  std::vector<std::uint32_t> colors;
  std::vector<std::uint32_t> steps;
  word end = 0;
};

inline std::optional<Chain>
expand_chain(const CipherSpec& spec, const TableParams& p, word start)
{
  Chain chain;
  auto end = walk_chain(spec, p, start, [&](std::uint32_t c, std::uint32_t k, word x) {
    chain.values.push_back(x);
    chain.colors.push_back(c);
    chain.steps.push_back(k);
  });
  if (!end)
    return std::nullopt;
  chain.end = *end;
  return chain;
}

// nullopt is the Rejected outcome (DP segment overflow).
inline std::optional<ChainRecord>
generate_chain(const CipherSpec& spec, const TableParams& p, word start)
{
  auto end = walk_chain(spec, p, start, [](std::uint32_t, std::uint32_t, word) {});
  if (!end)
    return std::nullopt;
  return ChainRecord{ *end, start & p.mask() };
}

// Positions the online search can recover. In DP mode every forward-image
// input is reachable because segment ends are self-identifying; in FIXED
// mode only the first input of each color is, since the search cannot tell
// where inside a color the sample sits without paying per step.
inline bool
is_recoverable(const TableParams& p, std::uint32_t step_in_color)
{
  return p.mode == ChainMode::dp || step_in_color == 0;
}

// Seeded source of distinct chain starts.
class StartSampler
{
public:
  StartSampler(std::uint64_t seed, unsigned width)
    : rng_(seed)
    , mask_(low_mask(width))
    , space_(width >= 64 ? ~std::uint64_t{ 0 } : (std::uint64_t{ 1 } << width))
  {}

  // Next start not handed out before; nullopt once the space is exhausted.
  std::optional<word> next()
  {
    if (seen_.size() >= space_)
      return std::nullopt;
    for (;;) {
      const word x = rng_() & mask_;
      if (seen_.insert(x).second)
        return x;
    }
  }

  std::uint64_t space() const { return space_; }

private:
  std::mt19937_64 rng_;
  word mask_;
  std::uint64_t space_;
  std::unordered_set<word> seen_;
};

struct BuildReport
{
  std::uint64_t requested = 0;
  std::uint64_t generated = 0; // chains that completed
  std::uint64_t rejected = 0;  // DP overflow attempts
  std::uint64_t lost = 0;      // requested chains that ran out of retries
  std::uint64_t merged = 0;    // dropped by end-value dedup
  std::uint64_t final_count = 0;
  std::uint64_t segments = 0;      // DP segments in completed chains
  std::uint64_t segment_steps = 0; // total steps of those segments
  double seconds = 0.0;
};

namespace detail {

template<class Fn>
void
parallel_for(std::size_t n, unsigned workers, Fn&& fn)
{
  workers = std::max(1u, workers);
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi)
      break;
    pool.emplace_back([&fn, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i)
        fn(i);
    });
  }
  for (auto& t : pool)
    t.join();
}

struct ChainOutcome
{
  std::optional<ChainRecord> record;
  std::uint64_t segments = 0;
  std::uint64_t steps = 0;
};

inline ChainOutcome
run_chain(const CipherSpec& spec, const TableParams& p, word start)
{
  ChainOutcome out;
  std::uint32_t last_color = ~0u;
  auto end = walk_chain(spec, p, start, [&](std::uint32_t c, std::uint32_t, word) {
    if (c != last_color) {
      ++out.segments;
      last_color = c;
    }
    ++out.steps;
  });
  if (end)
    out.record = ChainRecord{ *end, start & p.mask() };
  return out;
}

// Sort by (end, start) and keep the smallest start per end.
inline std::uint64_t
sort_and_dedup(std::vector<ChainRecord>& records)
{
  std::sort(records.begin(), records.end());
  const auto before = records.size();
  records.erase(std::unique(records.begin(),
                            records.end(),
                            [](const ChainRecord& a, const ChainRecord& b) { return a.end == b.end; }),
                records.end());
  return before - records.size();
}

} // namespace detail

struct BuiltTable
{
  Table table;
  BuildReport report;
};

inline constexpr unsigned kDpRetryBudget = 4;

// Generates chains for `n_chains` distinct starts drawn from the sampler.
// Rejected DP chains are replaced by fresh draws, up to kDpRetryBudget per
// requested chain. The result does not depend on `workers`.
inline BuiltTable
build_table(const CipherSpec& spec,
            const TableParams& p,
            std::uint64_t n_chains,
            StartSampler& sampler,
            unsigned workers = 1)
{
  check_compatible(spec, p);
  if (n_chains < 1)
    throw std::invalid_argument("n_chains must be at least 1");
  const auto t0 = std::chrono::steady_clock::now();

  BuildReport report;
  report.requested = n_chains;
  std::vector<ChainRecord> records;

  std::vector<word> pending;
  for (std::uint64_t i = 0; i < n_chains; ++i) {
    auto s = sampler.next();
    if (!s)
      break;
    pending.push_back(*s);
  }
  report.lost = n_chains - pending.size();

  for (unsigned round = 0; !pending.empty(); ++round) {
    std::vector<detail::ChainOutcome> outcomes(pending.size());
    detail::parallel_for(pending.size(), workers, [&](std::size_t i) {
      outcomes[i] = detail::run_chain(spec, p, pending[i]);
    });
    std::size_t failed = 0;
    for (const auto& o : outcomes) {
      if (o.record) {
        records.push_back(*o.record);
        ++report.generated;
        report.segments += o.segments;
        report.segment_steps += o.steps;
      } else {
        ++failed;
      }
    }
    report.rejected += failed;
    pending.clear();
    if (round == kDpRetryBudget) {
      report.lost += failed;
      break;
    }
    for (std::size_t i = 0; i < failed; ++i) {
      auto s = sampler.next();
      if (!s) {
        report.lost += failed - i;
        break;
      }
      pending.push_back(*s);
    }
  }

  report.merged = detail::sort_and_dedup(records);
  report.final_count = records.size();
  report.seconds =
    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return { Table(p, std::move(records)), report };
}

// Table from explicit starts; rejected chains are dropped, not retried.
inline BuiltTable
build_table_from_starts(const CipherSpec& spec,
                        const TableParams& p,
                        const std::vector<word>& starts,
                        unsigned workers = 1)
{
  check_compatible(spec, p);
  BuildReport report;
  report.requested = starts.size();
  std::vector<detail::ChainOutcome> outcomes(starts.size());
  detail::parallel_for(starts.size(), workers, [&](std::size_t i) {
    outcomes[i] = detail::run_chain(spec, p, starts[i]);
  });
  std::vector<ChainRecord> records;
  for (const auto& o : outcomes) {
    if (o.record) {
      records.push_back(*o.record);
      ++report.generated;
      report.segments += o.segments;
      report.segment_steps += o.steps;
    } else {
      ++report.rejected;
      ++report.lost;
    }
  }
  report.merged = detail::sort_and_dedup(records);
  report.final_count = records.size();
  return { Table(p, std::move(records)), report };
}

inline constexpr unsigned kEnumerationGuardBits = 28;

class WidthExceedsGuard : public std::invalid_argument
{
public:
  WidthExceedsGuard(unsigned width, unsigned guard)
    : std::invalid_argument("WidthExceedsGuard: state width " + std::to_string(width) +
                            " exceeds enumeration guard of " + std::to_string(guard) + " bits")
  {}
};

// Bitmap over the full state space for exact coverage counting.
class StateSet
{
public:
  explicit StateSet(unsigned width, unsigned guard = kEnumerationGuardBits)
  {
    if (width > guard)
      throw WidthExceedsGuard(width, guard);
    bits_.assign(((std::uint64_t{ 1 } << width) + 63) / 64, 0);
  }

  bool insert(word x)
  {
    auto& w = bits_[x >> 6];
    const word m = word{ 1 } << (x & 63);
    if (w & m)
      return false;
    w |= m;
    ++count_;
    return true;
  }

  bool contains(word x) const { return (bits_[x >> 6] >> (x & 63)) & 1u; }
  std::uint64_t count() const { return count_; }

private:
  std::vector<word> bits_;
  std::uint64_t count_ = 0;
};

// Adds every recoverable state of the table's chains to `set`.
template<RecordTable T>
void
collect_coverage(const CipherSpec& spec, const T& table, StateSet& set)
{
  const auto& p = table.params();
  check_compatible(spec, p);
  for (std::size_t i = 0; i < table.size(); ++i) {
    walk_chain(spec, p, table.record(i).start, [&](std::uint32_t, std::uint32_t k, word x) {
      if (is_recoverable(p, k))
        set.insert(x);
    });
  }
}

// Distinct states the table can recover, by regenerating every chain.
template<RecordTable T>
std::uint64_t
coverage(const CipherSpec& spec, const T& table, unsigned guard = kEnumerationGuardBits)
{
  StateSet set(spec.state_width(), guard);
  collect_coverage(spec, table, set);
  return set.count();
}

} // namespace a5tmto
