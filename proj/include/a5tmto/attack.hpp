#pragma once

#include "a5tmto/cipher.hpp"
#include "a5tmto/table_store.hpp"
#include "a5tmto/tmto.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

// Online phase: keystream windows in, internal states (and keys) out.
namespace a5tmto {

struct KeystreamSample
{
  word window = 0;
  std::uint64_t clock_offset = 0;
  std::uint64_t source_tag = 0;
};

class BurstTooShort : public std::invalid_argument
{
public:
  BurstTooShort(std::size_t have, unsigned need)
    : std::invalid_argument("BurstTooShort: burst of " + std::to_string(have) +
                            " bits is shorter than the state width " + std::to_string(need))
  {}
};

inline word
window_at(const Bits& bits, std::size_t offset, unsigned width)
{
  word w = 0;
  for (unsigned i = 0; i < width; ++i)
    w |= word{ bits[offset + i] } << i;
  return w;
}

// All sliding state-width windows of a burst; window i starts i clocks after
// the state that produced the burst.
inline std::vector<KeystreamSample>
derive_samples(const Bits& burst, const CipherSpec& spec, std::uint64_t source_tag = 0)
{
  const unsigned width = spec.state_width();
  if (burst.size() < width)
    throw BurstTooShort(burst.size(), width);
  std::vector<KeystreamSample> out;
  out.reserve(burst.size() - width + 1);
  for (std::size_t i = 0; i + width <= burst.size(); ++i)
    out.push_back({ window_at(burst, i, width), i, source_tag });
  return out;
}

struct LookupStats
{
  std::uint64_t walk_evals = 0;  // forward images spent walking to chain ends
  std::uint64_t regen_evals = 0; // forward images spent regenerating hit chains
  std::uint64_t lookups = 0;     // end-column searches
  std::uint64_t false_alarms = 0;
  std::uint64_t hits = 0; // verified candidates handed to the visitor

  std::uint64_t f_evals() const { return walk_evals + regen_evals; }

  LookupStats& operator+=(const LookupStats& o)
  {
    walk_evals += o.walk_evals;
    regen_evals += o.regen_evals;
    lookups += o.lookups;
    false_alarms += o.false_alarms;
    hits += o.hits;
    return *this;
  }
};

// Worst-case walk cost of one sample against one table, excluding chain
// regeneration after end hits.
inline std::uint64_t
lookup_cost_bound(const TableParams& p)
{
  const std::uint64_t seg =
    p.mode == ChainMode::fixed ? p.steps_per_color : p.max_segment_steps;
  return seg * std::uint64_t{ p.n_colors } * (p.n_colors + 1) / 2;
}

namespace detail {

inline bool
finish_color_regen(const CipherSpec& spec,
                   const TableParams& p,
                   std::uint32_t c,
                   word& x,
                   LookupStats& st)
{
  std::uint32_t done = 1;
  while (!p.is_distinguished(x)) {
    if (done >= p.max_segment_steps)
      return false;
    x = step(spec, p, c, x);
    ++st.regen_evals;
    ++done;
  }
  return true;
}

} // namespace detail

// Searches one table for a state whose forward image is `window`.
// Hypothesis colors run from the last to the first; for each one the window
// is reduced, walked to a chain end and looked up. End hits are regenerated
// and checked against the window, so `visit(x, color)` only ever sees
// verified preimages. Returning true from the visitor stops the search.
template<RecordTable T, class Visitor>
LookupStats
lookup_sample(const CipherSpec& spec, const T& table, word window, Visitor&& visit)
{
  LookupStats st;
  const TableParams& p = table.params();
  if (table.size() == 0)
    return st;

  const bool fixed = p.mode == ChainMode::fixed;

  // Completes the current color from a value that has already taken `done`
  // steps into it; false if a DP segment overruns.
  auto finish_color = [&](std::uint32_t c, word& y, std::uint32_t done) {
    if (fixed) {
      for (std::uint32_t k = done; k < p.steps_per_color; ++k) {
        y = step(spec, p, c, y);
        ++st.walk_evals;
      }
      return true;
    }
    while (!p.is_distinguished(y)) {
      if (done >= p.max_segment_steps)
        return false;
      y = step(spec, p, c, y);
      ++st.walk_evals;
      ++done;
    }
    return true;
  };

  for (std::uint32_t j = p.n_colors; j-- > 0;) {
    word y = reduction(p, j, window);
    bool alive = finish_color(j, y, 1);
    for (std::uint32_t c = j + 1; alive && c < p.n_colors; ++c) {
      if (fixed) {
        alive = finish_color(c, y, 0);
      } else {
        y = step(spec, p, c, y);
        ++st.walk_evals;
        alive = finish_color(c, y, 1);
      }
    }
    if (!alive)
      continue;

    ++st.lookups;
    const auto start = find_by_end(table, y);
    if (!start)
      continue;

    // Regenerate up to the hypothesized color.
    word x = *start;
    bool ok = true;
    for (std::uint32_t c = 0; ok && c < j; ++c) {
      if (fixed) {
        for (std::uint32_t k = 0; k < p.steps_per_color; ++k) {
          x = step(spec, p, c, x);
          ++st.regen_evals;
        }
      } else {
        x = step(spec, p, c, x);
        ++st.regen_evals;
        ok = detail::finish_color_regen(spec, p, c, x, st);
      }
    }
    std::optional<word> found;
    if (ok && fixed) {
      ++st.regen_evals;
      if (forward_image(spec, x) == window)
        found = x;
    } else if (ok) {
      for (std::uint32_t k = 0; k < p.max_segment_steps; ++k) {
        const word fx = forward_image(spec, x);
        ++st.regen_evals;
        if (fx == window) {
          found = x;
          break;
        }
        x = reduction(p, j, fx);
        if (p.is_distinguished(x))
          break;
      }
    }
    if (!found) {
      ++st.false_alarms;
      continue;
    }
    ++st.hits;
    if (visit(*found, j))
      break;
  }
  return st;
}

// Every verified preimage the table yields for the window.
template<RecordTable T>
std::vector<word>
lookup_all(const CipherSpec& spec, const T& table, word window, LookupStats* stats = nullptr)
{
  std::vector<word> out;
  const auto st = lookup_sample(spec, table, window, [&](word x, std::uint32_t) {
    out.push_back(x);
    return false;
  });
  if (stats)
    *stats += st;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline double
predict_success(double coverage, double state_space, double n_samples)
{
  if (n_samples <= 0.0 || coverage <= 0.0)
    return 0.0;
  if (coverage >= state_space)
    return 1.0;
  return -std::expm1(n_samples * std::log1p(-coverage / state_space));
}

enum class SampleStatus
{
  skipped,
  found,
  not_found,
};

inline const char*
to_string(SampleStatus s)
{
  switch (s) {
    case SampleStatus::found:
      return "found";
    case SampleStatus::not_found:
      return "not_found";
    case SampleStatus::skipped:
      break;
  }
  return "skipped";
}

struct SampleOutcome
{
  SampleStatus status = SampleStatus::skipped;
  std::uint64_t false_alarms = 0;
  std::uint64_t rejected_preimages = 0; // verified by the window, refuted by other samples
};

struct AttackOptions
{
  bool want_key = false;
  FrameNumber frame{};
  std::size_t max_key_candidates = std::size_t{ 1 } << 16;
  bool stop_at_first = true; // else collect every verified hit of the winning (sample, table)
};

struct AttackReport
{
  bool success = false;
  std::vector<SampleOutcome> samples;
  LookupStats lookup;
  std::uint64_t verify_evals = 0; // windows recomputed while checking rollbacks
  std::optional<std::size_t> hit_sample;
  std::optional<std::size_t> hit_table;
  std::vector<word> found_states;           // packed, at the sample's clock offset
  std::vector<CipherState> post_setup_states;
  std::vector<SessionKey> keys;
  bool keys_truncated = false;
  double seconds = 0.0;

  std::uint64_t f_evals() const { return lookup.f_evals() + verify_evals; }
};

namespace detail {

// Rolls a found state back to the post-setup state and keeps the
// candidates that reproduce every sample from the same source.
inline std::vector<CipherState>
verified_rollback(const CipherSpec& spec,
                  std::span<const KeystreamSample> samples,
                  const KeystreamSample& hit,
                  word found,
                  std::uint64_t& evals)
{
  const unsigned width = spec.state_width();
  std::uint64_t reach = 0;
  for (const auto& s : samples)
    if (s.source_tag == hit.source_tag)
      reach = std::max(reach, s.clock_offset + width);

  std::vector<CipherState> out;
  for (const auto& cand : rollback(spec, unpack(spec, found), hit.clock_offset)) {
    const Bits ks = keystream(spec, cand, reach);
    bool ok = true;
    for (const auto& s : samples) {
      if (s.source_tag != hit.source_tag)
        continue;
      ++evals;
      if (window_at(ks, s.clock_offset, width) != s.window) {
        ok = false;
        break;
      }
    }
    if (ok)
      out.push_back(cand);
  }
  return out;
}

} // namespace detail

// Samples outer, tables inner; stops at the first (sample, table) pair that
// yields a state consistent with all samples of its source.
template<RecordTable T>
AttackReport
attack(const CipherSpec& spec,
       std::span<const KeystreamSample> samples,
       std::span<const T> tables,
       const AttackOptions& opt = {})
{
  for (const auto& t : tables)
    check_compatible(spec, t.params());
  const auto t0 = std::chrono::steady_clock::now();
  AttackReport report;
  report.samples.resize(samples.size());

  for (std::size_t si = 0; si < samples.size() && !report.success; ++si) {
    const auto& sample = samples[si];
    auto& outcome = report.samples[si];
    outcome.status = SampleStatus::not_found;
    for (std::size_t ti = 0; ti < tables.size() && !report.success; ++ti) {
      const auto st =
        lookup_sample(spec, tables[ti], sample.window, [&](word x, std::uint32_t) {
          auto states = detail::verified_rollback(spec, samples, sample, x, report.verify_evals);
          if (states.empty()) {
            ++outcome.rejected_preimages;
            return false;
          }
          report.success = true;
          report.found_states.push_back(x);
          for (auto& s : states)
            report.post_setup_states.push_back(s);
          return opt.stop_at_first;
        });
      report.lookup += st;
      outcome.false_alarms += st.false_alarms;
      if (report.success) {
        outcome.status = SampleStatus::found;
        report.hit_sample = si;
        report.hit_table = ti;
      }
    }
  }

  auto& ps = report.post_setup_states;
  std::sort(ps.begin(), ps.end(), [&](const CipherState& a, const CipherState& b) {
    return pack(spec, a) < pack(spec, b);
  });
  ps.erase(std::unique(ps.begin(), ps.end()), ps.end());

  if (report.success && opt.want_key) {
    for (const auto& s : ps) {
      auto rec = recover_key(spec, s, opt.frame, opt.max_key_candidates);
      report.keys_truncated = report.keys_truncated || rec.truncated;
      report.keys.insert(report.keys.end(), rec.keys.begin(), rec.keys.end());
    }
    std::sort(report.keys.begin(), report.keys.end());
    report.keys.erase(std::unique(report.keys.begin(), report.keys.end()), report.keys.end());
  }
  report.seconds =
    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// key=value rendering for scripts.
inline std::string
format_report(const CipherSpec& spec, const AttackReport& r)
{
  std::ostringstream os;
  os << "status=" << (r.success ? "hit" : "nohit") << "\n";
  std::size_t attempted = 0;
  for (const auto& s : r.samples)
    attempted += s.status != SampleStatus::skipped;
  os << "samples=" << r.samples.size() << "\n";
  os << "samples_tried=" << attempted << "\n";
  if (r.hit_sample)
    os << "hit_sample=" << *r.hit_sample << "\n";
  if (r.hit_table)
    os << "hit_table=" << *r.hit_table << "\n";
  os << "f_evals=" << r.f_evals() << "\n";
  os << "walk_evals=" << r.lookup.walk_evals << "\n";
  os << "regen_evals=" << r.lookup.regen_evals << "\n";
  os << "verify_evals=" << r.verify_evals << "\n";
  os << "lookups=" << r.lookup.lookups << "\n";
  os << "false_alarms=" << r.lookup.false_alarms << "\n";
  for (word x : r.found_states)
    os << "state=" << format_hex(x, spec.state_width()) << "\n";
  for (const auto& s : r.post_setup_states)
    os << "post_setup_state=" << format_hex(pack(spec, s), spec.state_width()) << "\n";
  for (const auto& k : r.keys)
    os << "key=" << format_hex(k.kc, spec.key_bits()) << "\n";
  if (r.keys_truncated)
    os << "keys_truncated=1\n";
  os << "wall_seconds=" << r.seconds << "\n";
  return os.str();
}

} // namespace a5tmto
