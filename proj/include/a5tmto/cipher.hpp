#pragma once

#include "a5tmto/bits.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

// A5/1 and the family of reduced ciphers sharing its shape: three LFSRs with
// majority-rule clocking and an XOR of the register top bits as output.
namespace a5tmto {

struct RegisterSpec
{
  unsigned length = 0;
  std::vector<unsigned> taps;
  unsigned clock_bit = 0;

  bool operator==(const RegisterSpec&) const = default;
};

class CipherSpec
{
public:
  CipherSpec(std::array<RegisterSpec, 3> regs,
             unsigned key_bits,
             unsigned frame_bits,
             unsigned mix_clocks,
             unsigned burst_bits)
    : regs_(std::move(regs))
    , key_bits_(key_bits)
    , frame_bits_(frame_bits)
    , mix_clocks_(mix_clocks)
    , burst_bits_(burst_bits)
  {
    unsigned offset = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& r = regs_[i];
      if (r.length == 0)
        throw std::invalid_argument("register length must be positive");
      if (r.clock_bit >= r.length)
        throw std::invalid_argument("clock bit outside register " + std::to_string(i + 1));
      word taps = 0;
      for (unsigned t : r.taps) {
        if (t >= r.length)
          throw std::invalid_argument("tap outside register " + std::to_string(i + 1));
        taps |= word{ 1 } << t;
      }
      tap_mask_[i] = taps;
      reg_mask_[i] = low_mask(r.length);
      offset_[i] = offset;
      offset += r.length;
    }
    if (offset > 64)
      throw std::invalid_argument("state width " + std::to_string(offset) + " exceeds 64 bits");
    width_ = offset;
    if (key_bits_ > 64 || frame_bits_ > 64)
      throw std::invalid_argument("key and frame must fit in 64 bits");
  }

  // Canonical A5/1: R1 x^19+x^18+x^17+x^14+1, R2 x^22+x^21+1,
  // R3 x^23+x^22+x^21+x^8+1, clock bits 8/10/10.
  static CipherSpec a5_1()
  {
    return CipherSpec({ RegisterSpec{ 19, { 13, 16, 17, 18 }, 8 },
                        RegisterSpec{ 22, { 20, 21 }, 10 },
                        RegisterSpec{ 23, { 7, 20, 21, 22 }, 10 } },
                      64,
                      22,
                      100,
                      114);
  }

  // Reduced member of the family: taps on the top two bits, clock bit in the
  // middle, a key as wide as the state.
  static CipherSpec toy(unsigned l1, unsigned l2, unsigned l3)
  {
    auto reg = [](unsigned len) {
      if (len < 2)
        throw std::invalid_argument("toy registers need at least 2 bits");
      return RegisterSpec{ len, { len - 2, len - 1 }, len / 2 };
    };
    const unsigned width = l1 + l2 + l3;
    return CipherSpec({ reg(l1), reg(l2), reg(l3) }, std::min(width, 64u), 22, 100, 114);
  }

  CipherSpec with_mix_clocks(unsigned n) const
  {
    CipherSpec copy = *this;
    copy.mix_clocks_ = n;
    return copy;
  }

  const RegisterSpec& reg(std::size_t i) const { return regs_[i]; }
  unsigned length(std::size_t i) const { return regs_[i].length; }
  unsigned clock_bit(std::size_t i) const { return regs_[i].clock_bit; }
  word tap_mask(std::size_t i) const { return tap_mask_[i]; }
  word reg_mask(std::size_t i) const { return reg_mask_[i]; }
  unsigned offset(std::size_t i) const { return offset_[i]; }

  unsigned state_width() const { return width_; }
  unsigned key_bits() const { return key_bits_; }
  unsigned frame_bits() const { return frame_bits_; }
  unsigned mix_clocks() const { return mix_clocks_; }
  unsigned burst_bits() const { return burst_bits_; }

  std::string describe() const
  {
    return "regs=" + std::to_string(regs_[0].length) + "," + std::to_string(regs_[1].length) +
           "," + std::to_string(regs_[2].length) + " key_bits=" + std::to_string(key_bits_) +
           " frame_bits=" + std::to_string(frame_bits_) + " mix=" + std::to_string(mix_clocks_);
  }

  bool operator==(const CipherSpec& o) const
  {
    return regs_ == o.regs_ && key_bits_ == o.key_bits_ && frame_bits_ == o.frame_bits_ &&
           mix_clocks_ == o.mix_clocks_ && burst_bits_ == o.burst_bits_;
  }

private:
  std::array<RegisterSpec, 3> regs_;
  std::array<word, 3> tap_mask_{};
  std::array<word, 3> reg_mask_{};
  std::array<unsigned, 3> offset_{};
  unsigned width_ = 0;
  unsigned key_bits_;
  unsigned frame_bits_;
  unsigned mix_clocks_;
  unsigned burst_bits_;
};

struct CipherState
{
  std::array<word, 3> r{};

  bool operator==(const CipherState&) const = default;
};

struct SessionKey
{
  word kc = 0;
  auto operator<=>(const SessionKey&) const = default;
};

struct FrameNumber
{
  word fn = 0;
  auto operator<=>(const FrameNumber&) const = default;
};

struct ClockResult
{
  CipherState state;
  unsigned output_bit = 0;
};

constexpr unsigned
majority(unsigned b1, unsigned b2, unsigned b3) noexcept
{
  return (b1 & b2) | (b1 & b3) | (b2 & b3);
}

inline bool
is_valid(const CipherSpec& spec, const CipherState& s) noexcept
{
  for (std::size_t i = 0; i < 3; ++i)
    if (s.r[i] & ~spec.reg_mask(i))
      return false;
  return true;
}

inline word
pack(const CipherSpec& spec, const CipherState& s) noexcept
{
  return s.r[0] | (s.r[1] << spec.offset(1)) | (s.r[2] << spec.offset(2));
}

inline CipherState
unpack(const CipherSpec& spec, word x)
{
  if (x & ~low_mask(spec.state_width()))
    throw std::invalid_argument("packed state has bits above width " +
                                std::to_string(spec.state_width()));
  CipherState s;
  for (std::size_t i = 0; i < 3; ++i)
    s.r[i] = (x >> spec.offset(i)) & spec.reg_mask(i);
  return s;
}

namespace detail {

inline unsigned
clock_bit_of(const CipherSpec& spec, const CipherState& s, std::size_t i) noexcept
{
  return static_cast<unsigned>(s.r[i] >> spec.clock_bit(i)) & 1u;
}

inline word
shift_register(const CipherSpec& spec, std::size_t i, word r, unsigned inject) noexcept
{
  const word fb = parity(r & spec.tap_mask(i)) ^ inject;
  return ((r << 1) | fb) & spec.reg_mask(i);
}

inline unsigned
output_of(const CipherSpec& spec, const CipherState& s) noexcept
{
  unsigned out = 0;
  for (std::size_t i = 0; i < 3; ++i)
    out ^= static_cast<unsigned>(s.r[i] >> (spec.length(i) - 1)) & 1u;
  return out;
}

// Bitmask of registers that move under the majority rule.
inline unsigned
shifting_set(const CipherSpec& spec, const CipherState& s) noexcept
{
  const unsigned c0 = clock_bit_of(spec, s, 0);
  const unsigned c1 = clock_bit_of(spec, s, 1);
  const unsigned c2 = clock_bit_of(spec, s, 2);
  const unsigned m = majority(c0, c1, c2);
  return (c0 == m ? 1u : 0u) | (c1 == m ? 2u : 0u) | (c2 == m ? 4u : 0u);
}

inline CipherState
clock_regular(const CipherSpec& spec, CipherState s, unsigned inject) noexcept
{
  for (std::size_t i = 0; i < 3; ++i)
    s.r[i] = shift_register(spec, i, s.r[i], inject);
  return s;
}

// Predecessors of one register value under a single shift with the given
// injected bit: the discarded top bit is unknown, the new low bit pins it.
inline void
unshift_register(const CipherSpec& spec,
                 std::size_t i,
                 word r,
                 unsigned inject,
                 std::vector<word>& out)
{
  out.clear();
  const unsigned top = spec.length(i) - 1;
  for (word b = 0; b < 2; ++b) {
    const word prev = (r >> 1) | (b << top);
    if (shift_register(spec, i, prev, inject) == r)
      out.push_back(prev);
  }
}

} // namespace detail

inline ClockResult
clock(const CipherSpec& spec, CipherState s) noexcept
{
  const unsigned moving = detail::shifting_set(spec, s);
  for (std::size_t i = 0; i < 3; ++i)
    if (moving & (1u << i))
      s.r[i] = detail::shift_register(spec, i, s.r[i], 0);
  return { s, detail::output_of(spec, s) };
}

inline CipherState
advance(const CipherSpec& spec, CipherState s, std::uint64_t clocks) noexcept
{
  for (std::uint64_t i = 0; i < clocks; ++i)
    s = clock(spec, s).state;
  return s;
}

// State after the key bits only have been loaded (all registers clocked
// regularly, LSB first).
inline CipherState
load_key(const CipherSpec& spec, SessionKey key)
{
  if (key.kc & ~low_mask(spec.key_bits()))
    throw std::invalid_argument("session key exceeds " + std::to_string(spec.key_bits()) +
                                " bits");
  CipherState s;
  for (unsigned i = 0; i < spec.key_bits(); ++i)
    s = detail::clock_regular(spec, s, static_cast<unsigned>(key.kc >> i) & 1u);
  return s;
}

inline CipherState
load_frame(const CipherSpec& spec, CipherState s, FrameNumber frame)
{
  if (frame.fn & ~low_mask(spec.frame_bits()))
    throw std::invalid_argument("frame number exceeds " + std::to_string(spec.frame_bits()) +
                                " bits");
  for (unsigned i = 0; i < spec.frame_bits(); ++i)
    s = detail::clock_regular(spec, s, static_cast<unsigned>(frame.fn >> i) & 1u);
  return s;
}

// Post-setup state: key load, frame load, then mix_clocks discarded
// majority clockings.
inline CipherState
state_from_key(const CipherSpec& spec, SessionKey key, FrameNumber frame)
{
  const CipherState loaded = load_frame(spec, load_key(spec, key), frame);
  return advance(spec, loaded, spec.mix_clocks());
}

inline Bits
keystream(const CipherSpec& spec, CipherState s, std::size_t n)
{
  Bits out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto res = clock(spec, s);
    s = res.state;
    out[i] = static_cast<std::uint8_t>(res.output_bit);
  }
  return out;
}

// The one-way function the tables invert: the first state_width keystream
// bits of a packed state, bit i of the result being keystream bit i.
inline word
forward_image(const CipherSpec& spec, word x)
{
  CipherState s = unpack(spec, x);
  word out = 0;
  const unsigned n = spec.state_width();
  for (unsigned i = 0; i < n; ++i) {
    const auto res = clock(spec, s);
    s = res.state;
    out |= word{ res.output_bit } << i;
  }
  return out;
}

// Every s' with clock(s').state == s. May be empty.
inline std::vector<CipherState>
backclock_candidates(const CipherSpec& spec, const CipherState& s)
{
  std::vector<CipherState> out;
  std::array<std::vector<word>, 3> prev;
  for (unsigned subset : { 3u, 5u, 6u, 7u }) {
    for (std::size_t i = 0; i < 3; ++i) {
      if (subset & (1u << i))
        detail::unshift_register(spec, i, s.r[i], 0, prev[i]);
      else
        prev[i].assign(1, s.r[i]);
    }
    for (word a : prev[0])
      for (word b : prev[1])
        for (word c : prev[2]) {
          const CipherState cand{ { a, b, c } };
          if (detail::shifting_set(spec, cand) == subset)
            out.push_back(cand);
        }
  }
  return out;
}

// All states that reach `s` after exactly `clocks` majority clockings.
inline std::vector<CipherState>
rollback(const CipherSpec& spec, const CipherState& s, std::uint64_t clocks)
{
  std::vector<CipherState> level{ s };
  for (std::uint64_t d = 0; d < clocks && !level.empty(); ++d) {
    std::vector<CipherState> next;
    for (const auto& st : level)
      for (const auto& p : backclock_candidates(spec, st))
        next.push_back(p);
    std::sort(next.begin(), next.end(), [&](const CipherState& a, const CipherState& b) {
      return pack(spec, a) < pack(spec, b);
    });
    next.erase(std::unique(next.begin(), next.end()), next.end());
    level = std::move(next);
  }
  return level;
}

namespace detail {

// Solves pack(load_key(k)) == target over GF(2). The key load is linear in
// the key bits because it starts from the all-zero state.
class KeyLoadSolver
{
public:
  explicit KeyLoadSolver(const CipherSpec& spec)
    : width_(spec.state_width())
    , key_bits_(spec.key_bits())
  {
    columns_.resize(key_bits_);
    for (unsigned j = 0; j < key_bits_; ++j)
      columns_[j] = pack(spec, load_key(spec, SessionKey{ word{ 1 } << j }));
  }

  // Appends solutions to out; returns false if more than `limit` exist.
  bool solve(word target, std::size_t limit, std::vector<word>& out) const
  {
    // rows[i] = (coefficients over key bits, rhs bit) for state bit i.
    std::vector<word> coef(width_, 0);
    std::vector<unsigned> rhs(width_, 0);
    for (unsigned i = 0; i < width_; ++i) {
      for (unsigned j = 0; j < key_bits_; ++j)
        if ((columns_[j] >> i) & 1u)
          coef[i] |= word{ 1 } << j;
      rhs[i] = static_cast<unsigned>(target >> i) & 1u;
    }

    std::vector<int> pivot_row_of(key_bits_, -1);
    unsigned row = 0;
    for (unsigned col = 0; col < key_bits_ && row < width_; ++col) {
      unsigned sel = row;
      while (sel < width_ && !((coef[sel] >> col) & 1u))
        ++sel;
      if (sel == width_)
        continue;
      std::swap(coef[sel], coef[row]);
      std::swap(rhs[sel], rhs[row]);
      for (unsigned i = 0; i < width_; ++i) {
        if (i != row && ((coef[i] >> col) & 1u)) {
          coef[i] ^= coef[row];
          rhs[i] ^= rhs[row];
        }
      }
      pivot_row_of[col] = static_cast<int>(row);
      ++row;
    }
    for (unsigned i = row; i < width_; ++i)
      if (rhs[i])
        return true; // inconsistent: no key loads to this state

    word particular = 0;
    std::vector<word> basis;
    for (unsigned col = 0; col < key_bits_; ++col) {
      if (pivot_row_of[col] >= 0) {
        if (rhs[pivot_row_of[col]])
          particular |= word{ 1 } << col;
        continue;
      }
      // Free column: set it, pivots follow from the reduced rows.
      word v = word{ 1 } << col;
      for (unsigned pc = 0; pc < key_bits_; ++pc)
        if (pivot_row_of[pc] >= 0 && ((coef[pivot_row_of[pc]] >> col) & 1u))
          v |= word{ 1 } << pc;
      basis.push_back(v);
    }

    if (basis.size() >= 64 || (std::size_t{ 1 } << basis.size()) > limit) {
      // Emit what fits so callers still see candidates.
      for (std::size_t m = 0; m < limit; ++m)
        out.push_back(combine(particular, basis, m));
      return false;
    }
    const std::size_t count = std::size_t{ 1 } << basis.size();
    for (std::size_t m = 0; m < count; ++m)
      out.push_back(combine(particular, basis, m));
    return true;
  }

private:
  static word combine(word particular, const std::vector<word>& basis, std::size_t m)
  {
    word v = particular;
    for (std::size_t b = 0; b < basis.size(); ++b)
      if ((m >> b) & 1u)
        v ^= basis[b];
    return v;
  }

  unsigned width_;
  unsigned key_bits_;
  std::vector<word> columns_;
};

} // namespace detail

struct KeyRecovery
{
  std::vector<SessionKey> keys; // ascending
  bool truncated = false;
  std::uint64_t premix_states = 0;
};

// Every key K with state_from_key(K, frame) == state, up to max_candidates.
// Depth-first back-clocking through the mixing phase, exact inversion of the
// frame load, then a linear solve for the key bits.
inline KeyRecovery
recover_key(const CipherSpec& spec,
            const CipherState& state,
            FrameNumber frame,
            std::size_t max_candidates)
{
  if (frame.fn & ~low_mask(spec.frame_bits()))
    throw std::invalid_argument("frame number exceeds " + std::to_string(spec.frame_bits()) +
                                " bits");
  KeyRecovery result;
  const detail::KeyLoadSolver solver(spec);
  std::vector<word> keys;
  std::vector<word> regs[3];

  auto unload_frame = [&](const CipherState& loaded) {
    std::vector<CipherState> level{ loaded };
    for (unsigned i = spec.frame_bits(); i-- > 0;) {
      const unsigned bit = static_cast<unsigned>(frame.fn >> i) & 1u;
      std::vector<CipherState> next;
      for (const auto& s : level) {
        for (std::size_t r = 0; r < 3; ++r)
          detail::unshift_register(spec, r, s.r[r], bit, regs[r]);
        for (word a : regs[0])
          for (word b : regs[1])
            for (word c : regs[2])
              next.push_back(CipherState{ { a, b, c } });
      }
      level = std::move(next);
    }
    return level;
  };

  struct Frame
  {
    CipherState state;
    unsigned depth;
  };
  std::vector<Frame> stack{ { state, 0 } };
  while (!stack.empty() && !result.truncated) {
    const Frame top = stack.back();
    stack.pop_back();
    if (top.depth == spec.mix_clocks()) {
      ++result.premix_states;
      for (const auto& keyed : unload_frame(top.state)) {
        const std::size_t room = max_candidates > keys.size() ? max_candidates - keys.size() : 0;
        if (!solver.solve(pack(spec, keyed), room, keys))
          result.truncated = true;
      }
      continue;
    }
    for (const auto& p : backclock_candidates(spec, top.state))
      stack.push_back({ p, top.depth + 1 });
  }

  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  if (keys.size() > max_candidates) {
    keys.resize(max_candidates);
    result.truncated = true;
  }
  result.keys.reserve(keys.size());
  for (word k : keys)
    result.keys.push_back(SessionKey{ k });
  return result;
}

} // namespace a5tmto
