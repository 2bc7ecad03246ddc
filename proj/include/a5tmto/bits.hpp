#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace a5tmto {

// Packed register states, keystream windows and chain values all live in one
// 64-bit word; the meaningful width is carried alongside.
using word = std::uint64_t;

// One keystream bit per element (0 or 1), in production order.
using Bits = std::vector<std::uint8_t>;

constexpr word
low_mask(unsigned bits) noexcept
{
  return bits >= 64 ? ~word{ 0 } : (word{ 1 } << bits) - 1;
}

constexpr unsigned
parity(word x) noexcept
{
  return static_cast<unsigned>(std::popcount(x)) & 1u;
}

// 64-bit avalanche finalizer (the splitmix64 output stage).
constexpr word
mix64(word x) noexcept
{
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

class HexParseError : public std::invalid_argument
{
public:
  HexParseError(const std::string& what, std::string token)
    : std::invalid_argument(what)
    , token_(std::move(token))
  {}

  const std::string& token() const noexcept { return token_; }

private:
  std::string token_;
};

inline int
hex_digit_value(char c) noexcept
{
  if (c >= '0' && c <= '9')
    return c - '0';
  if (c >= 'a' && c <= 'f')
    return c - 'a' + 10;
  if (c >= 'A' && c <= 'F')
    return c - 'A' + 10;
  return -1;
}

constexpr unsigned
hex_width(unsigned bits) noexcept
{
  return (bits + 3) / 4;
}

// Fixed-width lowercase hex of the low `bits` bits of v.
inline std::string
format_hex(word v, unsigned bits)
{
  static constexpr char digits[] = "0123456789abcdef";
  const unsigned n = hex_width(bits);
  std::string out(n, '0');
  for (unsigned i = 0; i < n; ++i)
    out[n - 1 - i] = digits[(v >> (4 * i)) & 0xf];
  return out;
}

// Parses an (optionally 0x-prefixed) hex number that must fit in `bits` bits.
inline word
parse_hex(std::string_view text, unsigned bits)
{
  const std::string token(text);
  std::string_view s = text;
  if (s.size() >= 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X'))
    s.remove_prefix(2);
  if (s.empty())
    throw HexParseError("empty hex value", token);
  word v = 0;
  for (char c : s) {
    const int d = hex_digit_value(c);
    if (d < 0)
      throw HexParseError("malformed hex value '" + token + "'", token);
    if (v >> 60)
      throw HexParseError("hex value '" + token + "' exceeds 64 bits", token);
    v = (v << 4) | static_cast<word>(d);
  }
  if (v & ~low_mask(bits))
    throw HexParseError("hex value '" + token + "' exceeds " + std::to_string(bits) + " bits",
                        token);
  return v;
}

// Bit strings render MSB-first within each hex digit: bit 0 of the stream is
// the top bit of the first digit. The tail digit is zero padded.
inline std::string
bits_to_hex(const Bits& bits)
{
  static constexpr char digits[] = "0123456789abcdef";
  std::string out((bits.size() + 3) / 4, '0');
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i])
      out[i / 4] = digits[hex_digit_value(out[i / 4]) | (8 >> (i % 4))];
  }
  return out;
}

inline Bits
hex_to_bits(std::string_view text, std::size_t nbits)
{
  const std::string token(text);
  std::string_view s = text;
  if (s.size() >= 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X'))
    s.remove_prefix(2);
  if (s.size() * 4 < nbits)
    throw HexParseError("bit string '" + token + "' shorter than " + std::to_string(nbits) +
                          " bits",
                        token);
  Bits out(nbits, 0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const int d = hex_digit_value(s[i]);
    if (d < 0)
      throw HexParseError("malformed hex value '" + token + "'", token);
    for (unsigned b = 0; b < 4; ++b) {
      const std::size_t pos = i * 4 + b;
      if (pos < nbits)
        out[pos] = static_cast<std::uint8_t>((d >> (3 - b)) & 1);
    }
  }
  return out;
}

inline std::string
bits_to_string(const Bits& bits)
{
  std::string out;
  out.reserve(bits.size());
  for (auto b : bits)
    out.push_back(b ? '1' : '0');
  return out;
}

} // namespace a5tmto
