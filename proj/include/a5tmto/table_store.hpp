#pragma once

#include "a5tmto/tmto.hpp"

#include <boost/crc.hpp>

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

// On-disk rainbow tables.
//
// Layout (all integers little-endian):
//
//   offset size field
//        0    4 magic "A5RT"
//        4    2 format_version
//        6    1 state_width
//        7    1 mode (0 = FIXED, 1 = DP)
//        8    4 n_colors
//       12    4 steps_per_color
//       16    4 dp_bits
//       20    4 max_segment_steps
//       24    8 table_id
//       32    8 reduction_seed
//       40    8 record_count
//       48    4 CRC-32 of bytes [0, 48)
//       52      records: end (8) then start (8), strictly ascending by end
namespace a5tmto {

inline constexpr std::array<char, 4> kTableMagic{ 'A', '5', 'R', 'T' };
inline constexpr std::uint16_t kTableFormatVersion = 1;
inline constexpr std::size_t kHeaderSize = 52;
inline constexpr std::size_t kRecordSize = 16;

enum class StoreErrc
{
  io_error,
  bad_magic,
  version_mismatch,
  checksum_mismatch,
  unsorted_records,
  truncated,
  params_mismatch,
  invalid_records,
};

inline const char*
to_string(StoreErrc e)
{
  switch (e) {
    case StoreErrc::io_error:
      return "IoError";
    case StoreErrc::bad_magic:
      return "BadMagic";
    case StoreErrc::version_mismatch:
      return "VersionMismatch";
    case StoreErrc::checksum_mismatch:
      return "ChecksumMismatch";
    case StoreErrc::unsorted_records:
      return "UnsortedRecords";
    case StoreErrc::truncated:
      return "TruncatedFile";
    case StoreErrc::params_mismatch:
      return "ParamsMismatch";
    case StoreErrc::invalid_records:
      return "InvalidRecords";
  }
  return "Unknown";
}

class StoreError : public std::runtime_error
{
public:
  StoreError(StoreErrc code, const std::string& path, std::uint64_t offset, const std::string& msg)
    : std::runtime_error(std::string(to_string(code)) + ": " + path + " @" +
                         std::to_string(offset) + ": " + msg)
    , code_(code)
    , offset_(offset)
  {}

  StoreErrc code() const noexcept { return code_; }
  std::uint64_t offset() const noexcept { return offset_; }

private:
  StoreErrc code_;
  std::uint64_t offset_;
};

namespace detail {

template<class T>
void
put_le(unsigned char* p, T v)
{
  for (std::size_t i = 0; i < sizeof(T); ++i)
    p[i] = static_cast<unsigned char>(static_cast<std::uint64_t>(v) >> (8 * i));
}

template<class T>
T
get_le(const unsigned char* p)
{
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

inline std::uint32_t
crc32(const unsigned char* data, std::size_t n)
{
  boost::crc_32_type crc;
  crc.process_bytes(data, n);
  return crc.checksum();
}

inline std::array<unsigned char, kHeaderSize>
encode_header(const TableParams& p, std::uint64_t record_count)
{
  std::array<unsigned char, kHeaderSize> h{};
  std::memcpy(h.data(), kTableMagic.data(), 4);
  put_le<std::uint16_t>(h.data() + 4, kTableFormatVersion);
  h[6] = static_cast<unsigned char>(p.state_width);
  h[7] = static_cast<unsigned char>(p.mode);
  put_le<std::uint32_t>(h.data() + 8, p.n_colors);
  put_le<std::uint32_t>(h.data() + 12, p.steps_per_color);
  put_le<std::uint32_t>(h.data() + 16, p.dp_bits);
  put_le<std::uint32_t>(h.data() + 20, p.max_segment_steps);
  put_le<std::uint64_t>(h.data() + 24, p.table_id);
  put_le<std::uint64_t>(h.data() + 32, p.reduction_seed);
  put_le<std::uint64_t>(h.data() + 40, record_count);
  put_le<std::uint32_t>(h.data() + 48, crc32(h.data(), 48));
  return h;
}

inline void
encode_record(unsigned char* out, const ChainRecord& r)
{
  put_le<std::uint64_t>(out, r.end);
  put_le<std::uint64_t>(out + 8, r.start);
}

inline ChainRecord
decode_record(const unsigned char* in)
{
  return { get_le<std::uint64_t>(in), get_le<std::uint64_t>(in + 8) };
}

// Writes to a sibling temporary and renames into place on commit().
class AtomicWriter
{
public:
  explicit AtomicWriter(std::filesystem::path path)
    : path_(std::move(path))
    , tmp_(path_.string() + ".tmp." + std::to_string(::getpid()))
  {
    out_.open(tmp_, std::ios::binary | std::ios::trunc);
    if (!out_)
      throw StoreError(StoreErrc::io_error, tmp_.string(), 0, "cannot open for writing");
  }

  AtomicWriter(const AtomicWriter&) = delete;
  AtomicWriter& operator=(const AtomicWriter&) = delete;

  ~AtomicWriter()
  {
    if (!committed_) {
      out_.close();
      std::error_code ec;
      std::filesystem::remove(tmp_, ec);
    }
  }

  std::ofstream& stream() { return out_; }

  void write(const unsigned char* data, std::size_t n)
  {
    out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_)
      throw StoreError(StoreErrc::io_error, tmp_.string(), 0, "write failed");
  }

  void commit()
  {
    out_.flush();
    out_.close();
    if (!out_)
      throw StoreError(StoreErrc::io_error, tmp_.string(), 0, "close failed");
    std::error_code ec;
    std::filesystem::rename(tmp_, path_, ec);
    if (ec)
      throw StoreError(StoreErrc::io_error, path_.string(), 0, "rename failed: " + ec.message());
    committed_ = true;
  }

private:
  std::filesystem::path path_;
  std::filesystem::path tmp_;
  std::ofstream out_;
  bool committed_ = false;
};

} // namespace detail

struct WriteSummary
{
  std::uint64_t records = 0;
  std::uint64_t bytes = 0;
};

inline std::string
table_filename(const std::string& prefix, std::uint64_t table_id)
{
  return prefix + "_t" + std::to_string(table_id) + ".a5rt";
}

// Records must be strictly ascending by end; checked before anything is
// written.
inline WriteSummary
write_table(const std::filesystem::path& path,
            const TableParams& params,
            std::span<const ChainRecord> records)
{
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i - 1].end >= records[i].end)
      throw StoreError(StoreErrc::invalid_records,
                       path.string(),
                       kHeaderSize + i * kRecordSize,
                       "records not strictly ascending by end at index " + std::to_string(i));
  }
  detail::AtomicWriter w(path);
  const auto header = detail::encode_header(params, records.size());
  w.write(header.data(), header.size());
  std::vector<unsigned char> buf;
  constexpr std::size_t kBatch = 4096;
  for (std::size_t i = 0; i < records.size(); i += kBatch) {
    const std::size_t n = std::min(kBatch, records.size() - i);
    buf.resize(n * kRecordSize);
    for (std::size_t j = 0; j < n; ++j)
      detail::encode_record(buf.data() + j * kRecordSize, records[i + j]);
    w.write(buf.data(), buf.size());
  }
  w.commit();
  return { records.size(), kHeaderSize + records.size() * kRecordSize };
}

inline WriteSummary
write_table(const std::filesystem::path& path, const Table& table)
{
  return write_table(path, table.params(), table.records());
}

enum class Validation
{
  full,
  sampled, // adjacent-pair spot checks above kFullValidationLimit records
};

inline constexpr std::uint64_t kFullValidationLimit = std::uint64_t{ 1 } << 22;

// Read-only, memory-mapped table file.
class TableFile
{
public:
  TableFile() = default;

  explicit TableFile(const std::filesystem::path& path, Validation v = Validation::sampled)
    : path_(path.string())
  {
    fd_ = ::open(path_.c_str(), O_RDONLY);
    if (fd_ < 0)
      throw StoreError(StoreErrc::io_error, path_, 0, "cannot open");
    struct stat st
    {};
    if (::fstat(fd_, &st) != 0) {
      close();
      throw StoreError(StoreErrc::io_error, path_, 0, "cannot stat");
    }
    size_ = static_cast<std::size_t>(st.st_size);
    if (size_ > 0) {
      void* m = ::mmap(nullptr, size_, PROT_READ, MAP_PRIVATE, fd_, 0);
      if (m == MAP_FAILED) {
        close();
        throw StoreError(StoreErrc::io_error, path_, 0, "mmap failed");
      }
      data_ = static_cast<const unsigned char*>(m);
    }
    try {
      parse_header();
      check_sorted(v);
    } catch (...) {
      close();
      throw;
    }
  }

  TableFile(TableFile&& o) noexcept { *this = std::move(o); }

  TableFile& operator=(TableFile&& o) noexcept
  {
    if (this != &o) {
      close();
      path_ = std::move(o.path_);
      params_ = o.params_;
      fd_ = std::exchange(o.fd_, -1);
      data_ = std::exchange(o.data_, nullptr);
      size_ = std::exchange(o.size_, 0);
      count_ = std::exchange(o.count_, 0);
    }
    return *this;
  }

  TableFile(const TableFile&) = delete;
  TableFile& operator=(const TableFile&) = delete;

  ~TableFile() { close(); }

  const TableParams& params() const { return params_; }
  std::size_t size() const { return count_; }
  const std::string& path() const { return path_; }

  ChainRecord record(std::size_t i) const
  {
    return detail::decode_record(data_ + kHeaderSize + i * kRecordSize);
  }

  word end_at(std::size_t i) const
  {
    return detail::get_le<std::uint64_t>(data_ + kHeaderSize + i * kRecordSize);
  }

  std::vector<ChainRecord> load_records() const
  {
    std::vector<ChainRecord> out(count_);
    for (std::size_t i = 0; i < count_; ++i)
      out[i] = record(i);
    return out;
  }

  Table to_table() const { return Table(params_, load_records()); }

private:
  void close()
  {
    if (data_)
      ::munmap(const_cast<unsigned char*>(data_), size_);
    if (fd_ >= 0)
      ::close(fd_);
    data_ = nullptr;
    fd_ = -1;
  }

  void parse_header()
  {
    if (size_ < kHeaderSize)
      throw StoreError(StoreErrc::truncated,
                       path_,
                       size_,
                       "expected at least " + std::to_string(kHeaderSize) + " header bytes, got " +
                         std::to_string(size_));
    if (std::memcmp(data_, kTableMagic.data(), 4) != 0)
      throw StoreError(StoreErrc::bad_magic, path_, 0, "not a table file");
    const auto version = detail::get_le<std::uint16_t>(data_ + 4);
    if (version != kTableFormatVersion)
      throw StoreError(StoreErrc::version_mismatch,
                       path_,
                       4,
                       "format version " + std::to_string(version) + ", expected " +
                         std::to_string(kTableFormatVersion));
    const auto stored = detail::get_le<std::uint32_t>(data_ + 48);
    const auto actual = detail::crc32(data_, 48);
    if (stored != actual)
      throw StoreError(StoreErrc::checksum_mismatch, path_, 48, "header checksum mismatch");

    params_.state_width = data_[6];
    params_.mode = static_cast<ChainMode>(data_[7]);
    params_.n_colors = detail::get_le<std::uint32_t>(data_ + 8);
    params_.steps_per_color = detail::get_le<std::uint32_t>(data_ + 12);
    params_.dp_bits = detail::get_le<std::uint32_t>(data_ + 16);
    params_.max_segment_steps = detail::get_le<std::uint32_t>(data_ + 20);
    params_.table_id = detail::get_le<std::uint64_t>(data_ + 24);
    params_.reduction_seed = detail::get_le<std::uint64_t>(data_ + 32);
    count_ = detail::get_le<std::uint64_t>(data_ + 40);

    const std::uint64_t expected = kHeaderSize + count_ * kRecordSize;
    if (size_ != expected)
      throw StoreError(StoreErrc::truncated,
                       path_,
                       size_,
                       "expected " + std::to_string(expected) + " bytes, got " +
                         std::to_string(size_));
  }

  void check_pair(std::size_t i) const
  {
    if (end_at(i - 1) >= end_at(i))
      throw StoreError(StoreErrc::unsorted_records,
                       path_,
                       kHeaderSize + i * kRecordSize,
                       "record " + std::to_string(i) + " not above its predecessor");
  }

  void check_sorted(Validation v) const
  {
    if (count_ < 2)
      return;
    if (v == Validation::full || count_ <= kFullValidationLimit) {
      for (std::size_t i = 1; i < count_; ++i)
        check_pair(i);
      return;
    }
    const std::size_t stride = count_ / 4096;
    for (std::size_t i = 1; i < count_; i += stride)
      check_pair(i);
    check_pair(count_ - 1);
  }

  std::string path_;
  TableParams params_;
  int fd_ = -1;
  const unsigned char* data_ = nullptr;
  std::size_t size_ = 0;
  std::size_t count_ = 0;
};

inline TableFile
read_table(const std::filesystem::path& path, Validation v = Validation::sampled)
{
  return TableFile(path, v);
}

// Binary search on the sorted end column.
template<RecordTable T>
std::optional<word>
find_by_end(const T& table, word end)
{
  std::size_t lo = 0;
  std::size_t hi = table.size();
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    const word e = table.end_at(mid);
    if (e == end)
      return table.record(mid).start;
    if (e < end)
      lo = mid + 1;
    else
      hi = mid;
  }
  return std::nullopt;
}

struct MergeSummary
{
  std::uint64_t records_in = 0;
  std::uint64_t records_out = 0;
  std::uint64_t merged = 0;
};

// k-way streaming merge of individually sorted shards into one file.
// Duplicate ends keep the smallest start.
inline MergeSummary
merge_shards(std::span<const std::filesystem::path> shards, const std::filesystem::path& out)
{
  if (shards.empty())
    throw std::invalid_argument("merge_shards needs at least one shard");
  std::vector<TableFile> files;
  files.reserve(shards.size());
  for (const auto& s : shards) {
    files.emplace_back(s, Validation::full);
    if (!(files.back().params() == files.front().params()))
      throw StoreError(StoreErrc::params_mismatch,
                       s.string(),
                       0,
                       "shard parameters differ from " + files.front().path());
  }

  struct Head
  {
    ChainRecord rec;
    std::size_t shard;
    std::size_t index;
    bool operator>(const Head& o) const
    {
      return rec != o.rec ? rec > o.rec : shard > o.shard;
    }
  };
  std::priority_queue<Head, std::vector<Head>, std::greater<>> heap;
  MergeSummary summary;
  for (std::size_t s = 0; s < files.size(); ++s) {
    summary.records_in += files[s].size();
    if (files[s].size() > 0)
      heap.push({ files[s].record(0), s, 0 });
  }

  detail::AtomicWriter w(out);
  // Placeholder header; rewritten once the count is known.
  auto header = detail::encode_header(files.front().params(), 0);
  w.write(header.data(), header.size());

  std::vector<unsigned char> buf;
  std::optional<word> last_end;
  while (!heap.empty()) {
    const Head h = heap.top();
    heap.pop();
    if (h.index + 1 < files[h.shard].size())
      heap.push({ files[h.shard].record(h.index + 1), h.shard, h.index + 1 });
    if (last_end && *last_end == h.rec.end) {
      ++summary.merged;
      continue;
    }
    last_end = h.rec.end;
    buf.resize(buf.size() + kRecordSize);
    detail::encode_record(buf.data() + buf.size() - kRecordSize, h.rec);
    ++summary.records_out;
    if (buf.size() >= (std::size_t{ 1 } << 16)) {
      w.write(buf.data(), buf.size());
      buf.clear();
    }
  }
  if (!buf.empty())
    w.write(buf.data(), buf.size());

  header = detail::encode_header(files.front().params(), summary.records_out);
  w.stream().seekp(0);
  w.write(header.data(), header.size());
  w.commit();
  return summary;
}

} // namespace a5tmto
