#include "langgrasp/io/binary.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "langgrasp/error.hpp"

namespace langgrasp::io {

static_assert(std::endian::native == std::endian::little, "DGYS encoding assumes a little-endian host");

Writer::Writer(Kind kind) {
  buf_.insert(buf_.end(), kMagic, kMagic + 4);
  u32(kFormatVersion);
  u32(static_cast<std::uint32_t>(kind));
}

void Writer::u32(std::uint32_t v) {
  unsigned char b[4];
  std::memcpy(b, &v, 4);
  buf_.insert(buf_.end(), b, b + 4);
}

void Writer::u64(std::uint64_t v) {
  unsigned char b[8];
  std::memcpy(b, &v, 8);
  buf_.insert(buf_.end(), b, b + 8);
}

void Writer::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void Writer::str(const std::string& s) {
  LANGGRASP_REQUIRE(s.size() <= std::numeric_limits<std::uint32_t>::max(), "DGYS: string too long");
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void Writer::f64s(const std::vector<double>& v) {
  LANGGRASP_REQUIRE(v.size() <= std::numeric_limits<std::uint32_t>::max(), "DGYS: array too long");
  u32(static_cast<std::uint32_t>(v.size()));
  for (double x : v) f64(x);
}

void Writer::save(const std::filesystem::path& path) const { write_file(path, buf_.data(), buf_.size()); }

Reader::Reader(std::vector<unsigned char> bytes, Kind kind, std::string what) : buf_(std::move(bytes)), what_(std::move(what)) {
  const unsigned char* m = take(4);
  if (std::memcmp(m, kMagic, 4) != 0) throw IoError(what_ + ": not a DGYS file");
  const std::uint32_t version = u32();
  if (version != kFormatVersion) throw IoError(what_ + ": unsupported DGYS version " + std::to_string(version));
  const std::uint32_t k = u32();
  if (k != static_cast<std::uint32_t>(kind))
    throw IoError(what_ + ": DGYS kind " + std::to_string(k) + ", expected " + std::to_string(static_cast<std::uint32_t>(kind)));
}

Reader Reader::open(const std::filesystem::path& path, Kind kind) { return Reader(read_file(path), kind, path.string()); }

const unsigned char* Reader::take(std::size_t n) {
  if (buf_.size() - pos_ < n) throw IoError(what_ + ": truncated DGYS payload");
  const unsigned char* p = buf_.data() + pos_;
  pos_ += n;
  return p;
}

std::uint32_t Reader::u32() {
  std::uint32_t v;
  std::memcpy(&v, take(4), 4);
  return v;
}

std::uint64_t Reader::u64() {
  std::uint64_t v;
  std::memcpy(&v, take(8), 8);
  return v;
}

double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string Reader::str() {
  const std::uint32_t n = u32();
  const unsigned char* p = take(n);
  return std::string(reinterpret_cast<const char*>(p), n);
}

std::vector<double> Reader::f64s() {
  const std::uint32_t n = u32();
  if ((buf_.size() - pos_) / 8 < n) throw IoError(what_ + ": truncated DGYS array");
  std::vector<double> v(n);
  for (auto& x : v) x = f64();
  return v;
}

void Reader::finish() const {
  if (!done()) throw IoError(what_ + ": trailing bytes after DGYS payload");
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("cannot read " + path.string());
  return out;
}

void write_file(const std::filesystem::path& path, const void* data, std::size_t size) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace langgrasp::io
