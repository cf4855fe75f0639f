#pragma once

// DGYS binary container. Layout: "DGYS", u32 version, u32 kind, then a
// payload of little-endian fields written in a fixed order by the owner:
//   u32 / u64        raw little-endian integers
//   f64              IEEE-754 binary64, little-endian
//   string           u32 byte length, bytes (no terminator)
//   f64 array        u32 count, count * f64

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace langgrasp::io {

inline constexpr char kMagic[4] = {'D', 'G', 'Y', 'S'};
inline constexpr std::uint32_t kFormatVersion = 1;

enum class Kind : std::uint32_t { record = 1, checkpoint = 2 };

class Writer {
 public:
  explicit Writer(Kind kind);

  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void str(const std::string& s);
  void f64s(const std::vector<double>& v);

  const std::vector<unsigned char>& bytes() const { return buf_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<unsigned char> buf_;
};

// Throws IoError on truncation, bad magic, unsupported version or wrong kind.
class Reader {
 public:
  Reader(std::vector<unsigned char> bytes, Kind kind, std::string what);
  static Reader open(const std::filesystem::path& path, Kind kind);

  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();
  std::vector<double> f64s();
  bool done() const { return pos_ == buf_.size(); }
  // Throws unless every byte was consumed.
  void finish() const;

 private:
  const unsigned char* take(std::size_t n);

  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::vector<unsigned char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const void* data, std::size_t size);

}  // namespace langgrasp::io
