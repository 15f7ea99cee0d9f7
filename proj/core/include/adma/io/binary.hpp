#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace adma::io {

/// Little-endian byte sink; contents are written to disk with `save`.
class BinaryWriter {
 public:
  void bytes(std::string_view raw);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(std::span<const double> values);
  /// u32 length prefix followed by the raw characters.
  void str(std::string_view s);

  [[nodiscard]] const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian reader; throws FormatError on truncation.
class BinaryReader {
 public:
  explicit BinaryReader(std::vector<std::uint8_t> data, std::string source = "<memory>");
  static BinaryReader open(const std::filesystem::path& path);

  void expect_magic(std::string_view magic);
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::vector<double> f64s(std::size_t count);
  std::string str();

  [[nodiscard]] bool at_end() const noexcept { return pos_ == data_.size(); }
  [[nodiscard]] const std::string& source() const noexcept { return source_; }

 private:
  void need(std::size_t n) const;

  std::vector<std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string source_;
};

}  // namespace adma::io
