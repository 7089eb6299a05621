#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedacross/numerics.hpp"

namespace fedacross {

using Bytes = std::vector<std::uint8_t>;

/// Little-endian writer for binary payloads. Doubles are stored as their
/// IEEE-754 bit patterns so round trips are exact.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void str(std::string_view s);
  /// Length-prefixed sequence of doubles.
  void f64s(std::span<const double> values);
  void matrix(const Matrix& m);
  void raw(std::span<const std::uint8_t> bytes) { out_.insert(out_.end(), bytes.begin(), bytes.end()); }

  const Bytes& bytes() const& noexcept { return out_; }
  Bytes bytes() && noexcept { return std::move(out_); }

 private:
  Bytes out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();
  Vector f64s();
  Matrix matrix();

  bool done() const noexcept { return pos_ == bytes_.size(); }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  /// Throws unless every byte has been consumed.
  void expect_done(const char* what) const;

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t bits_of(double v);
double double_of(std::uint64_t bits);

}  // namespace fedacross
