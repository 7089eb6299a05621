#include "fedacross/bytes.hpp"

#include <bit>
#include <sstream>

namespace fedacross {

std::uint64_t bits_of(double v) { return std::bit_cast<std::uint64_t>(v); }
double double_of(std::uint64_t bits) { return std::bit_cast<double>(bits); }

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) { u64(bits_of(v)); }

void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  out_.insert(out_.end(), s.begin(), s.end());
}

void ByteWriter::f64s(std::span<const double> values) {
  u32(static_cast<std::uint32_t>(values.size()));
  for (double v : values) f64(v);
}

void ByteWriter::matrix(const Matrix& m) {
  u32(static_cast<std::uint32_t>(m.rows()));
  u32(static_cast<std::uint32_t>(m.cols()));
  for (double v : m.data()) f64(v);
}

void ByteReader::need(std::size_t n) const {
  if (bytes_.size() - pos_ < n) {
    std::ostringstream os;
    os << "truncated payload: need " << n << " bytes at offset " << pos_ << ", have "
       << bytes_.size() - pos_;
    throw Error(ErrorCode::Serialization, os.str());
  }
}

std::uint8_t ByteReader::u8() {
  need(1);
  return bytes_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
  return v;
}

double ByteReader::f64() { return double_of(u64()); }

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
  pos_ += n;
  return s;
}

Vector ByteReader::f64s() {
  const std::uint32_t n = u32();
  need(static_cast<std::size_t>(n) * 8);
  Vector v(n);
  for (auto& x : v) x = f64();
  return v;
}

Matrix ByteReader::matrix() {
  const std::uint32_t rows = u32();
  const std::uint32_t cols = u32();
  const std::size_t count = static_cast<std::size_t>(rows) * cols;
  need(count * 8);
  Vector data(count);
  for (auto& x : data) x = f64();
  return Matrix(rows, cols, std::move(data));
}

void ByteReader::expect_done(const char* what) const {
  if (!done()) {
    std::ostringstream os;
    os << what << ": " << remaining() << " trailing bytes";
    throw Error(ErrorCode::Serialization, os.str());
  }
}

}  // namespace fedacross
