#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "diag/matrix.hpp"

namespace diag {

/// Little-endian binary writer used by model artifacts.
class ByteWriter {
 public:
  void u64(std::uint64_t v);
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v);
  void str(std::string_view s);
  void f64s(std::span<const double> values);
  void matrix(const Matrix& m);

  const std::string& bytes() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : data_(bytes) {}

  std::uint64_t u64();
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64();
  std::string str();
  std::vector<double> f64s();
  Matrix matrix();

  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const;
  std::string_view data_;
  std::size_t pos_ = 0;
};

/// Container of named binary sections, prefixed with the magic `DAMDL1`.
/// Layout: magic, u64 section count, then per section u64 name length, name,
/// u64 payload length, payload.
class ArtifactContainer {
 public:
  static constexpr std::string_view kMagic = "DAMDL1";

  void put(const std::string& name, std::string payload) { sections_[name] = std::move(payload); }
  bool has(const std::string& name) const { return sections_.count(name) != 0; }
  const std::string& get(const std::string& name) const;
  std::vector<std::string> names() const;

  std::string encode() const;
  static ArtifactContainer decode(std::string_view bytes);

  void save(const std::string& path) const;
  static ArtifactContainer load(const std::string& path);

 private:
  std::map<std::string, std::string> sections_;
};

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace diag
