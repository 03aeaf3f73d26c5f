#include "diag/serialize.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace diag {

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(std::string_view s) {
  u64(s.size());
  buf_.append(s);
}

void ByteWriter::f64s(std::span<const double> values) {
  u64(values.size());
  for (double v : values) f64(v);
}

void ByteWriter::matrix(const Matrix& m) {
  u64(m.rows);
  u64(m.cols);
  for (double v : m.data) f64(v);
}

void ByteReader::need(std::size_t n) const {
  if (data_.size() - pos_ < n) throw std::runtime_error("artifact: truncated data");
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
  pos_ += 8;
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
  const auto n = u64();
  need(n);
  std::string s(data_.substr(pos_, n));
  pos_ += n;
  return s;
}

std::vector<double> ByteReader::f64s() {
  const auto n = u64();
  need(n * 8);
  std::vector<double> out(n);
  for (auto& v : out) v = f64();
  return out;
}

Matrix ByteReader::matrix() {
  const auto r = u64();
  const auto c = u64();
  need(r * c * 8);
  Matrix m(r, c);
  for (auto& v : m.data) v = f64();
  return m;
}

const std::string& ArtifactContainer::get(const std::string& name) const {
  const auto it = sections_.find(name);
  if (it == sections_.end()) throw std::runtime_error("artifact: missing section '" + name + "'");
  return it->second;
}

std::vector<std::string> ArtifactContainer::names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : sections_) out.push_back(k);
  return out;
}

std::string ArtifactContainer::encode() const {
  ByteWriter w;
  w.u64(sections_.size());
  for (const auto& [name, payload] : sections_) {
    w.str(name);
    w.str(payload);
  }
  return std::string(kMagic) + w.take();
}

ArtifactContainer ArtifactContainer::decode(std::string_view bytes) {
  if (bytes.substr(0, kMagic.size()) != kMagic) throw std::runtime_error("artifact: bad magic header");
  ByteReader r(bytes.substr(kMagic.size()));
  ArtifactContainer out;
  const auto n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    auto name = r.str();
    out.sections_[name] = r.str();
  }
  if (!r.done()) throw std::runtime_error("artifact: trailing bytes");
  return out;
}

void ArtifactContainer::save(const std::string& path) const { write_file(path, encode()); }

ArtifactContainer ArtifactContainer::load(const std::string& path) { return decode(read_file(path)); }

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, std::string_view bytes) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  // Write-then-rename so readers never observe a partial file.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + path);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace diag
