#include "diag/matrix.hpp"

#include <cmath>
#include <stdexcept>

namespace diag {

Standardizer Standardizer::fit(const Matrix& x) {
  if (x.rows == 0) throw std::invalid_argument("Standardizer::fit: no rows");
  Standardizer s;
  s.mean.assign(x.cols, 0.0);
  s.scale.assign(x.cols, 0.0);
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t c = 0; c < x.cols; ++c) s.mean[c] += x(r, c);
  }
  for (auto& m : s.mean) m /= static_cast<double>(x.rows);
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t c = 0; c < x.cols; ++c) {
      const double d = x(r, c) - s.mean[c];
      s.scale[c] += d * d;
    }
  }
  for (auto& v : s.scale) {
    v = std::sqrt(v / static_cast<double>(x.rows));
    if (!(v > 1e-12)) v = 1.0;
  }
  return s;
}

void Standardizer::apply(std::span<const double> in, std::span<double> out) const {
  if (in.size() != mean.size() || out.size() != mean.size()) {
    throw std::invalid_argument("Standardizer::apply: expected " + std::to_string(mean.size()) + " features, got " +
                                std::to_string(in.size()));
  }
  for (std::size_t c = 0; c < in.size(); ++c) out[c] = (in[c] - mean[c]) / scale[c];
}

std::vector<double> Standardizer::apply(std::span<const double> in) const {
  std::vector<double> out(in.size());
  apply(in, out);
  return out;
}

Matrix Standardizer::apply(const Matrix& x) const {
  Matrix out(x.rows, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) apply(x.row(r), out.row(r));
  return out;
}

}  // namespace diag
