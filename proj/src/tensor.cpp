#include "bbe/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "bbe/error.hpp"
#include "bbe/rng.hpp"

namespace bbe {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension error";
    case ErrorKind::Config: return "config error";
    case ErrorKind::State: return "state error";
    case ErrorKind::Label: return "label error";
    case ErrorKind::Input: return "input error";
    case ErrorKind::Format: return "format error";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Ingest: return "ingest error";
    case ErrorKind::SplitViolation: return "split-violation error";
    case ErrorKind::Split: return "split error";
    case ErrorKind::Metric: return "metric error";
    case ErrorKind::Report: return "report error";
    case ErrorKind::Io: return "I/O error";
    case ErrorKind::Invariant: return "invariant violation";
    case ErrorKind::Numerical: return "numerical error";
  }
  return "error";
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    fail(ErrorKind::Dimension, "tensor shape " + shape_str(shape_) + " does not match " +
                                   std::to_string(data_.size()) + " elements");
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::size_t r = rows.size();
  std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) fail(ErrorKind::Dimension, "ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool Tensor::bit_equal(const Tensor& other) const noexcept {
  if (shape_ != other.shape_) return false;
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(data_[i]) != std::bit_cast<std::uint64_t>(other.data_[i])) {
      return false;
    }
  }
  return true;
}

void require_finite(const Tensor& t, const char* where) {
  if (!t.all_finite()) fail(ErrorKind::Numerical, std::string("non-finite value in ") + where);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::Dimension, "max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " +
                                   shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::uint64_t Rng::below(std::uint64_t n) noexcept {
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

double Rng::normal() noexcept {
  // Box-Muller, one output per call.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

double Rng::truncated_normal(double std) noexcept {
  double x = normal();
  while (std::abs(x) > 2.0) x = normal();
  return x * std;
}

Rng Rng::fork(std::uint64_t salt) const noexcept {
  Rng tmp(state_ ^ (salt * 0xD1B54A32D192ED03ULL));
  return Rng(tmp.next_u64());
}

}  // namespace bbe
