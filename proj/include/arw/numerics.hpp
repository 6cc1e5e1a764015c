#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace arw {

// Error categories. The CLI maps these onto its exit-code contract:
// DimensionError/DataError -> 2, NumericError -> 3.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Vector = std::vector<double>;

// Dense row-major matrix of 64-bit reals. Dimensions are fixed at
// construction; every binary op checks agreement.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// C = A * B
Matrix matmul(const Matrix& a, const Matrix& b);
// C = A * B^T
Matrix matmul_transb(const Matrix& a, const Matrix& b);
// C = A^T * B
Matrix matmul_transa(const Matrix& a, const Matrix& b);

double dot(std::span<const double> u, std::span<const double> v);
double norm(std::span<const double> v);

// u.v / (|u||v|). Zero-norm input is an error (NumericError), distinct
// from dimension mismatch (DimensionError).
double cosine_similarity(std::span<const double> u, std::span<const double> v);

// log sum exp with max-shift; empty input is an error.
double log_sum_exp(std::span<const double> values);

// Central finite differences, one probe pair per coordinate. Non-finite f
// at a probe point raises NumericError naming the coordinate.
Vector finite_diff_gradient(const std::function<double(const Vector&)>& f,
                            const Vector& x, double h);

// Counter-based splittable generator (SplitMix64 finalizer over a
// Weyl-sequence counter xored with a per-stream key). Identical
// (seed, stream) pairs reproduce the same draw sequence on any platform;
// see README for the exact constants.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0);

  // Derives an independent stream from this stream's identity and `id`.
  RngStream substream(std::uint64_t id) const;

  std::uint64_t next_u64();
  // Uniform on [0, 1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller (pairs cached).
  double normal();
  // Uniform integer in [0, n), unbiased (rejection sampling).
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  RngStream() = default;
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  bool have_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace arw
