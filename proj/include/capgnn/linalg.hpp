#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace capgnn::linalg {

/// Row-major dense matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  /// Takes ownership of `data`; throws ShapeError unless data.size() == rows * cols.
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  /// Builds from nested rows; rejects ragged input and non-finite entries.
  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static DenseMatrix from_rows(const std::vector<std::vector<double>>& rows);
  static DenseMatrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }
  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> row(std::size_t i) const noexcept {
    return std::span<const double>(data_).subspan(i * cols_, cols_);
  }
  std::span<double> row(std::size_t i) noexcept {
    return std::span<double>(data_).subspan(i * cols_, cols_);
  }

  bool same_shape(const DenseMatrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;
  bool all_finite() const noexcept;

  DenseMatrix& operator+=(const DenseMatrix& other);
  DenseMatrix& operator-=(const DenseMatrix& other);
  DenseMatrix& operator*=(double s) noexcept;

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b);
DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b);
DenseMatrix operator*(double s, DenseMatrix a);

/// Compressed sparse row matrix in canonical form: column indices strictly
/// increasing within each row, no explicit duplicates.
class CsrMatrix {
 public:
  struct Entry {
    std::size_t row;
    std::size_t col;
    double value;
  };

  CsrMatrix() = default;
  /// Validates the canonical-form invariants; throws ShapeError on violation.
  CsrMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_ptr,
            std::vector<std::size_t> col_idx, std::vector<double> values);

  /// Sorts the entries; duplicate (row, col) pairs and out-of-range indices are errors.
  static CsrMatrix from_entries(std::size_t rows, std::size_t cols, std::vector<Entry> entries);
  static CsrMatrix identity(std::size_t n);
  static CsrMatrix from_dense(const DenseMatrix& m);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return col_idx_.size(); }

  std::span<const std::size_t> row_ptr() const noexcept { return row_ptr_; }
  std::span<const std::size_t> col_idx() const noexcept { return col_idx_; }
  std::span<const double> values() const noexcept { return values_; }

  /// Stored value at (i, j), or 0 when absent. Binary search within the row.
  double at(std::size_t i, std::size_t j) const;
  std::string shape_string() const;
  DenseMatrix to_dense() const;
  bool is_symmetric() const;

  friend bool operator==(const CsrMatrix&, const CsrMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::size_t> col_idx_;
  std::vector<double> values_;
};

enum class NormOrder { two, inf };

/// Accepts "2", "l2", "inf", "linf", "infinity".
NormOrder parse_norm_order(std::string_view text);
std::string_view to_string(NormOrder p) noexcept;

/// Sparse × dense. Each output entry accumulates in ascending column order of `a`.
DenseMatrix spmm(const CsrMatrix& a, const DenseMatrix& b);
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
/// aᵀ · b without materializing the transpose.
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);
/// a · bᵀ without materializing the transpose.
DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b);

/// Flattened ℓ2 norm or max-abs norm. Throws ShapeError on an empty matrix.
double lp_norm(const DenseMatrix& m, NormOrder p);

/// Deterministic generator: std::mt19937_64 (fully specified by the standard)
/// driving hand-rolled uniform and Marsaglia-polar Gaussian transforms, so the
/// stream does not depend on a library's distribution implementation.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Unbiased integer in [0, n). n must be > 0.
  std::size_t uniform_index(std::size_t n);
  /// Standard normal draw.
  double normal();
  /// Independent child generator; advances this one.
  SeededRng split();

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

DenseMatrix sample_gaussian_like(std::size_t rows, std::size_t cols, SeededRng& rng);

}  // namespace capgnn::linalg
