#include "capgnn/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "capgnn/error.hpp"

namespace capgnn::linalg {

namespace {

std::string dims(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

}  // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("DenseMatrix: data length " + std::to_string(data_.size()) +
                     " does not match shape " + dims(rows_, cols_));
  }
}

DenseMatrix DenseMatrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<std::vector<double>> nested;
  nested.reserve(rows.size());
  for (const auto& r : rows) nested.emplace_back(r);
  return from_rows(nested);
}

DenseMatrix DenseMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.front().size();
  std::vector<double> data;
  data.reserve(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    if (rows[i].size() != c) {
      throw ShapeError("DenseMatrix::from_rows: row " + std::to_string(i) + " has " +
                       std::to_string(rows[i].size()) + " entries, expected " +
                       std::to_string(c));
    }
    for (double v : rows[i]) {
      if (!std::isfinite(v)) {
        throw ShapeError("DenseMatrix::from_rows: non-finite entry in row " + std::to_string(i));
      }
      data.push_back(v);
    }
  }
  return DenseMatrix(r, c, std::move(data));
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::string DenseMatrix::shape_string() const { return dims(rows_, cols_); }

bool DenseMatrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

DenseMatrix& DenseMatrix::operator+=(const DenseMatrix& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += other.data_[k];
  return *this;
}

DenseMatrix& DenseMatrix::operator-=(const DenseMatrix& other) {
  require_same_shape(*this, other, "operator-=");
  for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= other.data_[k];
  return *this;
}

DenseMatrix& DenseMatrix::operator*=(double s) noexcept {
  for (double& v : data_) v *= s;
  return *this;
}

DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b) { return a += b; }
DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b) { return a -= b; }
DenseMatrix operator*(double s, DenseMatrix a) { return a *= s; }

// ---------------------------------------------------------------------------

CsrMatrix::CsrMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_ptr,
                     std::vector<std::size_t> col_idx, std::vector<double> values)
    : rows_(rows),
      cols_(cols),
      row_ptr_(std::move(row_ptr)),
      col_idx_(std::move(col_idx)),
      values_(std::move(values)) {
  if (row_ptr_.size() != rows_ + 1) {
    throw ShapeError("CsrMatrix: row_ptr length " + std::to_string(row_ptr_.size()) +
                     " != rows + 1 = " + std::to_string(rows_ + 1));
  }
  if (col_idx_.size() != values_.size()) {
    throw ShapeError("CsrMatrix: col_idx and values lengths differ");
  }
  if (row_ptr_.front() != 0 || row_ptr_.back() != col_idx_.size()) {
    throw ShapeError("CsrMatrix: row_ptr must start at 0 and end at nnz");
  }
  for (std::size_t i = 0; i < rows_; ++i) {
    if (row_ptr_[i] > row_ptr_[i + 1]) {
      throw ShapeError("CsrMatrix: row_ptr decreases at row " + std::to_string(i));
    }
    for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
      if (col_idx_[k] >= cols_) {
        throw ShapeError("CsrMatrix: column index " + std::to_string(col_idx_[k]) +
                         " out of range in row " + std::to_string(i));
      }
      if (k > row_ptr_[i] && col_idx_[k] <= col_idx_[k - 1]) {
        throw ShapeError("CsrMatrix: columns not strictly increasing in row " +
                         std::to_string(i));
      }
    }
  }
}

CsrMatrix CsrMatrix::from_entries(std::size_t rows, std::size_t cols, std::vector<Entry> entries) {
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  std::vector<std::size_t> row_ptr(rows + 1, 0);
  std::vector<std::size_t> col_idx;
  std::vector<double> values;
  col_idx.reserve(entries.size());
  values.reserve(entries.size());
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const Entry& e = entries[k];
    if (e.row >= rows || e.col >= cols) {
      throw ShapeError("CsrMatrix::from_entries: entry (" + std::to_string(e.row) + ", " +
                       std::to_string(e.col) + ") outside " + dims(rows, cols));
    }
    if (k > 0 && entries[k - 1].row == e.row && entries[k - 1].col == e.col) {
      throw ShapeError("CsrMatrix::from_entries: duplicate entry (" + std::to_string(e.row) +
                       ", " + std::to_string(e.col) + ")");
    }
    ++row_ptr[e.row + 1];
    col_idx.push_back(e.col);
    values.push_back(e.value);
  }
  for (std::size_t i = 0; i < rows; ++i) row_ptr[i + 1] += row_ptr[i];
  return CsrMatrix(rows, cols, std::move(row_ptr), std::move(col_idx), std::move(values));
}

CsrMatrix CsrMatrix::identity(std::size_t n) {
  std::vector<std::size_t> row_ptr(n + 1);
  std::vector<std::size_t> col_idx(n);
  for (std::size_t i = 0; i <= n; ++i) row_ptr[i] = i;
  for (std::size_t i = 0; i < n; ++i) col_idx[i] = i;
  return CsrMatrix(n, n, std::move(row_ptr), std::move(col_idx), std::vector<double>(n, 1.0));
}

CsrMatrix CsrMatrix::from_dense(const DenseMatrix& m) {
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (m(i, j) != 0.0) entries.push_back({i, j, m(i, j)});
    }
  }
  return from_entries(m.rows(), m.cols(), std::move(entries));
}

double CsrMatrix::at(std::size_t i, std::size_t j) const {
  if (i >= rows_ || j >= cols_) {
    throw ShapeError("CsrMatrix::at: index outside " + shape_string());
  }
  const auto first = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[i]);
  const auto last = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[i + 1]);
  const auto it = std::lower_bound(first, last, j);
  if (it == last || *it != j) return 0.0;
  return values_[static_cast<std::size_t>(it - col_idx_.begin())];
}

std::string CsrMatrix::shape_string() const { return dims(rows_, cols_); }

DenseMatrix CsrMatrix::to_dense() const {
  DenseMatrix m(rows_, cols_);
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) m(i, col_idx_[k]) = values_[k];
  }
  return m;
}

bool CsrMatrix::is_symmetric() const {
  if (rows_ != cols_) return false;
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
      const std::size_t j = col_idx_[k];
      const auto first = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[j]);
      const auto last = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[j + 1]);
      const auto it = std::lower_bound(first, last, i);
      if (it == last || *it != i) return false;
      if (values_[static_cast<std::size_t>(it - col_idx_.begin())] != values_[k]) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------

NormOrder parse_norm_order(std::string_view text) {
  if (text == "2" || text == "l2") return NormOrder::two;
  if (text == "inf" || text == "linf" || text == "infinity") return NormOrder::inf;
  throw ConfigError("unsupported norm order '" + std::string(text) + "' (expected 2 or inf)");
}

std::string_view to_string(NormOrder p) noexcept {
  return p == NormOrder::two ? "2" : "inf";
}

DenseMatrix spmm(const CsrMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("spmm: cannot multiply sparse " + a.shape_string() + " by dense " +
                     b.shape_string());
  }
  const std::size_t n = b.cols();
  DenseMatrix out(a.rows(), n);
  const auto row_ptr = a.row_ptr();
  const auto col_idx = a.col_idx();
  const auto values = a.values();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
      const double w = values[k];
      const auto src = b.row(col_idx[k]);
      for (std::size_t j = 0; j < n; ++j) dst[j] += w * src[j];
    }
  }
  return out;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + a.shape_string() + " by " + b.shape_string());
  }
  const std::size_t n = b.cols();
  DenseMatrix out(a.rows(), n);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    const auto lhs = a.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double w = lhs[k];
      if (w == 0.0) continue;
      const auto src = b.row(k);
      for (std::size_t j = 0; j < n; ++j) dst[j] += w * src[j];
    }
  }
  return out;
}

DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: cannot multiply transpose of " + a.shape_string() + " by " +
                     b.shape_string());
  }
  const std::size_t n = b.cols();
  DenseMatrix out(a.cols(), n);
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const auto lhs = a.row(k);
    const auto src = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double w = lhs[i];
      if (w == 0.0) continue;
      auto dst = out.row(i);
      for (std::size_t j = 0; j < n; ++j) dst[j] += w * src[j];
    }
  }
  return out;
}

DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: cannot multiply " + a.shape_string() + " by transpose of " +
                     b.shape_string());
  }
  DenseMatrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto lhs = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto rhs = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += lhs[k] * rhs[k];
      out(i, j) = acc;
    }
  }
  return out;
}

double lp_norm(const DenseMatrix& m, NormOrder p) {
  if (m.empty()) throw ShapeError("lp_norm: empty matrix");
  if (p == NormOrder::inf) {
    double best = 0.0;
    for (double v : m.data()) best = std::max(best, std::abs(v));
    return best;
  }
  // Scaled accumulation avoids overflow for large entries.
  double scale = 0.0;
  for (double v : m.data()) scale = std::max(scale, std::abs(v));
  if (scale == 0.0 || !std::isfinite(scale)) return scale;
  double acc = 0.0;
  for (double v : m.data()) {
    const double r = v / scale;
    acc += r * r;
  }
  return scale * std::sqrt(acc);
}

// ---------------------------------------------------------------------------

double SeededRng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t SeededRng::uniform_index(std::size_t n) {
  if (n == 0) throw ConfigError("SeededRng::uniform_index: n must be positive");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return static_cast<std::size_t>(x % bound);
}

double SeededRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u = 0.0;
  double v = 0.0;
  double s = 0.0;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  has_spare_ = true;
  return u * f;
}

SeededRng SeededRng::split() {
  // splitmix64 finalizer decorrelates the child seed from the parent stream.
  std::uint64_t z = engine_() + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return SeededRng(z ^ (z >> 31));
}

DenseMatrix sample_gaussian_like(std::size_t rows, std::size_t cols, SeededRng& rng) {
  if (rows == 0 || cols == 0) {
    throw ShapeError("sample_gaussian_like: dimensions must be >= 1, got " + dims(rows, cols));
  }
  DenseMatrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

}  // namespace capgnn::linalg
