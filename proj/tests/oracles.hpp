#pragma once

// Independent reference implementations used to check the library.

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "capgnn/graph.hpp"
#include "capgnn/linalg.hpp"
#include "capgnn/model.hpp"
#include "capgnn/train.hpp"

namespace oracle {

using capgnn::graph::Dataset;
using capgnn::linalg::CsrMatrix;
using capgnn::linalg::DenseMatrix;
using capgnn::linalg::SeededRng;
using capgnn::model::GnnModel;

/// Textbook triple loop over a dense copy of `a`.
DenseMatrix naive_product(const DenseMatrix& a, const DenseMatrix& b);

/// D̃^{-1/2}(A+I)D̃^{-1/2} evaluated densely, entry by entry.
DenseMatrix naive_normalized_adjacency(const DenseMatrix& a);

/// Loss of a 2-layer-or-deeper GCN computed with plain loops and no caching.
double naive_loss(const DenseMatrix& a_hat, const DenseMatrix& x, const std::vector<DenseMatrix>& w,
                  const std::vector<std::size_t>& labels, const std::vector<bool>& mask);

struct FdReport {
  std::size_t coordinates = 0;
  std::size_t failures = 0;
  double worst_rel = 0.0;
};

/// Central finite differences of naive_loss against the library's backward.
FdReport finite_difference_check(const GnnModel& model, const Dataset& ds, double h, double rel_tol,
                                 double abs_floor);

/// Random connected-or-not small instance with a train mask of at least one node.
struct SmallInstance {
  Dataset ds;
  GnnModel model;
};
SmallInstance random_small_instance(SeededRng& rng, std::size_t max_n, std::size_t max_d, std::size_t max_k,
                                    std::size_t depth);

/// Literal transcription of the two-stage loop's branch structure.
std::string reference_schedule(std::size_t e, std::size_t S, std::size_t F, const std::string& mode);

/// 3σ window for a Binomial(n, p) count.
std::pair<double, double> binomial_window(double n, double p, double sigmas = 3.0);

/// Unique scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& child) const { return path_ / child; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);

/// Two-block SBM used by several statistical checks.
Dataset sbm_fixture(std::size_t block, double p_in, double p_out, double noise, std::size_t feature_dim,
                    std::uint64_t seed);

}  // namespace oracle
