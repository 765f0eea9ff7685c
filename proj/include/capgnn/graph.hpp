#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "capgnn/linalg.hpp"

namespace capgnn::graph {

using linalg::CsrMatrix;
using linalg::DenseMatrix;
using linalg::SeededRng;

using NodeMask = std::vector<bool>;

struct Split {
  NodeMask train;
  NodeMask val;
  NodeMask test;
};

/// Node-classification graph. Immutable once built through make_dataset or
/// one of the loaders, which guarantee the invariants checked by validate().
struct Dataset {
  std::size_t num_nodes = 0;
  std::size_t feature_dim = 0;
  std::size_t num_classes = 0;
  CsrMatrix adjacency;  // raw A, symmetric
  CsrMatrix a_hat;      // D̃^{-1/2} (A + I) D̃^{-1/2}
  DenseMatrix features;
  std::vector<std::size_t> labels;
  Split split;

  /// Undirected edge count; a self-loop counts once.
  std::size_t num_edges() const;
};

/// Throws ConfigError describing the first violated invariant.
void validate(const Dataset& ds);

/// Symmetric degree normalization with self-loops. Degrees are row sums of A
/// plus one, so weighted graphs reduce to the binary case.
CsrMatrix normalize_adjacency(const CsrMatrix& a);

/// Scales each row by the reciprocal of its absolute sum; zero rows stay zero.
DenseMatrix row_normalize(DenseMatrix features);

/// Assembles a dataset, computing `a_hat` and validating everything.
Dataset make_dataset(CsrMatrix adjacency, DenseMatrix features, std::vector<std::size_t> labels,
                     std::size_t num_classes, Split split);

/// Same graph and labels, different features (used by attacks and probes).
Dataset with_features(const Dataset& ds, DenseMatrix features);

std::vector<std::size_t> mask_indices(const NodeMask& mask);
std::size_t mask_count(const NodeMask& mask);

struct LoadOptions {
  bool row_normalize_features = false;
};

/// Reads meta.json, edges.tsv, features.csv, labels.txt and split.json from `dir`.
/// Errors carry the file name and, for line-oriented files, the 1-based line.
Dataset load_dataset(const std::filesystem::path& dir, const LoadOptions& options = {});

/// Writes the five files; reals use shortest round-trip formatting so that
/// load_dataset(save_dataset(ds)) reproduces `ds` exactly.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

/// Per-class stratified split: each class is shuffled, then the first
/// round(train·c) members go to train and the next round(val·c) to val.
Split random_split(const std::vector<std::size_t>& labels, std::size_t num_classes,
                   const SplitFractions& fractions, SeededRng& rng);

struct SbmParams {
  std::vector<std::size_t> block_sizes;
  double p_in = 0.0;
  double p_out = 0.0;
  double feature_noise = 0.0;
  /// Block b's mean feature is the unit vector e_{b mod feature_dim}.
  std::size_t feature_dim = 2;
};

void validate(const SbmParams& params);

/// Stochastic block model graph with block labels, jittered block-mean
/// features and a 60/20/20 stratified split. Random draws happen in a fixed
/// order (edges in row-major pair order, then features, then the split).
Dataset generate_sbm(const SbmParams& params, SeededRng& rng);

}  // namespace capgnn::graph
