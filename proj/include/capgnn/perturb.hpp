#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <vector>

#include "capgnn/graph.hpp"
#include "capgnn/linalg.hpp"
#include "capgnn/model.hpp"

namespace capgnn::perturb {

using graph::Dataset;
using linalg::DenseMatrix;
using linalg::NormOrder;
using model::GnnModel;
using model::WeightList;

struct PerturbConfig {
  double rho_w = 0.01;  // relative: layer l's ball radius is rho_w · ‖W⁽ˡ⁾‖₂
  double rho_x = 0.01;  // absolute, in feature units
  double beta = 1e-3;   // inner step size
  std::size_t steps = 3;
  NormOrder p_w = NormOrder::two;
  NormOrder p_x = NormOrder::inf;
};

/// Radii must be positive, beta non-negative (0 gives the null perturbation), steps >= 1.
void validate(const PerturbConfig& cfg);

/// p = 2: radial rescale onto the ball when outside. p = ∞: clamp each entry.
/// A zero radius collapses to the zero matrix.
DenseMatrix project_ball(DenseMatrix eps, double rho, NormOrder p);

/// One line of the optional PGD trace; `layer` is empty for the feature loop.
struct StepLog {
  std::size_t step = 0;  // 1-based
  std::optional<std::size_t> layer;
  double grad_norm = 0.0;
  double eps_norm = 0.0;          // after projection, in the loop's own norm
  double loss = 0.0;              // loss at the point the gradient was taken
  bool skipped = false;           // gradient norm below 1e-12, no update applied
};

struct WeightPerturbation {
  WeightList eps;
  std::vector<double> radii;  // per-layer ball radius used
  std::vector<StepLog> log;
};

struct FeaturePerturbation {
  DenseMatrix eps;
  std::vector<StepLog> log;
};

/// Layer-wise PGD ascent on L(W + ε_w, X) over the train mask, starting from
/// ε_w = 0, each step normalized by that layer's gradient p-norm. Inference
/// mode throughout; the model is never modified.
WeightPerturbation pgd_weight_perturbation(const GnnModel& model, const Dataset& ds,
                                           const PerturbConfig& cfg);

/// Sign-gradient PGD ascent on L(W, X + ε_x) over the train mask, starting
/// from ε_x = 0 with sign(0) = 0, projected onto the p_x ball of radius rho_x.
FeaturePerturbation pgd_feature_perturbation(const GnnModel& model, const Dataset& ds,
                                             const PerturbConfig& cfg);

/// CSV trace: step,layer,grad_norm,eps_norm,loss (layer is "x" for features).
void write_trace_csv(std::ostream& out, const std::vector<StepLog>& log, bool header = true);

/// Element-wise sum helpers for building effective weights/features.
WeightList add(const WeightList& a, const WeightList& b);

}  // namespace capgnn::perturb
