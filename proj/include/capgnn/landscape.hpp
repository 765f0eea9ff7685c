#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string_view>
#include <vector>

#include "capgnn/graph.hpp"
#include "capgnn/linalg.hpp"
#include "capgnn/model.hpp"

namespace capgnn::landscape {

using graph::Dataset;
using linalg::DenseMatrix;
using linalg::SeededRng;
using model::GnnModel;

enum class DirectionKind { weight, feature };
enum class LossMask { train, test };

std::string_view to_string(DirectionKind k) noexcept;
DirectionKind parse_direction_kind(std::string_view s);
LossMask parse_loss_mask(std::string_view s);

/// Gaussian directions rescaled to the norm of their source: per layer for
/// weights, the whole matrix for features. A zero-norm source gives a zero
/// direction.
struct DirectionSet {
  DirectionKind kind = DirectionKind::weight;
  std::vector<std::vector<DenseMatrix>> directions;  // [direction][layer], one matrix for features
  std::uint64_t seed = 0;

  std::size_t count() const noexcept { return directions.size(); }
};

DirectionSet sample_directions(const GnnModel& model, const Dataset& ds, DirectionKind kind,
                               std::size_t count, SeededRng& rng);

/// `count` evenly spaced points in [-alpha_max, alpha_max]; count must be odd
/// so the grid is symmetric and contains 0 exactly.
std::vector<double> symmetric_grid(double alpha_max, std::size_t count);

struct LandscapeProfile {
  DirectionKind kind = DirectionKind::weight;
  std::vector<double> alphas;
  std::vector<std::vector<double>> losses;  // [direction][alpha]
};

/// g(α) = L(W + α·D_w, X) or L(W, X + α·D_x), inference mode. The α = 0
/// column is evaluated at the unmodified point. Directions are independent
/// and may be spread over `threads` workers; results do not depend on it.
LandscapeProfile probe_landscape(const GnnModel& model, const Dataset& ds, const DirectionSet& dirs,
                                 std::span<const double> alphas, LossMask mask = LossMask::train,
                                 std::size_t threads = 1);

/// Mean over directions of (g(+a) + g(-a)) / 2 - g(0). Both ±a and 0 must be on the grid.
double sharpness(const LandscapeProfile& profile, double alpha_ref);

/// kind,direction_id,alpha,loss
void write_profile_csv(std::ostream& out, const LandscapeProfile& profile, bool header = true);

/// Train accuracy minus test accuracy.
double generalization_gap(double train_acc, double test_acc) noexcept;
double generalization_gap(const GnnModel& model, const Dataset& ds);

struct AttackResult {
  double sigma = 0.0;
  std::vector<double> trial_acc;
  double mean_acc = 0.0;
  double std_acc = 0.0;  // population standard deviation over trials
};

/// Test accuracy on X + N(0, σ²) noise, averaged over trials. σ = 0 evaluates
/// the clean features.
AttackResult gaussian_attack_eval(const GnnModel& model, const Dataset& ds, double sigma,
                                  std::size_t trials, SeededRng& rng);

}  // namespace capgnn::landscape
