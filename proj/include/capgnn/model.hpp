#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "capgnn/graph.hpp"
#include "capgnn/linalg.hpp"

namespace capgnn::model {

using graph::Dataset;
using graph::NodeMask;
using linalg::CsrMatrix;
using linalg::DenseMatrix;
using linalg::SeededRng;

using WeightList = std::vector<DenseMatrix>;

enum class Backbone { gcn };

std::string_view to_string(Backbone b) noexcept;

/// Stack of bias-free graph convolutions H⁽ˡ⁾ = σ(Â H⁽ˡ⁻¹⁾ W⁽ˡ⁾) with ReLU
/// between layers and raw logits out of the last one.
struct GnnModel {
  Backbone backbone = Backbone::gcn;
  std::vector<std::size_t> layer_dims;  // d₀ … d_L
  WeightList weights;                   // W⁽ˡ⁾ is layer_dims[l-1] × layer_dims[l]
  double dropout_rate = 0.5;            // applied to hidden activations while training

  std::size_t depth() const noexcept { return weights.size(); }
};

/// Throws ShapeError/ConfigError when dimensions do not chain or weights are non-finite.
void validate(const GnnModel& model);

/// Shape-checks a weight list against the model's layer dimensions.
void check_weights(const GnnModel& model, std::span<const DenseMatrix> weights);

/// Glorot-uniform initialization: entries uniform in ±√(6 / (fan_in + fan_out)).
GnnModel init_model(std::span<const std::size_t> layer_dims, SeededRng& rng,
                    double dropout_rate = 0.5);

struct ForwardCache {
  std::vector<DenseMatrix> aggregated;       // Â H⁽ˡ⁻¹⁾ for l = 1..L
  std::vector<DenseMatrix> pre_activations;  // Â H⁽ˡ⁻¹⁾ W⁽ˡ⁾
  std::vector<DenseMatrix> activations;      // H⁽⁰⁾ … H⁽ᴸ⁾
  std::vector<DenseMatrix> dropout_scales;   // per hidden layer; empty when dropout is off

  const DenseMatrix& logits() const { return activations.back(); }
};

/// `x_eff` and `w_eff` stand in for the stored features/weights so perturbed
/// points can be evaluated without touching either. Dropout fires only when
/// `training` is set and the model's rate is positive; `rng` is then consumed.
ForwardCache forward(const GnnModel& model, const CsrMatrix& a_hat, const DenseMatrix& x_eff,
                     std::span<const DenseMatrix> w_eff, bool training, SeededRng& rng);

/// Inference-mode forward; never draws randomness.
ForwardCache forward(const GnnModel& model, const CsrMatrix& a_hat, const DenseMatrix& x_eff,
                     std::span<const DenseMatrix> w_eff);

/// Mean of -log softmax(logits_i)[label_i] over masked rows (log-sum-exp stabilized).
double masked_cross_entropy(const DenseMatrix& logits, std::span<const std::size_t> labels,
                            const NodeMask& mask);

struct Gradients {
  WeightList d_weights;
  DenseMatrix d_features;  // empty unless requested
};

struct GradientRequest {
  bool weights = true;
  bool features = true;
};

/// Reverse-mode gradient of masked_cross_entropy through the cached forward.
/// Relies on `a_hat` being symmetric, so Âᵀ is applied as Â.
Gradients backward(const GnnModel& model, const CsrMatrix& a_hat, const DenseMatrix& x_eff,
                   std::span<const DenseMatrix> w_eff, const ForwardCache& cache,
                   std::span<const std::size_t> labels, const NodeMask& mask,
                   GradientRequest request = {});

/// Fraction of masked rows whose argmax (lowest index on ties) equals the label.
double accuracy(const DenseMatrix& logits, std::span<const std::size_t> labels,
                const NodeMask& mask);

/// Inference-mode accuracy of the stored weights on the dataset's own features.
double evaluate(const GnnModel& model, const Dataset& ds, const NodeMask& mask);

/// Inference-mode loss at arbitrary effective features/weights.
double loss_at(const GnnModel& model, const Dataset& ds, const DenseMatrix& x_eff,
               std::span<const DenseMatrix> w_eff, const NodeMask& mask);

/// Binary checkpoint, every multi-byte field little-endian:
///   "CAPGNNW\0" | u8 'L' | u8 version=1 | u16 backbone | u32 dim count |
///   f64 dropout | u64 dims[] | f64 weights, layer by layer, row-major.
void save_checkpoint(const GnnModel& model, const std::filesystem::path& path);
GnnModel load_checkpoint(const std::filesystem::path& path);

}  // namespace capgnn::model
