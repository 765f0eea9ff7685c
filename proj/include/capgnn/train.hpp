#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string_view>
#include <vector>

#include "capgnn/graph.hpp"
#include "capgnn/model.hpp"
#include "capgnn/perturb.hpp"

namespace capgnn::train {

using graph::Dataset;
using linalg::DenseMatrix;
using linalg::SeededRng;
using model::GnnModel;
using model::WeightList;
using perturb::PerturbConfig;

enum class TrainMode { vanilla, wp, fp, cap };
enum class EpochKind { standard, weight_perturb, feature_perturb };
enum class OptimizerKind { sgd, adam };
enum class ModelSelection { best_val, last };

std::string_view to_string(TrainMode m) noexcept;
std::string_view to_string(EpochKind k) noexcept;
std::string_view to_string(OptimizerKind o) noexcept;
std::string_view to_string(ModelSelection s) noexcept;
TrainMode parse_train_mode(std::string_view s);
OptimizerKind parse_optimizer(std::string_view s);
ModelSelection parse_model_selection(std::string_view s);

struct TrainConfig {
  std::size_t epochs = 200;      // N
  std::size_t skip_epochs = 0;   // S: standard epochs before any perturbation
  std::size_t frequency = 5;     // F: feature perturbation when e % F == 0 (cap mode)
  double learning_rate = 0.01;   // τ
  TrainMode mode = TrainMode::vanilla;
  PerturbConfig perturb;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;
  ModelSelection model_selection = ModelSelection::best_val;
  std::vector<std::size_t> hidden_dims{64};
  double dropout = 0.5;
};

void validate(const TrainConfig& cfg);

/// Epoch kind for 1-based epoch `e`; a literal reading of the two-stage
/// loop where the alternation test uses the global epoch index.
EpochKind schedule(std::size_t epoch, const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  EpochKind kind = EpochKind::standard;
  double train_loss = 0.0;            // clean train-mask loss at the weights entering the epoch
  std::optional<double> adv_loss;     // perturbed-objective loss at the same weights
  std::optional<double> train_acc;    // accuracies at the weights leaving the epoch
  std::optional<double> val_acc;
  std::optional<double> test_acc;
  double wall_ms = 0.0;
  std::size_t pgd_runs = 0;           // PGD loops executed during this epoch
};

/// Plain gradient descent or Adam, both with coupled L2 weight decay.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, double weight_decay);

  /// weights ← update(weights, grads). Moment estimates persist across calls.
  void step(WeightList& weights, const WeightList& grads);
  OptimizerKind kind() const noexcept { return kind_; }

 private:
  OptimizerKind kind_;
  double lr_;
  double weight_decay_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double epsilon_ = 1e-8;
  std::size_t t_ = 0;
  WeightList m_;
  WeightList v_;
};

/// One outer minimization step of the given kind. Weight perturbations are
/// scratch values: the gradient is taken at W + ε_w and applied to W. The
/// returned record has losses and pgd_runs filled; accuracies are left empty.
/// Throws NumericError when a loss is non-finite.
EpochRecord train_step(GnnModel& model, const Dataset& ds, EpochKind kind,
                       const TrainConfig& cfg, Optimizer& optimizer, SeededRng& dropout_rng);

struct TrainResult {
  GnnModel model;  // selected per cfg.model_selection
  std::vector<EpochRecord> history;
  std::size_t selected_epoch = 0;
  double train_acc = 0.0;  // of the selected model
  double val_acc = 0.0;
  double test_acc = 0.0;
};

/// Full run: model initialization, N epochs following schedule(), periodic
/// evaluation and checkpoint selection. Deterministic in (ds, cfg).
TrainResult train(const Dataset& ds, const TrainConfig& cfg);

/// Layer dims [d, hidden..., K] for the dataset.
std::vector<std::size_t> layer_dims_for(const Dataset& ds, const TrainConfig& cfg);

/// epoch,mode,train_loss,adv_loss,train_acc,val_acc,test_acc,wall_ms
/// Optional fields are written empty; wall_ms only when `include_timing`.
void write_metrics_csv(std::ostream& out, const std::vector<EpochRecord>& history,
                       bool include_timing);

}  // namespace capgnn::train
