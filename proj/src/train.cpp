#include "capgnn/train.hpp"

#include <chrono>
#include <cmath>
#include <string>

#include "capgnn/error.hpp"
#include "capgnn/text.hpp"

namespace capgnn::train {

std::string_view to_string(TrainMode m) noexcept {
  switch (m) {
    case TrainMode::vanilla: return "vanilla";
    case TrainMode::wp: return "wp";
    case TrainMode::fp: return "fp";
    case TrainMode::cap: return "cap";
  }
  return "unknown";
}

std::string_view to_string(EpochKind k) noexcept {
  switch (k) {
    case EpochKind::standard: return "standard";
    case EpochKind::weight_perturb: return "weight_perturb";
    case EpochKind::feature_perturb: return "feature_perturb";
  }
  return "unknown";
}

std::string_view to_string(OptimizerKind o) noexcept {
  return o == OptimizerKind::sgd ? "sgd" : "adam";
}

std::string_view to_string(ModelSelection s) noexcept {
  return s == ModelSelection::best_val ? "best_val" : "last";
}

TrainMode parse_train_mode(std::string_view s) {
  if (s == "vanilla") return TrainMode::vanilla;
  if (s == "wp") return TrainMode::wp;
  if (s == "fp") return TrainMode::fp;
  if (s == "cap") return TrainMode::cap;
  throw ConfigError("mode: expected vanilla, wp, fp or cap, got '" + std::string(s) + "'");
}

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("optimizer: expected sgd or adam, got '" + std::string(s) + "'");
}

ModelSelection parse_model_selection(std::string_view s) {
  if (s == "best_val") return ModelSelection::best_val;
  if (s == "last") return ModelSelection::last;
  throw ConfigError("model_selection: expected best_val or last, got '" + std::string(s) + "'");
}

void validate(const TrainConfig& cfg) {
  if (cfg.epochs == 0) throw ConfigError("epochs must be >= 1");
  if (cfg.skip_epochs > cfg.epochs) {
    throw ConfigError("skip_epochs (" + std::to_string(cfg.skip_epochs) + ") exceeds epochs (" +
                      std::to_string(cfg.epochs) + ")");
  }
  if (cfg.frequency == 0) throw ConfigError("frequency must be >= 1");
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw ConfigError("lr must be > 0");
  }
  if (!(cfg.weight_decay >= 0.0) || !std::isfinite(cfg.weight_decay)) {
    throw ConfigError("weight_decay must be >= 0");
  }
  if (cfg.eval_every == 0) throw ConfigError("eval_every must be >= 1");
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  for (std::size_t h : cfg.hidden_dims) {
    if (h == 0) throw ConfigError("hidden_dims entries must be >= 1");
  }
  perturb::validate(cfg.perturb);
}

EpochKind schedule(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch <= cfg.skip_epochs) return EpochKind::standard;
  switch (cfg.mode) {
    case TrainMode::vanilla:
      return EpochKind::standard;
    case TrainMode::wp:
      return EpochKind::weight_perturb;
    case TrainMode::fp:
      return EpochKind::feature_perturb;
    case TrainMode::cap:
      return epoch % cfg.frequency == 0 ? EpochKind::feature_perturb : EpochKind::weight_perturb;
  }
  return EpochKind::standard;
}

// ---------------------------------------------------------------------------

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, double weight_decay)
    : kind_(kind), lr_(learning_rate), weight_decay_(weight_decay) {}

void Optimizer::step(WeightList& weights, const WeightList& grads) {
  if (weights.size() != grads.size()) throw ShapeError("Optimizer::step: layer count mismatch");
  if (kind_ == OptimizerKind::sgd) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      auto w = weights[l].data();
      const auto g = grads[l].data();
      for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr_ * (g[k] + weight_decay_ * w[k]);
    }
    return;
  }
  if (m_.empty()) {
    for (const auto& w : weights) {
      m_.emplace_back(w.rows(), w.cols());
      v_.emplace_back(w.rows(), w.cols());
    }
  }
  ++t_;
  const double correction1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double correction2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t l = 0; l < weights.size(); ++l) {
    auto w = weights[l].data();
    const auto g = grads[l].data();
    auto m = m_[l].data();
    auto v = v_[l].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k] + weight_decay_ * w[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * gk;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * gk * gk;
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      w[k] -= lr_ * m_hat / (std::sqrt(v_hat) + epsilon_);
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

void require_finite(double loss, const char* what) {
  if (!std::isfinite(loss)) {
    throw NumericError(std::string("training diverged: ") + what + " is " + text::format_real(loss));
  }
}

}  // namespace

EpochRecord train_step(GnnModel& model, const Dataset& ds, EpochKind kind,
                       const TrainConfig& cfg, Optimizer& optimizer, SeededRng& dropout_rng) {
  EpochRecord rec;
  rec.kind = kind;
  const bool dropout = model.dropout_rate > 0.0;
  const auto& mask = ds.split.train;

  const auto clean = model::forward(model, ds.a_hat, ds.features, model.weights);
  rec.train_loss = model::masked_cross_entropy(clean.logits(), ds.labels, mask);
  require_finite(rec.train_loss, "clean train loss");

  model::Gradients grads;
  switch (kind) {
    case EpochKind::standard: {
      if (dropout) {
        const auto cache = model::forward(model, ds.a_hat, ds.features, model.weights, true, dropout_rng);
        require_finite(model::masked_cross_entropy(cache.logits(), ds.labels, mask), "train loss");
        grads = model::backward(model, ds.a_hat, ds.features, model.weights, cache, ds.labels, mask,
                                {.weights = true, .features = false});
      } else {
        grads = model::backward(model, ds.a_hat, ds.features, model.weights, clean, ds.labels, mask,
                                {.weights = true, .features = false});
      }
      break;
    }
    case EpochKind::weight_perturb: {
      const auto pert = perturb::pgd_weight_perturbation(model, ds, cfg.perturb);
      ++rec.pgd_runs;
      const WeightList w_eff = perturb::add(model.weights, pert.eps);
      const auto adv = model::forward(model, ds.a_hat, ds.features, w_eff);
      rec.adv_loss = model::masked_cross_entropy(adv.logits(), ds.labels, mask);
      require_finite(*rec.adv_loss, "perturbed loss");
      const auto cache =
          dropout ? model::forward(model, ds.a_hat, ds.features, w_eff, true, dropout_rng) : adv;
      grads = model::backward(model, ds.a_hat, ds.features, w_eff, cache, ds.labels, mask,
                              {.weights = true, .features = false});
      break;
    }
    case EpochKind::feature_perturb: {
      const auto pert = perturb::pgd_feature_perturbation(model, ds, cfg.perturb);
      ++rec.pgd_runs;
      const DenseMatrix x_eff = ds.features + pert.eps;
      const auto adv = model::forward(model, ds.a_hat, x_eff, model.weights);
      rec.adv_loss = model::masked_cross_entropy(adv.logits(), ds.labels, mask);
      require_finite(*rec.adv_loss, "perturbed loss");
      const auto cache =
          dropout ? model::forward(model, ds.a_hat, x_eff, model.weights, true, dropout_rng) : adv;
      grads = model::backward(model, ds.a_hat, x_eff, model.weights, cache, ds.labels, mask,
                              {.weights = true, .features = false});
      break;
    }
  }
  for (const auto& g : grads.d_weights) {
    if (!g.all_finite()) throw NumericError("training diverged: non-finite gradient");
  }
  optimizer.step(model.weights, grads.d_weights);
  return rec;
}

std::vector<std::size_t> layer_dims_for(const Dataset& ds, const TrainConfig& cfg) {
  std::vector<std::size_t> dims;
  dims.push_back(ds.feature_dim);
  dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
  dims.push_back(ds.num_classes);
  return dims;
}

TrainResult train(const Dataset& ds, const TrainConfig& cfg) {
  validate(cfg);
  SeededRng root(cfg.seed);
  SeededRng init_rng = root.split();
  SeededRng dropout_rng = root.split();

  const auto dims = layer_dims_for(ds, cfg);
  GnnModel model = model::init_model(dims, init_rng, cfg.dropout);
  Optimizer optimizer(cfg.optimizer, cfg.learning_rate, cfg.weight_decay);

  const bool has_val = graph::mask_count(ds.split.val) > 0;
  const bool has_test = graph::mask_count(ds.split.test) > 0;
  const bool select_best = cfg.model_selection == ModelSelection::best_val && has_val;

  TrainResult result;
  result.history.reserve(cfg.epochs);
  double best_val = -1.0;
  WeightList best_weights;

  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord rec = train_step(model, ds, schedule(e, cfg), cfg, optimizer, dropout_rng);
    rec.epoch = e;
    if (e % cfg.eval_every == 0 || e == cfg.epochs) {
      const auto cache = model::forward(model, ds.a_hat, ds.features, model.weights);
      rec.train_acc = model::accuracy(cache.logits(), ds.labels, ds.split.train);
      if (has_val) rec.val_acc = model::accuracy(cache.logits(), ds.labels, ds.split.val);
      if (has_test) rec.test_acc = model::accuracy(cache.logits(), ds.labels, ds.split.test);
      if (select_best && *rec.val_acc > best_val) {
        best_val = *rec.val_acc;
        best_weights = model.weights;
        result.selected_epoch = e;
      }
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(rec);
  }

  if (select_best) {
    model.weights = std::move(best_weights);
  } else {
    result.selected_epoch = cfg.epochs;
  }
  const auto cache = model::forward(model, ds.a_hat, ds.features, model.weights);
  result.train_acc = model::accuracy(cache.logits(), ds.labels, ds.split.train);
  result.val_acc = has_val ? model::accuracy(cache.logits(), ds.labels, ds.split.val) : 0.0;
  result.test_acc = has_test ? model::accuracy(cache.logits(), ds.labels, ds.split.test) : 0.0;
  result.model = std::move(model);
  return result;
}

void write_metrics_csv(std::ostream& out, const std::vector<EpochRecord>& history,
                       bool include_timing) {
  const auto opt = [](const std::optional<double>& v) { return v ? text::format_real(*v) : std::string(); };
  out << "epoch,mode,train_loss,adv_loss,train_acc,val_acc,test_acc,wall_ms\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << to_string(r.kind) << ',' << text::format_real(r.train_loss) << ','
        << opt(r.adv_loss) << ',' << opt(r.train_acc) << ',' << opt(r.val_acc) << ','
        << opt(r.test_acc) << ',' << (include_timing ? text::format_real(r.wall_ms) : std::string())
        << '\n';
  }
}

}  // namespace capgnn::train
