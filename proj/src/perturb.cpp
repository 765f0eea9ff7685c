#include "capgnn/perturb.hpp"

#include <algorithm>
#include <cmath>

#include "capgnn/error.hpp"
#include "capgnn/text.hpp"

namespace capgnn::perturb {

namespace {
constexpr double kMinGradNorm = 1e-12;
}

void validate(const PerturbConfig& cfg) {
  if (!(cfg.rho_w > 0.0) || !std::isfinite(cfg.rho_w)) throw ConfigError("rho_w must be > 0");
  if (!(cfg.rho_x > 0.0) || !std::isfinite(cfg.rho_x)) throw ConfigError("rho_x must be > 0");
  if (!(cfg.beta >= 0.0) || !std::isfinite(cfg.beta)) throw ConfigError("beta must be >= 0");
  if (cfg.steps == 0) throw ConfigError("pgd_steps must be >= 1");
}

DenseMatrix project_ball(DenseMatrix eps, double rho, NormOrder p) {
  if (rho <= 0.0) {
    for (double& v : eps.data()) v = 0.0;
    return eps;
  }
  if (eps.empty()) return eps;
  if (p == NormOrder::inf) {
    for (double& v : eps.data()) v = std::clamp(v, -rho, rho);
    return eps;
  }
  const double norm = linalg::lp_norm(eps, NormOrder::two);
  if (norm > rho) eps *= rho / norm;
  return eps;
}

WeightList add(const WeightList& a, const WeightList& b) {
  if (a.size() != b.size()) throw ShapeError("add: weight lists differ in length");
  WeightList out = a;
  for (std::size_t l = 0; l < out.size(); ++l) out[l] += b[l];
  return out;
}

WeightPerturbation pgd_weight_perturbation(const GnnModel& model, const Dataset& ds,
                                           const PerturbConfig& cfg) {
  validate(cfg);
  const std::size_t depth = model.depth();
  WeightPerturbation result;
  result.eps.reserve(depth);
  for (const auto& w : model.weights) {
    result.eps.emplace_back(w.rows(), w.cols());
    result.radii.push_back(cfg.rho_w * linalg::lp_norm(w, NormOrder::two));
  }
  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    const WeightList w_eff = add(model.weights, result.eps);
    const auto cache = model::forward(model, ds.a_hat, ds.features, w_eff);
    const double loss = model::masked_cross_entropy(cache.logits(), ds.labels, ds.split.train);
    const auto grads = model::backward(model, ds.a_hat, ds.features, w_eff, cache, ds.labels,
                                       ds.split.train, {.weights = true, .features = false});
    for (std::size_t l = 0; l < depth; ++l) {
      StepLog entry{.step = t, .layer = l, .loss = loss};
      entry.grad_norm = linalg::lp_norm(grads.d_weights[l], cfg.p_w);
      if (entry.grad_norm < kMinGradNorm || !std::isfinite(entry.grad_norm)) {
        entry.skipped = true;
      } else {
        DenseMatrix step = grads.d_weights[l];
        step *= cfg.beta / entry.grad_norm;
        result.eps[l] += step;
        result.eps[l] = project_ball(std::move(result.eps[l]), result.radii[l], cfg.p_w);
      }
      entry.eps_norm = linalg::lp_norm(result.eps[l], cfg.p_w);
      result.log.push_back(entry);
    }
  }
  return result;
}

FeaturePerturbation pgd_feature_perturbation(const GnnModel& model, const Dataset& ds,
                                             const PerturbConfig& cfg) {
  validate(cfg);
  FeaturePerturbation result;
  result.eps = DenseMatrix(ds.features.rows(), ds.features.cols());
  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    const DenseMatrix x_eff = ds.features + result.eps;
    const auto cache = model::forward(model, ds.a_hat, x_eff, model.weights);
    const double loss = model::masked_cross_entropy(cache.logits(), ds.labels, ds.split.train);
    const auto grads = model::backward(model, ds.a_hat, x_eff, model.weights, cache, ds.labels,
                                       ds.split.train, {.weights = false, .features = true});
    const auto g = grads.d_features.data();
    auto eps = result.eps.data();
    for (std::size_t k = 0; k < eps.size(); ++k) {
      const double s = g[k] > 0.0 ? 1.0 : (g[k] < 0.0 ? -1.0 : 0.0);
      eps[k] += cfg.beta * s;
    }
    result.eps = project_ball(std::move(result.eps), cfg.rho_x, cfg.p_x);
    result.log.push_back({.step = t,
                          .layer = std::nullopt,
                          .grad_norm = linalg::lp_norm(grads.d_features, cfg.p_x),
                          .eps_norm = linalg::lp_norm(result.eps, cfg.p_x),
                          .loss = loss});
  }
  return result;
}

void write_trace_csv(std::ostream& out, const std::vector<StepLog>& log, bool header) {
  if (header) out << "step,layer,grad_norm,eps_norm,loss\n";
  for (const auto& e : log) {
    out << e.step << ',' << (e.layer ? std::to_string(*e.layer + 1) : std::string("x")) << ','
        << text::format_real(e.grad_norm) << ',' << text::format_real(e.eps_norm) << ','
        << text::format_real(e.loss) << '\n';
  }
}

}  // namespace capgnn::perturb
