#include "capgnn/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>

#include "capgnn/error.hpp"
#include "capgnn/text.hpp"

namespace capgnn::landscape {

using linalg::NormOrder;

std::string_view to_string(DirectionKind k) noexcept {
  return k == DirectionKind::weight ? "weight" : "feature";
}

DirectionKind parse_direction_kind(std::string_view s) {
  if (s == "weight") return DirectionKind::weight;
  if (s == "feature") return DirectionKind::feature;
  throw ConfigError("direction kind: expected weight or feature, got '" + std::string(s) + "'");
}

LossMask parse_loss_mask(std::string_view s) {
  if (s == "train") return LossMask::train;
  if (s == "test") return LossMask::test;
  throw ConfigError("loss mask: expected train or test, got '" + std::string(s) + "'");
}

namespace {

DenseMatrix norm_matched(const DenseMatrix& source, SeededRng& rng) {
  DenseMatrix d = linalg::sample_gaussian_like(source.rows(), source.cols(), rng);
  const double target = linalg::lp_norm(source, NormOrder::two);
  const double current = linalg::lp_norm(d, NormOrder::two);
  if (target == 0.0 || current == 0.0) {
    d *= 0.0;
  } else {
    d *= target / current;
  }
  return d;
}

}  // namespace

DirectionSet sample_directions(const GnnModel& model, const Dataset& ds, DirectionKind kind,
                               std::size_t count, SeededRng& rng) {
  if (count == 0) throw ConfigError("sample_directions: count must be >= 1");
  DirectionSet set;
  set.kind = kind;
  set.seed = rng.seed();
  set.directions.reserve(count);
  for (std::size_t c = 0; c < count; ++c) {
    std::vector<DenseMatrix> dir;
    if (kind == DirectionKind::weight) {
      for (const auto& w : model.weights) dir.push_back(norm_matched(w, rng));
    } else {
      dir.push_back(norm_matched(ds.features, rng));
    }
    set.directions.push_back(std::move(dir));
  }
  return set;
}

std::vector<double> symmetric_grid(double alpha_max, std::size_t count) {
  if (count == 0 || count % 2 == 0) throw ConfigError("alpha grid size must be odd");
  if (!(alpha_max > 0.0) && count > 1) throw ConfigError("alpha_max must be > 0");
  const auto half = static_cast<double>(count / 2);
  std::vector<double> grid(count);
  for (std::size_t k = 0; k < count; ++k) {
    grid[k] = count == 1 ? 0.0 : alpha_max * (static_cast<double>(k) - half) / half;
  }
  return grid;
}

LandscapeProfile probe_landscape(const GnnModel& model, const Dataset& ds, const DirectionSet& dirs,
                                 std::span<const double> alphas, LossMask mask, std::size_t threads) {
  const auto zero = std::find(alphas.begin(), alphas.end(), 0.0);
  if (zero == alphas.end()) throw ConfigError("probe_landscape: alpha grid must contain 0");
  if (!std::is_sorted(alphas.begin(), alphas.end()) ||
      std::adjacent_find(alphas.begin(), alphas.end()) != alphas.end()) {
    throw ConfigError("probe_landscape: alphas must be strictly increasing");
  }
  for (const auto& dir : dirs.directions) {
    if (dirs.kind == DirectionKind::weight) {
      model::check_weights(model, dir);
    } else if (dir.size() != 1 || !dir.front().same_shape(ds.features)) {
      throw ShapeError("probe_landscape: feature direction does not match " + ds.features.shape_string());
    }
  }
  const auto& loss_mask = mask == LossMask::train ? ds.split.train : ds.split.test;
  const double base = model::loss_at(model, ds, ds.features, model.weights, loss_mask);

  LandscapeProfile profile;
  profile.kind = dirs.kind;
  profile.alphas.assign(alphas.begin(), alphas.end());
  profile.losses.assign(dirs.count(), std::vector<double>(alphas.size(), base));

  const auto work = [&](std::size_t d) {
    const auto& dir = dirs.directions[d];
    for (std::size_t a = 0; a < alphas.size(); ++a) {
      const double alpha = alphas[a];
      if (alpha == 0.0) continue;
      if (dirs.kind == DirectionKind::weight) {
        model::WeightList w = model.weights;
        for (std::size_t l = 0; l < w.size(); ++l) w[l] += alpha * dir[l];
        profile.losses[d][a] = model::loss_at(model, ds, ds.features, w, loss_mask);
      } else {
        const DenseMatrix x = ds.features + alpha * dir.front();
        profile.losses[d][a] = model::loss_at(model, ds, x, model.weights, loss_mask);
      }
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, dirs.count()));
  if (workers == 1) {
    for (std::size_t d = 0; d < dirs.count(); ++d) work(d);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t d = t; d < dirs.count(); d += workers) work(d);
      });
    }
  }
  return profile;
}

namespace {

std::size_t find_alpha(const std::vector<double>& alphas, double target) {
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    if (std::abs(alphas[k] - target) <= 1e-12 * std::max(1.0, std::abs(target))) return k;
  }
  throw ConfigError("sharpness: alpha " + text::format_real(target) + " is not on the grid");
}

}  // namespace

double sharpness(const LandscapeProfile& profile, double alpha_ref) {
  const std::size_t plus = find_alpha(profile.alphas, alpha_ref);
  const std::size_t minus = find_alpha(profile.alphas, -alpha_ref);
  const std::size_t zero = find_alpha(profile.alphas, 0.0);
  if (profile.losses.empty()) throw ConfigError("sharpness: profile has no directions");
  double total = 0.0;
  for (const auto& row : profile.losses) total += 0.5 * (row[plus] + row[minus]) - row[zero];
  return total / static_cast<double>(profile.losses.size());
}

void write_profile_csv(std::ostream& out, const LandscapeProfile& profile, bool header) {
  if (header) out << "kind,direction_id,alpha,loss\n";
  for (std::size_t d = 0; d < profile.losses.size(); ++d) {
    for (std::size_t a = 0; a < profile.alphas.size(); ++a) {
      out << to_string(profile.kind) << ',' << d << ',' << text::format_real(profile.alphas[a]) << ','
          << text::format_real(profile.losses[d][a]) << '\n';
    }
  }
}

double generalization_gap(double train_acc, double test_acc) noexcept { return train_acc - test_acc; }

double generalization_gap(const GnnModel& model, const Dataset& ds) {
  const auto cache = model::forward(model, ds.a_hat, ds.features, model.weights);
  return generalization_gap(model::accuracy(cache.logits(), ds.labels, ds.split.train),
                            model::accuracy(cache.logits(), ds.labels, ds.split.test));
}

AttackResult gaussian_attack_eval(const GnnModel& model, const Dataset& ds, double sigma,
                                  std::size_t trials, SeededRng& rng) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("attack: sigma must be >= 0");
  if (trials == 0) throw ConfigError("attack: trials must be >= 1");
  AttackResult result;
  result.sigma = sigma;
  for (std::size_t t = 0; t < trials; ++t) {
    double acc = 0.0;
    if (sigma == 0.0) {
      acc = model::evaluate(model, ds, ds.split.test);
    } else {
      DenseMatrix x = ds.features;
      for (double& v : x.data()) v += sigma * rng.normal();
      const auto cache = model::forward(model, ds.a_hat, x, model.weights);
      acc = model::accuracy(cache.logits(), ds.labels, ds.split.test);
    }
    result.trial_acc.push_back(acc);
  }
  double sum = 0.0;
  for (double a : result.trial_acc) sum += a;
  result.mean_acc = sum / static_cast<double>(trials);
  double var = 0.0;
  for (double a : result.trial_acc) var += (a - result.mean_acc) * (a - result.mean_acc);
  result.std_acc = std::sqrt(var / static_cast<double>(trials));
  return result;
}

}  // namespace capgnn::landscape
