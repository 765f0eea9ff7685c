#include <cmath>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "capgnn/cli.hpp"
#include "capgnn/error.hpp"
#include "capgnn/landscape.hpp"
#include "capgnn/text.hpp"
#include "json.hpp"

namespace capgnn::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

// Sample standard deviation (n - 1); zero for a single value.
MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double var = 0.0;
    for (double x : xs) var += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(var / static_cast<double>(xs.size() - 1));
  }
  return r;
}

json mean_std_json(const std::vector<double>& xs) {
  const auto ms = mean_std(xs);
  return {{"mean", ms.mean}, {"std", ms.std}};
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
}

// Runs jobs [0, n) on up to `threads` workers; the first failure is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& job) {
  std::vector<std::exception_ptr> errors(n);
  const auto run_one = [&](std::size_t i) {
    try {
      job(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) run_one(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < n; i += workers) run_one(i);
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

graph::Dataset load_for_checkpoint(const fs::path& dir, bool row_normalize, const model::GnnModel& m) {
  graph::Dataset ds = graph::load_dataset(dir, {.row_normalize_features = row_normalize});
  if (m.layer_dims.front() != ds.feature_dim || m.layer_dims.back() != ds.num_classes) {
    throw ConfigError("checkpoint expects " + std::to_string(m.layer_dims.front()) + " features and " +
                      std::to_string(m.layer_dims.back()) + " classes; dataset has " +
                      std::to_string(ds.feature_dim) + " and " + std::to_string(ds.num_classes));
  }
  return ds;
}

// Split seed is decorrelated from the model seed so the two streams never coincide.
constexpr std::uint64_t kSplitSalt = 0x5b1d5eedULL;

// ---------------------------------------------------------------------------

int cmd_train(const fs::path& config_path, const std::vector<std::pair<std::string, std::string>>& overrides,
              std::ostream& out) {
  const RunConfig cfg = load_run_config(config_path, overrides);
  const std::string fingerprint = dataset_fingerprint(cfg.dataset_dir);
  if (config_path.extension() == ".json") {
    std::ifstream in(config_path);
    const json manifest = json::parse(in);
    if (manifest.contains("dataset_fingerprint") &&
        manifest["dataset_fingerprint"].get<std::string>() != fingerprint) {
      throw ConfigError("dataset_dir: content fingerprint differs from the manifest");
    }
  }
  const graph::Dataset base =
      graph::load_dataset(cfg.dataset_dir, {.row_normalize_features = cfg.row_normalize_features});
  ensure_dir(cfg.out_dir);

  json config_json = json::object();
  for (const auto& [key, value] : resolved_settings(cfg)) config_json[key] = value;
  const json manifest = {{"tool", "capgnn"},
                         {"tool_version", kToolVersion},
                         {"config", config_json},
                         {"dataset_fingerprint", fingerprint},
                         {"seeds", cfg.seeds},
                         {"out_dir", cfg.out_dir.string()}};
  write_text(cfg.out_dir / "manifest.json", manifest.dump(2) + "\n");
  write_text(cfg.out_dir / "resolved.cfg", render_config(cfg));

  struct SeedOutcome {
    train::TrainResult result;
    std::string dir;
  };
  std::vector<SeedOutcome> outcomes(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), thread_budget(), [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i];
    graph::Dataset ds = base;
    if (cfg.resplit) {
      linalg::SeededRng split_rng(seed ^ kSplitSalt);
      ds.split = graph::random_split(ds.labels, ds.num_classes, graph::SplitFractions{}, split_rng);
      graph::validate(ds);
    }
    train::TrainConfig tc = cfg.train;
    tc.seed = seed;
    auto result = train::train(ds, tc);
    const std::string rel = "seed_" + std::to_string(seed);
    ensure_dir(cfg.out_dir / rel);
    std::ostringstream csv;
    train::write_metrics_csv(csv, result.history, cfg.record_timing);
    write_text(cfg.out_dir / rel / "metrics.csv", csv.str());
    model::save_checkpoint(result.model, cfg.out_dir / rel / "model.ckpt");
    outcomes[i] = {std::move(result), rel};
  });

  json runs = json::array();
  std::vector<double> test_accs, val_accs, gaps;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& r = outcomes[i].result;
    const double gap = landscape::generalization_gap(r.train_acc, r.test_acc);
    runs.push_back({{"seed", cfg.seeds[i]},
                    {"selected_epoch", r.selected_epoch},
                    {"train_acc", r.train_acc},
                    {"val_acc", r.val_acc},
                    {"test_acc", r.test_acc},
                    {"generalization_gap", gap},
                    {"checkpoint", outcomes[i].dir + "/model.ckpt"},
                    {"metrics", outcomes[i].dir + "/metrics.csv"}});
    test_accs.push_back(r.test_acc);
    val_accs.push_back(r.val_acc);
    gaps.push_back(gap);
    out << "seed " << cfg.seeds[i] << ": test_acc " << text::format_real(r.test_acc) << " (epoch "
        << r.selected_epoch << ", gap " << text::format_real(gap) << ")\n";
  }
  const json summary = {{"tool", "capgnn"},
                        {"tool_version", kToolVersion},
                        {"config", config_json},
                        {"dataset_fingerprint", fingerprint},
                        {"runs", runs},
                        {"test_acc", mean_std_json(test_accs)},
                        {"best_val_acc", mean_std_json(val_accs)},
                        {"generalization_gap", mean_std_json(gaps)}};
  write_text(cfg.out_dir / "summary.json", summary.dump(2) + "\n");
  const auto ms = mean_std(test_accs);
  out << "test_acc mean " << text::format_real(ms.mean) << " std " << text::format_real(ms.std)
      << " over " << test_accs.size() << " seed(s)\n";
  return kExitOk;
}

struct ProbeArgs {
  fs::path checkpoint;
  fs::path dataset_dir;
  std::string kind = "both";
  std::string alphas;
  double alpha_max = 1.0;
  std::size_t grid_size = 21;
  std::size_t directions = 10;
  std::uint64_t seed = 0;
  double alpha_ref = 0.5;
  std::string loss_mask = "train";
  bool row_normalize = false;
  fs::path out_dir = "probe";
};

int cmd_probe(const ProbeArgs& args, std::ostream& out) {
  std::vector<landscape::DirectionKind> kinds;
  if (args.kind == "both") {
    kinds = {landscape::DirectionKind::weight, landscape::DirectionKind::feature};
  } else {
    kinds = {landscape::parse_direction_kind(args.kind)};
  }
  const auto mask = landscape::parse_loss_mask(args.loss_mask);
  std::vector<double> alphas =
      args.alphas.empty() ? landscape::symmetric_grid(args.alpha_max, args.grid_size) : parse_real_list(args.alphas);
  if (std::find(alphas.begin(), alphas.end(), 0.0) == alphas.end()) {
    throw ConfigError("alphas: grid must contain 0");
  }
  if (args.directions == 0) throw ConfigError("directions: must be >= 1");

  const model::GnnModel m = model::load_checkpoint(args.checkpoint);
  const graph::Dataset ds = load_for_checkpoint(args.dataset_dir, args.row_normalize, m);
  ensure_dir(args.out_dir);

  json report = {{"statistic", "mean over directions of (g(+a) + g(-a))/2 - g(0)"},
                 {"alpha_ref", args.alpha_ref},
                 {"loss_mask", args.loss_mask},
                 {"kinds", json::object()}};
  for (const auto kind : kinds) {
    // Each kind has its own stream so 'both' matches two single-kind runs.
    linalg::SeededRng rng(args.seed * 2 + (kind == landscape::DirectionKind::feature ? 1 : 0));
    const auto dirs = landscape::sample_directions(m, ds, kind, args.directions, rng);
    const auto profile = landscape::probe_landscape(m, ds, dirs, alphas, mask, thread_budget());
    const double s = landscape::sharpness(profile, args.alpha_ref);
    const std::string name = std::string(landscape::to_string(kind));
    std::ostringstream csv;
    landscape::write_profile_csv(csv, profile);
    write_text(args.out_dir / ("profile_" + name + ".csv"), csv.str());
    const std::size_t zero = static_cast<std::size_t>(std::find(alphas.begin(), alphas.end(), 0.0) - alphas.begin());
    report["kinds"][name] = {{"sharpness", s},
                             {"base_loss", profile.losses.front()[zero]},
                             {"directions", args.directions},
                             {"grid", alphas},
                             {"profile", "profile_" + name + ".csv"}};
    out << name << " sharpness " << text::format_real(s) << "\n";
  }
  write_text(args.out_dir / "sharpness.json", report.dump(2) + "\n");
  return kExitOk;
}

struct AttackArgs {
  fs::path checkpoint;
  fs::path dataset_dir;
  std::string sigmas;
  std::size_t trials = 10;
  std::uint64_t seed = 0;
  bool row_normalize = false;
  fs::path out = "attack.csv";
};

int cmd_attack(const AttackArgs& args, std::ostream& out) {
  const auto sigmas = parse_real_list(args.sigmas);
  if (sigmas.empty()) throw ConfigError("sigmas: empty list");
  for (double s : sigmas) {
    if (s < 0.0) throw ConfigError("sigmas: negative value " + text::format_real(s));
  }
  if (args.trials == 0) throw ConfigError("trials: must be >= 1");
  const model::GnnModel m = model::load_checkpoint(args.checkpoint);
  const graph::Dataset ds = load_for_checkpoint(args.dataset_dir, args.row_normalize, m);
  if (graph::mask_count(ds.split.test) == 0) throw ConfigError("dataset: test mask is empty");

  std::ostringstream csv;
  csv << "sigma,mean_acc,std_acc\n";
  for (double sigma : sigmas) {
    // Same noise stream for every sigma (common random numbers).
    linalg::SeededRng rng(args.seed);
    const auto r = landscape::gaussian_attack_eval(m, ds, sigma, args.trials, rng);
    csv << text::format_real(sigma) << ',' << text::format_real(r.mean_acc) << ','
        << text::format_real(r.std_acc) << '\n';
  }
  if (args.out.has_parent_path()) ensure_dir(args.out.parent_path());
  write_text(args.out, csv.str());
  out << csv.str();
  return kExitOk;
}

struct SbmArgs {
  std::string blocks = "100,100";
  double p_in = 0.1;
  double p_out = 0.01;
  double feature_noise = 0.5;
  std::size_t feature_dim = 2;
  std::uint64_t seed = 0;
  fs::path out_dir;
};

int cmd_gen_sbm(const SbmArgs& args, std::ostream& out) {
  graph::SbmParams params;
  params.block_sizes = parse_count_list(args.blocks);
  params.p_in = args.p_in;
  params.p_out = args.p_out;
  params.feature_noise = args.feature_noise;
  params.feature_dim = args.feature_dim;
  linalg::SeededRng rng(args.seed);
  const graph::Dataset ds = graph::generate_sbm(params, rng);
  graph::save_dataset(ds, args.out_dir);
  out << "wrote " << ds.num_nodes << " nodes, " << ds.num_edges() << " edges to " << args.out_dir.string()
      << "\n";
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"capgnn: graph neural network training with co-adversarial weight and feature perturbation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  // train
  auto* train_cmd = app.add_subcommand("train", "train over a seed sweep and write metrics, checkpoints, summary");
  std::string config_path;
  train_cmd->add_option("--config", config_path, "config file (key = value lines) or a manifest.json");
  std::vector<std::pair<std::string, std::string*>> key_options;
  std::vector<std::unique_ptr<std::string>> key_storage;
  for (const auto& doc : config_keys()) {
    key_storage.push_back(std::make_unique<std::string>());
    train_cmd->add_option(std::string("--") + doc.key, *key_storage.back(), doc.help);
    key_options.emplace_back(doc.key, key_storage.back().get());
  }

  // probe
  ProbeArgs probe;
  auto* probe_cmd = app.add_subcommand("probe", "sample loss-landscape profiles around a checkpoint");
  probe_cmd->add_option("--checkpoint", probe.checkpoint, "model checkpoint")->required();
  probe_cmd->add_option("--dataset-dir", probe.dataset_dir, "dataset directory")->required();
  probe_cmd->add_option("--kind", probe.kind, "weight | feature | both")->capture_default_str();
  probe_cmd->add_option("--alphas", probe.alphas, "explicit comma-separated alpha grid (must contain 0)");
  probe_cmd->add_option("--alpha-max", probe.alpha_max, "half-width of the default grid")->capture_default_str();
  probe_cmd->add_option("--grid-size", probe.grid_size, "odd number of grid points")->capture_default_str();
  probe_cmd->add_option("--directions", probe.directions, "random directions per kind")->capture_default_str();
  probe_cmd->add_option("--seed", probe.seed, "direction seed")->capture_default_str();
  probe_cmd->add_option("--alpha-ref", probe.alpha_ref, "alpha used by the sharpness statistic")->capture_default_str();
  probe_cmd->add_option("--loss-mask", probe.loss_mask, "train | test")->capture_default_str();
  probe_cmd->add_flag("--row-normalize-features", probe.row_normalize, "match a run trained with row normalization");
  probe_cmd->add_option("--out-dir", probe.out_dir, "output directory")->capture_default_str();

  // attack
  AttackArgs attack;
  auto* attack_cmd = app.add_subcommand("attack", "Gaussian feature-noise evasion attack on the test split");
  attack_cmd->add_option("--checkpoint", attack.checkpoint, "model checkpoint")->required();
  attack_cmd->add_option("--dataset-dir", attack.dataset_dir, "dataset directory")->required();
  attack_cmd->add_option("--sigmas", attack.sigmas, "comma-separated noise standard deviations")->required();
  attack_cmd->add_option("--trials", attack.trials, "noise draws per sigma")->capture_default_str();
  attack_cmd->add_option("--seed", attack.seed, "noise seed")->capture_default_str();
  attack_cmd->add_flag("--row-normalize-features", attack.row_normalize, "match a run trained with row normalization");
  attack_cmd->add_option("--out", attack.out, "output CSV")->capture_default_str();

  // gen-sbm
  SbmArgs sbm;
  auto* sbm_cmd = app.add_subcommand("gen-sbm", "write a stochastic block model dataset directory");
  sbm_cmd->add_option("--blocks", sbm.blocks, "comma-separated block sizes")->capture_default_str();
  sbm_cmd->add_option("--p-in", sbm.p_in, "within-block edge probability")->capture_default_str();
  sbm_cmd->add_option("--p-out", sbm.p_out, "across-block edge probability")->capture_default_str();
  sbm_cmd->add_option("--feature-noise", sbm.feature_noise, "Gaussian feature jitter std")->capture_default_str();
  sbm_cmd->add_option("--feature-dim", sbm.feature_dim, "feature dimension")->capture_default_str();
  sbm_cmd->add_option("--seed", sbm.seed, "generator seed")->capture_default_str();
  sbm_cmd->add_option("--out-dir", sbm.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  if (train_cmd->parsed()) {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& [key, storage] : key_options) {
      if (train_cmd->count(std::string("--") + key) > 0) overrides.emplace_back(key, *storage);
    }
    return guarded(err, [&] { return cmd_train(config_path, overrides, out); });
  }
  if (probe_cmd->parsed()) return guarded(err, [&] { return cmd_probe(probe, out); });
  if (attack_cmd->parsed()) return guarded(err, [&] { return cmd_attack(attack, out); });
  if (sbm_cmd->parsed()) return guarded(err, [&] { return cmd_gen_sbm(sbm, out); });
  return kExitConfig;
}

}  // namespace capgnn::cli
