#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "capgnn/cli.hpp"
#include "capgnn/error.hpp"
#include "capgnn/text.hpp"
#include "json.hpp"

namespace capgnn::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

const std::vector<KeyDoc>& config_keys() {
  static const std::vector<KeyDoc> keys = {
      {"mode", "training mode: vanilla | wp | fp | cap (default vanilla)"},
      {"epochs", "total training epochs N (default 200)"},
      {"skip_epochs", "standard epochs S before perturbation starts, 0 <= S <= N (default 0)"},
      {"frequency", "alternation frequency F; cap uses features when epoch % F == 0 (default 5)"},
      {"lr", "learning rate (default 0.01)"},
      {"optimizer", "sgd | adam (default sgd)"},
      {"weight_decay", "coupled L2 penalty (default 0)"},
      {"hidden_dims", "comma-separated hidden widths, or 'none' for one layer (default 64)"},
      {"dropout", "dropout on hidden activations while training, in [0, 1) (default 0.5)"},
      {"rho_w", "relative weight-ball radius per layer (default 0.01)"},
      {"rho_x", "absolute feature-ball radius (default 0.01)"},
      {"beta", "PGD inner step size (default 0.001)"},
      {"pgd_steps", "PGD inner iterations T (default 3)"},
      {"p_w", "weight-ball norm: 2 | inf (default 2)"},
      {"p_x", "feature-ball norm: 2 | inf (default inf)"},
      {"seeds", "seed list, e.g. 1..10 or 1,4,7 (default 1..10)"},
      {"dataset_dir", "dataset directory (required)"},
      {"out_dir", "output directory (default runs)"},
      {"eval_every", "evaluate accuracies every k epochs (default 1)"},
      {"model_selection", "best_val | last (default best_val)"},
      {"row_normalize_features", "scale feature rows to unit absolute sum: true | false (default false)"},
      {"resplit", "draw a stratified 60/20/20 split from each seed: true | false (default false)"},
      {"record_timing", "write wall_ms into metrics CSVs: true | false (default false)"},
  };
  return keys;
}

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& msg) {
  throw ConfigError(key + ": " + msg);
}

double real_value(const std::string& key, const std::string& value) {
  const auto v = text::parse_real(value);
  if (!v || !std::isfinite(*v)) bad(key, "expected a real number, got '" + value + "'");
  return *v;
}

std::size_t count_value(const std::string& key, const std::string& value) {
  const auto v = text::parse_int(value);
  if (!v || *v < 0) bad(key, "expected a non-negative integer, got '" + value + "'");
  return static_cast<std::size_t>(*v);
}

bool bool_value(const std::string& key, const std::string& value) {
  const auto v = text::trim(value);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad(key, "expected true or false, got '" + value + "'");
}

std::string join(const std::vector<std::size_t>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(xs[i]);
  }
  return out;
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(const std::string& text_in) {
  std::vector<std::uint64_t> out;
  const auto trimmed = text::trim(text_in);
  if (trimmed.empty()) throw ConfigError("seeds: empty list");
  for (auto item : text::split(trimmed, ',')) {
    item = text::trim(item);
    const auto dots = item.find("..");
    if (dots != std::string_view::npos) {
      const auto lo = text::parse_int(item.substr(0, dots));
      const auto hi = text::parse_int(item.substr(dots + 2));
      if (!lo || !hi || *lo < 0 || *hi < *lo || *hi - *lo > 100000) {
        throw ConfigError("seeds: bad range '" + std::string(item) + "'");
      }
      for (auto s = *lo; s <= *hi; ++s) out.push_back(static_cast<std::uint64_t>(s));
    } else {
      const auto s = text::parse_int(item);
      if (!s || *s < 0) throw ConfigError("seeds: bad seed '" + std::string(item) + "'");
      out.push_back(static_cast<std::uint64_t>(*s));
    }
  }
  return out;
}

std::vector<double> parse_real_list(const std::string& text_in) {
  std::vector<double> out;
  const auto trimmed = text::trim(text_in);
  if (trimmed.empty()) return out;
  for (auto item : text::split(trimmed, ',')) {
    const auto v = text::parse_real(item);
    if (!v || !std::isfinite(*v)) throw ConfigError("expected a real number, got '" + std::string(item) + "'");
    out.push_back(*v);
  }
  return out;
}

std::vector<std::size_t> parse_count_list(const std::string& text_in) {
  std::vector<std::size_t> out;
  const auto trimmed = text::trim(text_in);
  if (trimmed.empty() || trimmed == "none") return out;
  for (auto item : text::split(trimmed, ',')) {
    const auto v = text::parse_int(item);
    if (!v || *v < 0) throw ConfigError("expected a non-negative integer, got '" + std::string(item) + "'");
    out.push_back(static_cast<std::size_t>(*v));
  }
  return out;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& raw) {
  const std::string value(text::trim(raw));
  auto& t = cfg.train;
  try {
    if (key == "mode") {
      t.mode = train::parse_train_mode(value);
    } else if (key == "epochs") {
      t.epochs = count_value(key, value);
    } else if (key == "skip_epochs") {
      t.skip_epochs = count_value(key, value);
    } else if (key == "frequency") {
      t.frequency = count_value(key, value);
    } else if (key == "lr") {
      t.learning_rate = real_value(key, value);
    } else if (key == "optimizer") {
      t.optimizer = train::parse_optimizer(value);
    } else if (key == "weight_decay") {
      t.weight_decay = real_value(key, value);
    } else if (key == "hidden_dims") {
      t.hidden_dims = parse_count_list(value);
    } else if (key == "dropout") {
      t.dropout = real_value(key, value);
    } else if (key == "rho_w") {
      t.perturb.rho_w = real_value(key, value);
    } else if (key == "rho_x") {
      t.perturb.rho_x = real_value(key, value);
    } else if (key == "beta") {
      t.perturb.beta = real_value(key, value);
    } else if (key == "pgd_steps") {
      t.perturb.steps = count_value(key, value);
    } else if (key == "p_w") {
      t.perturb.p_w = linalg::parse_norm_order(value);
    } else if (key == "p_x") {
      t.perturb.p_x = linalg::parse_norm_order(value);
    } else if (key == "seeds") {
      cfg.seeds = parse_seed_list(value);
    } else if (key == "dataset_dir") {
      cfg.dataset_dir = value;
    } else if (key == "out_dir") {
      cfg.out_dir = value;
    } else if (key == "eval_every") {
      t.eval_every = count_value(key, value);
    } else if (key == "model_selection") {
      t.model_selection = train::parse_model_selection(value);
    } else if (key == "row_normalize_features") {
      cfg.row_normalize_features = bool_value(key, value);
    } else if (key == "resplit") {
      cfg.resplit = bool_value(key, value);
    } else if (key == "record_timing") {
      cfg.record_timing = bool_value(key, value);
    } else {
      throw ConfigError("unknown key");
    }
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.rfind(key + ":", 0) == 0) throw;
    bad(key, msg);
  }
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& content,
                                                                   const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view(line);
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = text::trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = text::trim(view.substr(0, eq));
    const auto value = text::trim(view.substr(eq + 1));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::string(key), std::string(value));
  }
  return out;
}

void validate(const RunConfig& cfg) {
  train::validate(cfg.train);
  if (cfg.seeds.empty()) throw ConfigError("seeds: empty list");
  if (cfg.dataset_dir.empty()) throw ConfigError("dataset_dir: required");
  if (cfg.out_dir.empty()) throw ConfigError("out_dir: required");
}

RunConfig load_run_config(const fs::path& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (path.extension() == ".json") {
      json manifest;
      try {
        manifest = json::parse(ss.str());
      } catch (const json::parse_error& e) {
        throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
      }
      if (!manifest.contains("config") || !manifest["config"].is_object()) {
        throw ConfigError("config: manifest has no 'config' object");
      }
      for (const auto& [key, value] : manifest["config"].items()) {
        if (!value.is_string()) throw ConfigError(key + ": manifest values must be strings");
        apply_setting(cfg, key, value.get<std::string>());
      }
    } else {
      for (const auto& [key, value] : parse_config_text(ss.str(), path.string())) {
        apply_setting(cfg, key, value);
      }
    }
  }
  for (const auto& [key, value] : overrides) apply_setting(cfg, key, value);
  validate(cfg);
  return cfg;
}

std::vector<std::pair<std::string, std::string>> resolved_settings(const RunConfig& cfg) {
  const auto& t = cfg.train;
  const auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  std::string seeds;
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    if (i > 0) seeds += ',';
    seeds += std::to_string(cfg.seeds[i]);
  }
  return {
      {"mode", std::string(train::to_string(t.mode))},
      {"epochs", std::to_string(t.epochs)},
      {"skip_epochs", std::to_string(t.skip_epochs)},
      {"frequency", std::to_string(t.frequency)},
      {"lr", text::format_real(t.learning_rate)},
      {"optimizer", std::string(train::to_string(t.optimizer))},
      {"weight_decay", text::format_real(t.weight_decay)},
      {"hidden_dims", t.hidden_dims.empty() ? std::string("none") : join(t.hidden_dims)},
      {"dropout", text::format_real(t.dropout)},
      {"rho_w", text::format_real(t.perturb.rho_w)},
      {"rho_x", text::format_real(t.perturb.rho_x)},
      {"beta", text::format_real(t.perturb.beta)},
      {"pgd_steps", std::to_string(t.perturb.steps)},
      {"p_w", std::string(linalg::to_string(t.perturb.p_w))},
      {"p_x", std::string(linalg::to_string(t.perturb.p_x))},
      {"seeds", seeds},
      {"dataset_dir", cfg.dataset_dir.string()},
      {"out_dir", cfg.out_dir.string()},
      {"eval_every", std::to_string(t.eval_every)},
      {"model_selection", std::string(train::to_string(t.model_selection))},
      {"row_normalize_features", b(cfg.row_normalize_features)},
      {"resplit", b(cfg.resplit)},
      {"record_timing", b(cfg.record_timing)},
  };
}

std::string render_config(const RunConfig& cfg) {
  std::string out = "# resolved capgnn configuration\n";
  for (const auto& [key, value] : resolved_settings(cfg)) out += key + " = " + value + "\n";
  return out;
}

std::string dataset_fingerprint(const fs::path& dir) {
  std::uint64_t h = text::fnv1a("");
  for (const char* name : {"meta.json", "edges.tsv", "features.csv", "labels.txt", "split.json"}) {
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) throw IoError("cannot read " + (dir / name).string());
    std::ostringstream ss;
    ss << in.rdbuf();
    h = text::fnv1a(name, h);
    h = text::fnv1a(ss.str(), h);
  }
  return text::hex64(h);
}

std::size_t thread_budget() {
  const char* env = std::getenv("CAPGNN_THREADS");
  if (env == nullptr) return 1;
  const auto v = text::parse_int(env);
  if (!v || *v < 1) return 1;
  return static_cast<std::size_t>(std::min<std::int64_t>(*v, 256));
}

}  // namespace capgnn::cli
