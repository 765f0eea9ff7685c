#include "capgnn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "json.hpp"

#include "capgnn/error.hpp"
#include "capgnn/text.hpp"

namespace capgnn::graph {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::size_t Dataset::num_edges() const {
  std::size_t loops = 0;
  const auto row_ptr = adjacency.row_ptr();
  const auto col_idx = adjacency.col_idx();
  for (std::size_t i = 0; i < adjacency.rows(); ++i) {
    for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
      if (col_idx[k] == i) ++loops;
    }
  }
  return (adjacency.nnz() - loops) / 2 + loops;
}

std::vector<std::size_t> mask_indices(const NodeMask& mask) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out.push_back(i);
  }
  return out;
}

std::size_t mask_count(const NodeMask& mask) {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

void validate(const Dataset& ds) {
  const std::size_t n = ds.num_nodes;
  if (ds.adjacency.rows() != n || ds.adjacency.cols() != n) {
    throw ConfigError("dataset: adjacency is " + ds.adjacency.shape_string() + ", expected " +
                      std::to_string(n) + "x" + std::to_string(n));
  }
  if (ds.a_hat.rows() != n || ds.a_hat.cols() != n) {
    throw ConfigError("dataset: normalized adjacency has wrong shape " + ds.a_hat.shape_string());
  }
  if (!ds.adjacency.is_symmetric()) throw ConfigError("dataset: adjacency is not symmetric");
  if (ds.features.rows() != n || ds.features.cols() != ds.feature_dim) {
    throw ConfigError("dataset: features are " + ds.features.shape_string() + ", expected " +
                      std::to_string(n) + "x" + std::to_string(ds.feature_dim));
  }
  if (!ds.features.all_finite()) throw ConfigError("dataset: non-finite feature value");
  if (ds.num_classes == 0) throw ConfigError("dataset: num_classes must be >= 1");
  if (ds.labels.size() != n) throw ConfigError("dataset: label count differs from node count");
  for (std::size_t i = 0; i < n; ++i) {
    if (ds.labels[i] >= ds.num_classes) {
      throw ConfigError("dataset: label " + std::to_string(ds.labels[i]) + " of node " +
                        std::to_string(i) + " outside [0, " + std::to_string(ds.num_classes) +
                        ")");
    }
  }
  const Split& s = ds.split;
  if (s.train.size() != n || s.val.size() != n || s.test.size() != n) {
    throw ConfigError("dataset: mask lengths differ from node count");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (int(s.train[i]) + int(s.val[i]) + int(s.test[i]) > 1) {
      throw ConfigError("dataset: node " + std::to_string(i) + " appears in more than one split");
    }
  }
  if (mask_count(s.train) == 0) throw ConfigError("dataset: train mask is empty");
}

CsrMatrix normalize_adjacency(const CsrMatrix& a) {
  if (a.rows() != a.cols()) {
    throw ShapeError("normalize_adjacency: matrix is not square (" + a.shape_string() + ")");
  }
  if (!a.is_symmetric()) throw ShapeError("normalize_adjacency: matrix is not symmetric");
  const std::size_t n = a.rows();
  const auto row_ptr = a.row_ptr();
  const auto col_idx = a.col_idx();
  const auto values = a.values();

  std::vector<double> degree(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 1.0;
    for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
      if (values[k] < 0.0) throw ShapeError("normalize_adjacency: negative edge weight");
      deg += values[k];
    }
    degree[i] = deg;
  }

  // Merge the implicit identity into each (already sorted) row.
  std::vector<std::size_t> out_ptr(n + 1, 0);
  std::vector<std::size_t> out_idx;
  std::vector<double> out_val;
  out_idx.reserve(a.nnz() + n);
  out_val.reserve(a.nnz() + n);
  for (std::size_t i = 0; i < n; ++i) {
    bool diag_done = false;
    for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
      const std::size_t j = col_idx[k];
      if (!diag_done && j > i) {
        out_idx.push_back(i);
        out_val.push_back(1.0 / degree[i]);
        diag_done = true;
      }
      double v = values[k];
      if (j == i) {
        v += 1.0;
        diag_done = true;
      }
      out_idx.push_back(j);
      out_val.push_back(v / std::sqrt(degree[i] * degree[j]));
    }
    if (!diag_done) {
      out_idx.push_back(i);
      out_val.push_back(1.0 / degree[i]);
    }
    out_ptr[i + 1] = out_idx.size();
  }
  return CsrMatrix(n, n, std::move(out_ptr), std::move(out_idx), std::move(out_val));
}

DenseMatrix row_normalize(DenseMatrix features) {
  for (std::size_t i = 0; i < features.rows(); ++i) {
    auto row = features.row(i);
    double sum = 0.0;
    for (double v : row) sum += std::abs(v);
    if (sum == 0.0) continue;
    for (double& v : row) v /= sum;
  }
  return features;
}

Dataset make_dataset(CsrMatrix adjacency, DenseMatrix features, std::vector<std::size_t> labels,
                     std::size_t num_classes, Split split) {
  Dataset ds;
  ds.num_nodes = adjacency.rows();
  ds.feature_dim = features.cols();
  ds.num_classes = num_classes;
  ds.a_hat = normalize_adjacency(adjacency);
  ds.adjacency = std::move(adjacency);
  ds.features = std::move(features);
  ds.labels = std::move(labels);
  ds.split = std::move(split);
  validate(ds);
  return ds;
}

Dataset with_features(const Dataset& ds, DenseMatrix features) {
  if (!features.same_shape(ds.features)) {
    throw ShapeError("with_features: expected " + ds.features.shape_string() + ", got " +
                     features.shape_string());
  }
  Dataset out = ds;
  out.features = std::move(features);
  return out;
}

// ---------------------------------------------------------------------------
// Directory format

namespace {

[[noreturn]] void fail(const fs::path& file, std::size_t line, const std::string& msg) {
  throw IoError(file.filename().string() + ":" + std::to_string(line) + ": " + msg);
}

[[noreturn]] void fail(const fs::path& file, const std::string& msg) {
  throw IoError(file.filename().string() + ": " + msg);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename Fn>
void for_each_line(const std::string& content, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < content.size()) {
    std::size_t end = content.find('\n', start);
    if (end == std::string::npos) end = content.size();
    ++line_no;
    fn(line_no, std::string_view(content).substr(start, end - start));
    start = end + 1;
  }
}

json read_json(const fs::path& path) {
  const std::string content = read_file(path);
  try {
    return json::parse(content);
  } catch (const json::parse_error& e) {
    fail(path, std::string("invalid JSON: ") + e.what());
  }
}

std::size_t json_count(const json& j, const char* key, const fs::path& file) {
  if (!j.is_object() || !j.contains(key) || !j[key].is_number_integer() || j[key].get<long long>() < 0) {
    fail(file, std::string("missing or invalid non-negative integer '") + key + "'");
  }
  return j[key].get<std::size_t>();
}

NodeMask read_mask(const json& j, const char* key, std::size_t n, const fs::path& file) {
  NodeMask mask(n, false);
  if (!j.is_object() || !j.contains(key) || !j[key].is_array()) {
    fail(file, std::string("missing array '") + key + "'");
  }
  for (const auto& v : j[key]) {
    if (!v.is_number_integer() || v.get<long long>() < 0 || v.get<std::size_t>() >= n) {
      fail(file, std::string("node id out of range in '") + key + "'");
    }
    const std::size_t id = v.get<std::size_t>();
    if (mask[id]) fail(file, std::string("duplicate node id in '") + key + "'");
    mask[id] = true;
  }
  return mask;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

Dataset load_dataset(const fs::path& dir, const LoadOptions& options) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());

  const fs::path meta_path = dir / "meta.json";
  const json meta = read_json(meta_path);
  const std::size_t n = json_count(meta, "n", meta_path);
  const std::size_t d = json_count(meta, "d", meta_path);
  const std::size_t k = json_count(meta, "num_classes", meta_path);
  if (n == 0 || d == 0 || k == 0) fail(meta_path, "n, d and num_classes must be positive");

  // Edges: one undirected pair per line; mirrored here.
  const fs::path edges_path = dir / "edges.tsv";
  struct RawEdge {
    std::size_t lo, hi, line;
  };
  std::vector<RawEdge> raw;
  for_each_line(read_file(edges_path), [&](std::size_t line_no, std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) return;
    const auto fields = text::split(line, '\t');
    if (fields.size() != 2) fail(edges_path, line_no, "expected 'u<TAB>v'");
    const auto u = text::parse_int(fields[0]);
    const auto v = text::parse_int(fields[1]);
    if (!u || !v) fail(edges_path, line_no, "node ids must be integers");
    if (*u < 0 || *v < 0 || static_cast<std::size_t>(*u) >= n ||
        static_cast<std::size_t>(*v) >= n) {
      fail(edges_path, line_no, "node id out of range [0, " + std::to_string(n) + ")");
    }
    const auto a = static_cast<std::size_t>(*u);
    const auto b = static_cast<std::size_t>(*v);
    raw.push_back({std::min(a, b), std::max(a, b), line_no});
  });
  std::sort(raw.begin(), raw.end(), [](const RawEdge& x, const RawEdge& y) {
    return x.lo != y.lo ? x.lo < y.lo : (x.hi != y.hi ? x.hi < y.hi : x.line < y.line);
  });
  std::vector<CsrMatrix::Entry> entries;
  entries.reserve(raw.size() * 2);
  for (std::size_t e = 0; e < raw.size(); ++e) {
    if (e > 0 && raw[e].lo == raw[e - 1].lo && raw[e].hi == raw[e - 1].hi) {
      fail(edges_path, raw[e].line,
           "duplicate edge " + std::to_string(raw[e].lo) + "-" + std::to_string(raw[e].hi) +
               " (first listed on line " + std::to_string(raw[e - 1].line) + ")");
    }
    entries.push_back({raw[e].lo, raw[e].hi, 1.0});
    if (raw[e].lo != raw[e].hi) entries.push_back({raw[e].hi, raw[e].lo, 1.0});
  }
  CsrMatrix adjacency = CsrMatrix::from_entries(n, n, std::move(entries));

  const fs::path features_path = dir / "features.csv";
  std::vector<double> feats;
  feats.reserve(n * d);
  std::size_t feature_rows = 0;
  for_each_line(read_file(features_path), [&](std::size_t line_no, std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) return;
    if (feature_rows == n) fail(features_path, line_no, "more than n = " + std::to_string(n) + " rows");
    const auto fields = text::split(line, ',');
    if (fields.size() != d) {
      fail(features_path, line_no,
           "expected " + std::to_string(d) + " values, got " + std::to_string(fields.size()));
    }
    for (const auto f : fields) {
      const auto v = text::parse_real(f);
      if (!v || !std::isfinite(*v)) fail(features_path, line_no, "invalid real '" + std::string(f) + "'");
      feats.push_back(*v);
    }
    ++feature_rows;
  });
  if (feature_rows != n) {
    fail(features_path, "expected " + std::to_string(n) + " rows, got " + std::to_string(feature_rows));
  }
  DenseMatrix features(n, d, std::move(feats));
  if (options.row_normalize_features) features = row_normalize(std::move(features));

  const fs::path labels_path = dir / "labels.txt";
  std::vector<std::size_t> labels;
  labels.reserve(n);
  for_each_line(read_file(labels_path), [&](std::size_t line_no, std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) return;
    const auto v = text::parse_int(line);
    if (!v) fail(labels_path, line_no, "label must be an integer");
    if (*v < 0 || static_cast<std::size_t>(*v) >= k) {
      fail(labels_path, line_no, "label " + std::to_string(*v) + " outside [0, " + std::to_string(k) + ")");
    }
    if (labels.size() == n) fail(labels_path, line_no, "more than n labels");
    labels.push_back(static_cast<std::size_t>(*v));
  });
  if (labels.size() != n) {
    fail(labels_path, "expected " + std::to_string(n) + " labels, got " + std::to_string(labels.size()));
  }

  const fs::path split_path = dir / "split.json";
  const json split_json = read_json(split_path);
  Split split{read_mask(split_json, "train", n, split_path), read_mask(split_json, "val", n, split_path),
              read_mask(split_json, "test", n, split_path)};

  try {
    return make_dataset(std::move(adjacency), std::move(features), std::move(labels), k, std::move(split));
  } catch (const ConfigError& e) {
    throw IoError(dir.string() + ": " + e.what());
  }
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());

  json meta = {{"n", ds.num_nodes}, {"d", ds.feature_dim}, {"num_classes", ds.num_classes}};
  write_file(dir / "meta.json", meta.dump() + "\n");

  std::string edges;
  const auto row_ptr = ds.adjacency.row_ptr();
  const auto col_idx = ds.adjacency.col_idx();
  for (std::size_t i = 0; i < ds.num_nodes; ++i) {
    for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
      if (col_idx[k] < i) continue;
      edges += std::to_string(i);
      edges += '\t';
      edges += std::to_string(col_idx[k]);
      edges += '\n';
    }
  }
  write_file(dir / "edges.tsv", edges);

  std::string feats;
  for (std::size_t i = 0; i < ds.num_nodes; ++i) {
    const auto row = ds.features.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j > 0) feats += ',';
      feats += text::format_real(row[j]);
    }
    feats += '\n';
  }
  write_file(dir / "features.csv", feats);

  std::string labels;
  for (std::size_t l : ds.labels) labels += std::to_string(l) + "\n";
  write_file(dir / "labels.txt", labels);

  json split = {{"train", mask_indices(ds.split.train)},
                {"val", mask_indices(ds.split.val)},
                {"test", mask_indices(ds.split.test)}};
  write_file(dir / "split.json", split.dump() + "\n");
}

// ---------------------------------------------------------------------------

Split random_split(const std::vector<std::size_t>& labels, std::size_t num_classes,
                   const SplitFractions& fractions, SeededRng& rng) {
  const double sum = fractions.train + fractions.val + fractions.test;
  if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0 || std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("random_split: fractions must be non-negative and sum to 1");
  }
  std::vector<std::vector<std::size_t>> members(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) throw ConfigError("random_split: label out of range");
    members[labels[i]].push_back(i);
  }
  const std::size_t n = labels.size();
  Split split{NodeMask(n, false), NodeMask(n, false), NodeMask(n, false)};
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& ids = members[c];
    if (ids.empty()) continue;
    if (ids.size() < 3) {
      throw ConfigError("random_split: class " + std::to_string(c) + " has only " +
                        std::to_string(ids.size()) + " member(s); need at least 3 to stratify");
    }
    // Fisher-Yates with the explicit generator.
    for (std::size_t i = ids.size() - 1; i > 0; --i) {
      std::swap(ids[i], ids[rng.uniform_index(i + 1)]);
    }
    const auto count = static_cast<double>(ids.size());
    const auto n_train = std::min(ids.size(), static_cast<std::size_t>(std::llround(fractions.train * count)));
    const auto n_val =
        std::min(ids.size() - n_train, static_cast<std::size_t>(std::llround(fractions.val * count)));
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (r < n_train) {
        split.train[ids[r]] = true;
      } else if (r < n_train + n_val) {
        split.val[ids[r]] = true;
      } else {
        split.test[ids[r]] = true;
      }
    }
  }
  return split;
}

void validate(const SbmParams& params) {
  if (params.block_sizes.empty()) throw ConfigError("sbm: at least one block is required");
  for (std::size_t s : params.block_sizes) {
    if (s == 0) throw ConfigError("sbm: block sizes must be >= 1");
  }
  if (!(params.p_out >= 0.0 && params.p_out <= params.p_in && params.p_in <= 1.0)) {
    throw ConfigError("sbm: need 0 <= p_out <= p_in <= 1");
  }
  if (!(params.feature_noise >= 0.0) || !std::isfinite(params.feature_noise)) {
    throw ConfigError("sbm: feature_noise must be a finite non-negative number");
  }
  if (params.feature_dim == 0) throw ConfigError("sbm: feature_dim must be >= 1");
}

Dataset generate_sbm(const SbmParams& params, SeededRng& rng) {
  validate(params);
  std::vector<std::size_t> labels;
  for (std::size_t b = 0; b < params.block_sizes.size(); ++b) {
    labels.insert(labels.end(), params.block_sizes[b], b);
  }
  const std::size_t n = labels.size();

  std::vector<CsrMatrix::Entry> entries;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double p = labels[i] == labels[j] ? params.p_in : params.p_out;
      if (rng.uniform() < p) {
        entries.push_back({i, j, 1.0});
        entries.push_back({j, i, 1.0});
      }
    }
  }
  CsrMatrix adjacency = CsrMatrix::from_entries(n, n, std::move(entries));

  DenseMatrix features(n, params.feature_dim);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = features.row(i);
    for (double& v : row) v = params.feature_noise * rng.normal();
    row[labels[i] % params.feature_dim] += 1.0;
  }

  const std::size_t k = params.block_sizes.size();
  Split split = random_split(labels, k, SplitFractions{}, rng);
  return make_dataset(std::move(adjacency), std::move(features), std::move(labels), k, std::move(split));
}

}  // namespace capgnn::graph
