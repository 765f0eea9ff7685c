#include "capgnn/model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "capgnn/error.hpp"

namespace capgnn::model {

std::string_view to_string(Backbone b) noexcept {
  switch (b) {
    case Backbone::gcn:
      return "gcn";
  }
  return "unknown";
}

void check_weights(const GnnModel& model, std::span<const DenseMatrix> weights) {
  if (weights.size() + 1 != model.layer_dims.size()) {
    throw ShapeError("weight list has " + std::to_string(weights.size()) + " layers, model has " +
                     std::to_string(model.layer_dims.size() - 1));
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows() != model.layer_dims[l] || weights[l].cols() != model.layer_dims[l + 1]) {
      throw ShapeError("layer " + std::to_string(l + 1) + " weight is " + weights[l].shape_string() +
                       ", expected " + std::to_string(model.layer_dims[l]) + "x" +
                       std::to_string(model.layer_dims[l + 1]));
    }
  }
}

void validate(const GnnModel& model) {
  if (model.layer_dims.size() < 2) throw ConfigError("model: need at least two layer dims");
  for (std::size_t d : model.layer_dims) {
    if (d == 0) throw ConfigError("model: layer dims must be >= 1");
  }
  if (!(model.dropout_rate >= 0.0 && model.dropout_rate < 1.0)) {
    throw ConfigError("model: dropout rate must lie in [0, 1)");
  }
  check_weights(model, model.weights);
  for (const auto& w : model.weights) {
    if (!w.all_finite()) throw ConfigError("model: non-finite weight");
  }
}

GnnModel init_model(std::span<const std::size_t> layer_dims, SeededRng& rng, double dropout_rate) {
  GnnModel model;
  model.layer_dims.assign(layer_dims.begin(), layer_dims.end());
  model.dropout_rate = dropout_rate;
  if (model.layer_dims.size() < 2) throw ConfigError("init_model: need at least two layer dims");
  for (std::size_t l = 0; l + 1 < model.layer_dims.size(); ++l) {
    const std::size_t fan_in = model.layer_dims[l];
    const std::size_t fan_out = model.layer_dims[l + 1];
    if (fan_in == 0 || fan_out == 0) throw ConfigError("init_model: layer dims must be >= 1");
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    DenseMatrix w(fan_in, fan_out);
    for (double& v : w.data()) v = rng.uniform(-bound, bound);
    model.weights.push_back(std::move(w));
  }
  validate(model);
  return model;
}

namespace {

void check_inputs(const GnnModel& model, const CsrMatrix& a_hat, const DenseMatrix& x_eff,
                  std::span<const DenseMatrix> w_eff) {
  check_weights(model, w_eff);
  if (a_hat.rows() != a_hat.cols()) throw ShapeError("forward: Â must be square");
  if (x_eff.rows() != a_hat.rows() || x_eff.cols() != model.layer_dims.front()) {
    throw ShapeError("forward: features are " + x_eff.shape_string() + ", expected " +
                     std::to_string(a_hat.rows()) + "x" + std::to_string(model.layer_dims.front()));
  }
}

ForwardCache run_forward(const GnnModel& model, const CsrMatrix& a_hat, const DenseMatrix& x_eff,
                         std::span<const DenseMatrix> w_eff, bool dropout, SeededRng* rng) {
  check_inputs(model, a_hat, x_eff, w_eff);
  const std::size_t depth = w_eff.size();
  ForwardCache cache;
  cache.aggregated.reserve(depth);
  cache.pre_activations.reserve(depth);
  cache.activations.reserve(depth + 1);
  cache.activations.push_back(x_eff);
  const double keep = 1.0 - model.dropout_rate;
  for (std::size_t l = 0; l < depth; ++l) {
    cache.aggregated.push_back(linalg::spmm(a_hat, cache.activations.back()));
    cache.pre_activations.push_back(linalg::matmul(cache.aggregated.back(), w_eff[l]));
    DenseMatrix h = cache.pre_activations.back();
    if (l + 1 < depth) {
      for (double& v : h.data()) v = v > 0.0 ? v : 0.0;
      if (dropout) {
        DenseMatrix scale(h.rows(), h.cols());
        auto s = scale.data();
        auto hv = h.data();
        for (std::size_t k = 0; k < s.size(); ++k) {
          s[k] = rng->uniform() < keep ? 1.0 / keep : 0.0;
          hv[k] *= s[k];
        }
        cache.dropout_scales.push_back(std::move(scale));
      }
    }
    cache.activations.push_back(std::move(h));
  }
  return cache;
}

}  // namespace

ForwardCache forward(const GnnModel& model, const CsrMatrix& a_hat, const DenseMatrix& x_eff,
                     std::span<const DenseMatrix> w_eff, bool training, SeededRng& rng) {
  const bool dropout = training && model.dropout_rate > 0.0;
  return run_forward(model, a_hat, x_eff, w_eff, dropout, &rng);
}

ForwardCache forward(const GnnModel& model, const CsrMatrix& a_hat, const DenseMatrix& x_eff,
                     std::span<const DenseMatrix> w_eff) {
  return run_forward(model, a_hat, x_eff, w_eff, false, nullptr);
}

namespace {

void check_logits(const DenseMatrix& logits, std::span<const std::size_t> labels,
                  const NodeMask& mask, const char* op) {
  if (labels.size() != logits.rows() || mask.size() != logits.rows()) {
    throw ShapeError(std::string(op) + ": labels/mask length does not match " +
                     std::to_string(logits.rows()) + " rows");
  }
  if (graph::mask_count(mask) == 0) throw ConfigError(std::string(op) + ": empty mask");
}

double log_sum_exp(std::span<const double> row) {
  const double m = *std::max_element(row.begin(), row.end());
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double v : row) acc += std::exp(v - m);
  return m + std::log(acc);
}

}  // namespace

double masked_cross_entropy(const DenseMatrix& logits, std::span<const std::size_t> labels,
                            const NodeMask& mask) {
  check_logits(logits, labels, mask, "masked_cross_entropy");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (!mask[i]) continue;
    const auto row = logits.row(i);
    if (labels[i] >= row.size()) throw ShapeError("masked_cross_entropy: label out of range");
    total += log_sum_exp(row) - row[labels[i]];
    ++count;
  }
  return total / static_cast<double>(count);
}

Gradients backward(const GnnModel& model, const CsrMatrix& a_hat, const DenseMatrix& x_eff,
                   std::span<const DenseMatrix> w_eff, const ForwardCache& cache,
                   std::span<const std::size_t> labels, const NodeMask& mask,
                   GradientRequest request) {
  check_inputs(model, a_hat, x_eff, w_eff);
  const std::size_t depth = w_eff.size();
  if (cache.activations.size() != depth + 1 || cache.aggregated.size() != depth ||
      cache.pre_activations.size() != depth || !cache.activations.front().same_shape(x_eff)) {
    throw ShapeError("backward: cache does not match the model and inputs");
  }
  if (!cache.dropout_scales.empty() && cache.dropout_scales.size() + 1 != depth) {
    throw ShapeError("backward: cache dropout masks do not match the model depth");
  }
  const DenseMatrix& logits = cache.logits();
  check_logits(logits, labels, mask, "backward");

  // δᴸ = (softmax - onehot) / |mask| on masked rows.
  const double inv_count = 1.0 / static_cast<double>(graph::mask_count(mask));
  DenseMatrix delta(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (!mask[i]) continue;
    const auto row = logits.row(i);
    const double lse = log_sum_exp(row);
    auto out = delta.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) out[c] = std::exp(row[c] - lse) * inv_count;
    out[labels[i]] -= inv_count;
  }

  Gradients grads;
  if (request.weights) grads.d_weights.resize(depth);
  for (std::size_t l = depth; l-- > 0;) {
    if (request.weights) grads.d_weights[l] = linalg::matmul_tn(cache.aggregated[l], delta);
    if (l == 0 && !request.features) break;
    DenseMatrix d_input = linalg::spmm(a_hat, linalg::matmul_nt(delta, w_eff[l]));
    if (l == 0) {
      grads.d_features = std::move(d_input);
      break;
    }
    const auto pre = cache.pre_activations[l - 1].data();
    auto g = d_input.data();
    if (!cache.dropout_scales.empty()) {
      const auto s = cache.dropout_scales[l - 1].data();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] = pre[k] > 0.0 ? g[k] * s[k] : 0.0;
    } else {
      for (std::size_t k = 0; k < g.size(); ++k) g[k] = pre[k] > 0.0 ? g[k] : 0.0;
    }
    delta = std::move(d_input);
  }
  return grads;
}

double accuracy(const DenseMatrix& logits, std::span<const std::size_t> labels,
                const NodeMask& mask) {
  check_logits(logits, labels, mask, "accuracy");
  std::size_t correct = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (!mask[i]) continue;
    const auto row = logits.row(i);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += best == labels[i] ? 1 : 0;
    ++count;
  }
  return static_cast<double>(correct) / static_cast<double>(count);
}

double evaluate(const GnnModel& model, const Dataset& ds, const NodeMask& mask) {
  const ForwardCache cache = forward(model, ds.a_hat, ds.features, model.weights);
  return accuracy(cache.logits(), ds.labels, mask);
}

double loss_at(const GnnModel& model, const Dataset& ds, const DenseMatrix& x_eff,
               std::span<const DenseMatrix> w_eff, const NodeMask& mask) {
  const ForwardCache cache = forward(model, ds.a_hat, x_eff, w_eff);
  return masked_cross_entropy(cache.logits(), ds.labels, mask);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'A', 'P', 'G', 'N', 'N', 'W', '\0'};
constexpr std::uint8_t kVersion = 1;

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t b = 0; b < sizeof(T); ++b) {
    out.push_back(static_cast<char>((value >> (8 * b)) & 0xff));
  }
}

void put_f64(std::string& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  Reader(std::string data, std::filesystem::path path) : data_(std::move(data)), path_(std::move(path)) {}

  template <typename T>
  T get_le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) {
      v |= static_cast<T>(static_cast<unsigned char>(data_[pos_ + b])) << (8 * b);
    }
    pos_ += sizeof(T);
    return v;
  }
  double get_f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }
  std::string_view bytes(std::size_t n) {
    need(n);
    std::string_view v(data_.data() + pos_, n);
    pos_ += n;
    return v;
  }
  bool at_end() const { return pos_ == data_.size(); }
  [[noreturn]] void fail(const std::string& msg) const {
    throw IoError(path_.string() + ": " + msg);
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) fail("truncated checkpoint");
  }
  std::string data_;
  std::filesystem::path path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const GnnModel& model, const std::filesystem::path& path) {
  validate(model);
  std::string out(kMagic.begin(), kMagic.end());
  out.push_back('L');
  out.push_back(static_cast<char>(kVersion));
  put_le(out, static_cast<std::uint16_t>(model.backbone));
  put_le(out, static_cast<std::uint32_t>(model.layer_dims.size()));
  put_f64(out, model.dropout_rate);
  for (std::size_t d : model.layer_dims) put_le(out, static_cast<std::uint64_t>(d));
  for (const auto& w : model.weights) {
    for (double v : w.data()) put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for checkpoint " + path.string());
}

GnnModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path);
  if (r.bytes(kMagic.size()) != std::string_view(kMagic.data(), kMagic.size())) r.fail("not a checkpoint file");
  if (r.bytes(1) != "L") r.fail("unsupported byte order");
  if (r.get_le<std::uint8_t>() != kVersion) r.fail("unsupported checkpoint version");
  const auto backbone = r.get_le<std::uint16_t>();
  if (backbone != static_cast<std::uint16_t>(Backbone::gcn)) r.fail("unknown backbone id");
  const auto dim_count = r.get_le<std::uint32_t>();
  if (dim_count < 2 || dim_count > 1024) r.fail("implausible layer count");
  GnnModel model;
  model.backbone = Backbone::gcn;
  model.dropout_rate = r.get_f64();
  for (std::uint32_t i = 0; i < dim_count; ++i) {
    const auto d = r.get_le<std::uint64_t>();
    if (d == 0 || d > (std::uint64_t{1} << 32)) r.fail("implausible layer dimension");
    model.layer_dims.push_back(static_cast<std::size_t>(d));
  }
  for (std::size_t l = 0; l + 1 < model.layer_dims.size(); ++l) {
    DenseMatrix w(model.layer_dims[l], model.layer_dims[l + 1]);
    for (double& v : w.data()) v = r.get_f64();
    model.weights.push_back(std::move(w));
  }
  if (!r.at_end()) r.fail("trailing bytes after weights");
  try {
    validate(model);
  } catch (const std::invalid_argument& e) {
    r.fail(e.what());
  }
  return model;
}

}  // namespace capgnn::model
