#pragma once

// Fully connected ReLU network: affine -> ReLU on every hidden layer, affine output.
// Parameters are stored flat, layer by layer: W_l row-major (out x in), then b_l.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vfm/errors.hpp"

namespace vfm {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void check_widths(std::span<const std::size_t> widths) {
  if (widths.size() < 2) throw ContractError("network needs at least an input and an output width");
  for (auto w : widths) {
    if (w == 0) throw ContractError("network layer width must be positive");
  }
  if (widths.back() != 1) throw ContractError("network output width must be 1");
}

inline std::size_t network_parameter_count(std::span<const std::size_t> widths) {
  std::size_t n = 0;
  for (std::size_t l = 1; l < widths.size(); ++l) n += widths[l] * widths[l - 1] + widths[l];
  return n;
}

// Non-owning view of a parameter vector with a known layer layout.
class NetworkView {
 public:
  using ConstMatrixMap = Eigen::Map<const RowMajorMatrix>;
  using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

  NetworkView(std::span<const std::size_t> widths, std::span<const double> params)
      : widths_(widths), params_(params) {
    check_widths(widths);
    if (params.size() != network_parameter_count(widths)) {
      throw ContractError("network parameter vector has wrong length");
    }
    offsets_.reserve(widths.size());
    std::size_t off = 0;
    for (std::size_t l = 1; l < widths.size(); ++l) {
      offsets_.push_back(off);
      off += widths[l] * widths[l - 1] + widths[l];
    }
  }

  std::size_t layers() const { return widths_.size() - 1; }
  std::size_t input_size() const { return widths_.front(); }
  std::span<const std::size_t> widths() const { return widths_; }
  std::span<const double> parameters() const { return params_; }

  // Offset of layer `l` (0-based) weights in the flat vector; bias follows the weights.
  std::size_t weight_offset(std::size_t l) const { return offsets_[l]; }
  std::size_t bias_offset(std::size_t l) const {
    return offsets_[l] + widths_[l + 1] * widths_[l];
  }

  ConstMatrixMap weights(std::size_t l) const {
    return ConstMatrixMap(params_.data() + weight_offset(l), static_cast<Eigen::Index>(widths_[l + 1]),
                          static_cast<Eigen::Index>(widths_[l]));
  }
  ConstVectorMap bias(std::size_t l) const {
    return ConstVectorMap(params_.data() + bias_offset(l), static_cast<Eigen::Index>(widths_[l + 1]));
  }

 private:
  std::span<const std::size_t> widths_;
  std::span<const double> params_;
  std::vector<std::size_t> offsets_;
};

struct NetworkParameters {
  std::vector<std::size_t> widths;
  std::vector<double> values;
  std::uint64_t seed = 0;

  NetworkView view() const { return NetworkView(widths, values); }
  std::size_t size() const { return values.size(); }
  friend bool operator==(const NetworkParameters&, const NetworkParameters&) = default;
};

inline std::vector<std::size_t> make_widths(std::size_t inputs, std::span<const std::size_t> hidden) {
  std::vector<std::size_t> w;
  w.push_back(inputs);
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(1);
  return w;
}

// Per-parameter prior variance: first layer 1/m, later layers 2/m, where m is the
// layer's input count. Biases share their layer's weight variance.
inline std::vector<double> he_variances(std::span<const std::size_t> widths) {
  check_widths(widths);
  std::vector<double> var;
  var.reserve(network_parameter_count(widths));
  for (std::size_t l = 1; l < widths.size(); ++l) {
    const double fan_in = static_cast<double>(widths[l - 1]);
    const double v = (l == 1 ? 1.0 : 2.0) / fan_in;
    var.insert(var.end(), widths[l] * widths[l - 1] + widths[l], v);
  }
  return var;
}

inline NetworkParameters he_initialize(std::vector<std::size_t> widths, std::uint64_t seed) {
  check_widths(widths);
  NetworkParameters net;
  net.widths = std::move(widths);
  net.seed = seed;
  net.values.assign(network_parameter_count(net.widths), 0.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto view = net.view();
  for (std::size_t l = 0; l < view.layers(); ++l) {
    const double sd = std::sqrt((l == 0 ? 1.0 : 2.0) / static_cast<double>(net.widths[l]));
    const std::size_t n = net.widths[l + 1] * net.widths[l];
    const std::size_t off = view.weight_offset(l);
    for (std::size_t i = 0; i < n; ++i) net.values[off + i] = sd * normal(rng);
  }
  return net;
}

inline double network_forward(const NetworkView& net, std::span<const double> input) {
  if (input.size() != net.input_size()) {
    throw ContractError("network input has length " + std::to_string(input.size()) +
                        ", expected " + std::to_string(net.input_size()));
  }
  Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(input.data(), static_cast<Eigen::Index>(input.size()));
  for (std::size_t l = 0; l < net.layers(); ++l) {
    Eigen::VectorXd z = net.weights(l) * a + net.bias(l);
    if (l + 1 < net.layers()) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a(0);
}

// Activations kept for the backward pass of a batch (columns are samples).
struct BatchCache {
  std::vector<Eigen::MatrixXd> activations;  // a_0 (input) .. a_{L-1}
  std::vector<Eigen::MatrixXd> pre;          // z_1 .. z_{L-1} of hidden layers
};

inline Eigen::RowVectorXd network_forward_batch(const NetworkView& net, const Eigen::MatrixXd& inputs,
                                                BatchCache* cache = nullptr) {
  if (static_cast<std::size_t>(inputs.rows()) != net.input_size()) {
    throw ContractError("network batch input has wrong row count");
  }
  if (cache) {
    cache->activations.clear();
    cache->pre.clear();
    cache->activations.push_back(inputs);
  }
  Eigen::MatrixXd a = inputs;
  for (std::size_t l = 0; l < net.layers(); ++l) {
    Eigen::MatrixXd z = net.weights(l) * a;
    z.colwise() += net.bias(l);
    if (l + 1 < net.layers()) {
      if (cache) cache->pre.push_back(z);
      a = z.cwiseMax(0.0);
      if (cache) cache->activations.push_back(a);
    } else {
      a = std::move(z);
    }
  }
  return a.row(0);
}

// Accumulates d(sum_j dout_j * y_j)/d(params) into `grad` (same layout as the parameters).
inline void network_backward_batch(const NetworkView& net, const BatchCache& cache,
                                   const Eigen::RowVectorXd& dout, std::span<double> grad) {
  if (grad.size() != net.parameters().size()) throw ContractError("gradient buffer has wrong length");
  if (cache.activations.size() != net.layers()) throw ContractError("batch cache does not match network");
  Eigen::MatrixXd delta = dout;
  for (std::size_t li = net.layers(); li-- > 0;) {
    const auto rows = static_cast<Eigen::Index>(net.widths()[li + 1]);
    const auto cols = static_cast<Eigen::Index>(net.widths()[li]);
    Eigen::Map<RowMajorMatrix> dw(grad.data() + net.weight_offset(li), rows, cols);
    Eigen::Map<Eigen::VectorXd> db(grad.data() + net.bias_offset(li), rows);
    dw.noalias() += delta * cache.activations[li].transpose();
    const Eigen::VectorXd bias_step = delta.rowwise().sum();
    db += bias_step;
    if (li == 0) break;
    Eigen::MatrixXd back = net.weights(li).transpose() * delta;
    // ReLU'(z) with ties to the zero branch.
    delta = back.cwiseProduct((cache.pre[li - 1].array() > 0.0).cast<double>().matrix());
  }
}

// --- serialization -------------------------------------------------------------
//
// {"format": "vfm-network", "version": 1, "seed": <u64>, "widths": [...],
//  "layers": [{"weights": [row-major], "bias": [...]}, ...]}

inline nlohmann::json network_to_json(const NetworkParameters& net) {
  nlohmann::json j;
  j["format"] = "vfm-network";
  j["version"] = 1;
  j["seed"] = net.seed;
  j["widths"] = net.widths;
  const auto view = net.view();
  auto layers = nlohmann::json::array();
  for (std::size_t l = 0; l < view.layers(); ++l) {
    const auto w0 = net.values.begin() + static_cast<std::ptrdiff_t>(view.weight_offset(l));
    const auto b0 = net.values.begin() + static_cast<std::ptrdiff_t>(view.bias_offset(l));
    const auto nb = static_cast<std::ptrdiff_t>(net.widths[l + 1]);
    layers.push_back({{"weights", std::vector<double>(w0, b0)},
                      {"bias", std::vector<double>(b0, b0 + nb)}});
  }
  j["layers"] = std::move(layers);
  return j;
}

inline NetworkParameters network_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "vfm-network") throw ConfigError("not a vfm-network document");
  if (j.value("version", 0) != 1) throw ConfigError("unsupported vfm-network version");
  NetworkParameters net;
  net.seed = j.at("seed").get<std::uint64_t>();
  net.widths = j.at("widths").get<std::vector<std::size_t>>();
  check_widths(net.widths);
  const auto& layers = j.at("layers");
  if (layers.size() + 1 != net.widths.size()) throw ConfigError("vfm-network: layer count mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto w = layers[l].at("weights").get<std::vector<double>>();
    const auto b = layers[l].at("bias").get<std::vector<double>>();
    if (w.size() != net.widths[l + 1] * net.widths[l] || b.size() != net.widths[l + 1]) {
      throw ConfigError("vfm-network: layer " + std::to_string(l) + " has wrong size");
    }
    net.values.insert(net.values.end(), w.begin(), w.end());
    net.values.insert(net.values.end(), b.begin(), b.end());
  }
  for (double v : net.values) {
    if (!std::isfinite(v)) throw ConfigError("vfm-network: non-finite parameter");
  }
  return net;
}

}  // namespace vfm
