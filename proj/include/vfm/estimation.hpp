#pragma once

// MAP estimation of hybrid models.
//
//   L(theta) = sum_n r_n^2 * (N / N_batch)
//            + sigma_eps^2 * [ sum_i ((phi_i - mu_i) / sigma_i)^2 + sum_j ((w_j - mu_j) / sigma_j)^2 ]
//
// Optimization works on L / sigma_eps^2, which has the same minimizer and keeps
// gradients O(1) regardless of the target's units.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vfm/autodiff.hpp"
#include "vfm/hybrid.hpp"
#include "vfm/pipeline.hpp"
#include "vfm/random.hpp"
#include "vfm/stats.hpp"

namespace vfm {

inline double noise_sigma_from_mape(double alpha, std::span<const double> targets) {
  if (targets.empty()) throw ConfigError("noise_sigma_from_mape: no training targets");
  if (!(alpha >= 0)) throw ConfigError("noise_sigma_from_mape: alpha must be nonnegative");
  const double y_ref = std::abs(mean(targets));
  if (!(y_ref > 0)) throw ConfigError("noise_sigma_from_mape: target mean is zero, reference undefined");
  return std::sqrt(std::numbers::pi / 2.0) * alpha * y_ref;
}

// Gaussian priors over theta in natural units.
struct PriorSpec {
  std::vector<double> physical_mean;   // per estimable physical parameter
  std::vector<double> physical_sigma;
  std::vector<double> network_mean;    // per network parameter
  std::vector<double> network_sigma;
  double noise_sigma = 1.0;
  bool include_priors = true;          // false: plain least squares

  // A prior this narrow holds the parameter at its mean.
  bool pinned(std::size_t k) const { return physical_sigma[k] <= 1e-9 * std::abs(physical_mean[k]); }
};

inline PriorSpec make_prior_spec(const HybridModel& m, double noise_sigma) {
  if (!(noise_sigma > 0)) throw ConfigError("noise sigma must be positive");
  PriorSpec p;
  for (auto par : m.estimable()) {
    const auto& pr = m.priors().prior(par);
    if (!(pr.sigma > 0)) throw ConfigError("prior sigma of '" + std::string(param_name(par)) + "' must be positive");
    p.physical_mean.push_back(pr.mean);
    p.physical_sigma.push_back(pr.sigma);
  }
  if (has_network(m.variant())) {
    p.network_mean.assign(m.network_prior_mean().begin(), m.network_prior_mean().end());
    for (double v : he_variances(m.widths())) p.network_sigma.push_back(std::sqrt(v));
  }
  p.noise_sigma = noise_sigma;
  return p;
}

// A set of samples with their network inputs and targets.
struct Batch {
  std::vector<OperatingPoint> points;
  Eigen::MatrixXd inputs;
  std::vector<double> targets;

  std::size_t size() const { return points.size(); }
};

inline Batch make_batch(const HybridModel& m, std::span<const OperatingPoint> points) {
  Batch b;
  b.points.assign(points.begin(), points.end());
  if (has_network(m.variant())) b.inputs = m.network_inputs(points);
  for (const auto& x : points) b.targets.push_back(x.q_o);
  return b;
}

inline Batch gather(const Batch& all, std::span<const std::size_t> idx) {
  Batch b;
  b.points.reserve(idx.size());
  for (auto i : idx) {
    b.points.push_back(all.points[i]);
    b.targets.push_back(all.targets[i]);
  }
  if (all.inputs.size()) {
    b.inputs.resize(all.inputs.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) b.inputs.col(static_cast<Eigen::Index>(c)) = all.inputs.col(static_cast<Eigen::Index>(idx[c]));
  }
  return b;
}

struct LossTerms {
  double data = 0.0;      // sum of squared residuals, scaled by N / N_batch
  double physical = 0.0;  // sum of squared standardized deviations
  double network = 0.0;
  double noise_sigma = 1.0;

  double map_loss() const { return data + noise_sigma * noise_sigma * (physical + network); }
  double normalized() const { return map_loss() / (noise_sigma * noise_sigma); }
};

inline LossTerms loss_terms(const HybridModel& m, std::span<const double> theta, const PriorSpec& prior,
                            const Batch& batch, std::size_t n_total) {
  if (batch.size() == 0) throw ContractError("map_loss: empty batch");
  LossTerms t;
  t.noise_sigma = prior.noise_sigma;
  const auto pred = m.evaluate(theta, batch.points, batch.inputs);
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const double r = pred.q_o[n] - batch.targets[n];
    t.data += r * r;
  }
  t.data *= static_cast<double>(n_total) / static_cast<double>(batch.size());
  if (!prior.include_priors) return t;
  for (std::size_t k = 0; k < m.physical_count(); ++k) {
    if (prior.pinned(k)) continue;
    const double d = (std::exp(theta[k] + m.zeta()) - prior.physical_mean[k]) / prior.physical_sigma[k];
    t.physical += d * d;
  }
  const std::size_t off = m.physical_count();
  for (std::size_t j = 0; j < prior.network_mean.size(); ++j) {
    const double d = (theta[off + j] - prior.network_mean[j]) / prior.network_sigma[j];
    t.network += d * d;
  }
  return t;
}

inline double map_loss(const HybridModel& m, std::span<const double> theta, const PriorSpec& prior,
                       const Batch& batch, std::size_t n_total) {
  return loss_terms(m, theta, prior, batch, n_total).map_loss();
}

// Normalized loss and its exact gradient with respect to theta.
inline std::vector<double> normalized_gradient(const HybridModel& m, std::span<const double> theta,
                                               const PriorSpec& prior, const Batch& batch, std::size_t n_total,
                                               double* value = nullptr) {
  if (batch.size() == 0) throw ContractError("map_loss: empty batch");
  const std::size_t k = m.physical_count();
  ad::Tape tape;
  std::vector<Var> nat(k);
  for (std::size_t i = 0; i < k; ++i) nat[i] = exp(tape.parameter(theta[i], i) + m.zeta());
  const auto phi = m.assemble<Var>(nat);
  std::vector<Var> g;
  if (has_network(m.variant())) g = tape.network_outputs(m.network_view(theta), k, batch.inputs);
  Var data = 0.0;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const Var gn = g.empty() ? Var(0.0) : g[n];
    const Var r = hybrid_output(m.variant(), batch.points[n], phi, gn, m.output_scale()) - batch.targets[n];
    data += r * r;
  }
  const double s2 = prior.noise_sigma * prior.noise_sigma;
  Var total = data * (static_cast<double>(n_total) / static_cast<double>(batch.size()) / s2);
  if (prior.include_priors) {
    for (std::size_t i = 0; i < k; ++i) {
      if (prior.pinned(i)) continue;
      const Var d = (nat[i] - prior.physical_mean[i]) / prior.physical_sigma[i];
      total += d * d;
    }
    if (!prior.network_mean.empty()) {
      double v = 0.0;
      std::vector<double> partial(prior.network_mean.size());
      for (std::size_t j = 0; j < partial.size(); ++j) {
        const double d = theta[k + j] - prior.network_mean[j];
        const double s = prior.network_sigma[j];
        v += d * d / (s * s);
        partial[j] = 2.0 * d / (s * s);
      }
      total += tape.block_term(v, k, std::move(partial));
    }
  }
  if (value) *value = total.value();
  auto grad = tape.backward(total, theta.size());
  for (std::size_t i = 0; i < k; ++i) {
    if (prior.pinned(i)) grad[i] = 0.0;
  }
  return grad;
}

// --- Adam -------------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> theta, std::span<const double> grad) {
    if (theta.size() != m_.size() || grad.size() != m_.size()) throw ContractError("Adam: size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      theta[i] -= cfg_.learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.epsilon);
    }
  }

  std::size_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

inline double clip_gradient(std::span<double> grad, double max_norm) {
  double n2 = 0.0;
  for (double g : grad) n2 += g * g;
  const double norm = std::sqrt(n2);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (double& g : grad) g *= s;
  }
  return norm;
}

// --- pretraining -----------------------------------------------------------------------

struct PretrainConfig {
  std::size_t samples = 10000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t max_epochs = 400;
  std::size_t check_every = 5;
  double tolerance = 0.02;  // relative RMSE on the held-out grid
  std::size_t grid_points = 4096;
  std::uint64_t seed = 0;
};

struct PretrainReport {
  double relative_rmse = 0.0;
  std::size_t epochs = 0;
  std::size_t grid_size = 0;
  bool within_tolerance = false;
  std::string warning;
};

inline PhysicalParameters<double> prior_mean_parameters(const HybridModel& m) {
  PhysicalParameters<double> phi;
  phi.constants = m.priors().constants;
  for (auto p : kAllParams) field(phi, p) = m.priors().prior(p).mean;
  return phi;
}

inline bool admissible(const OperatingPoint& x) {
  return x.p2 <= x.p1 && x.eta_g + x.eta_o <= 1.0 + 1e-12;
}

// Uniform samples over the model's input box for the variant's inputs.
inline std::vector<OperatingPoint> sample_input_box(const HybridModel& m, std::size_t n, std::uint64_t seed) {
  const auto& s = m.statistics();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<OperatingPoint> out;
  out.reserve(n);
  std::size_t attempts = 0;
  while (out.size() < n) {
    if (++attempts > 100 * n + 1000) throw ConfigError("input box admits too few valid operating points");
    OperatingPoint x = s.reference;
    for (auto in : m.spec().inputs) {
      const auto i = static_cast<std::size_t>(in);
      set_input(x, in, s.lower[i] + unit(rng) * (s.upper[i] - s.lower[i]));
    }
    if (admissible(x)) out.push_back(x);
  }
  return out;
}

// Cell-centred grid with floor(N^(1/d)) levels per input; inadmissible nodes skipped.
inline std::vector<OperatingPoint> input_grid(const HybridModel& m, std::size_t target_points) {
  const auto& in = m.spec().inputs;
  const auto& s = m.statistics();
  const std::size_t d = in.size();
  auto k = static_cast<std::size_t>(std::floor(std::pow(static_cast<double>(target_points), 1.0 / static_cast<double>(d)) + 1e-9));
  k = std::max<std::size_t>(k, 2);
  std::size_t total = 1;
  for (std::size_t i = 0; i < d; ++i) total *= k;
  std::vector<OperatingPoint> out;
  for (std::size_t c = 0; c < total; ++c) {
    OperatingPoint x = s.reference;
    std::size_t r = c;
    for (std::size_t j = 0; j < d; ++j) {
      const auto i = static_cast<std::size_t>(in[j]);
      const double frac = (static_cast<double>(r % k) + 0.5) / static_cast<double>(k);
      r /= k;
      set_input(x, in[j], s.lower[i] + frac * (s.upper[i] - s.lower[i]));
    }
    if (admissible(x)) out.push_back(x);
  }
  return out;
}

inline double relative_rmse(const Eigen::RowVectorXd& pred, const Eigen::RowVectorXd& target) {
  const double rms = std::sqrt(target.squaredNorm() / static_cast<double>(target.size()));
  return std::sqrt((pred - target).squaredNorm() / static_cast<double>(target.size())) / rms;
}

// Fits the network to the replaced mechanistic relation at prior means and adopts
// the result as both the starting point and the prior mean of the network.
inline PretrainReport pretrain_network(HybridModel& m, const PretrainConfig& cfg) {
  if (!is_substitution(m.variant())) {
    throw ContractError("pretraining undefined for variant " + std::string(variant_name(m.variant())));
  }
  if (cfg.samples == 0 || cfg.batch_size == 0) throw ConfigError("pretraining needs samples and a batch size");
  const auto phi = prior_mean_parameters(m);
  const double scale = m.output_scale();
  auto targets = [&](std::span<const OperatingPoint> pts) {
    Eigen::RowVectorXd t(static_cast<Eigen::Index>(pts.size()));
    for (std::size_t n = 0; n < pts.size(); ++n) t(static_cast<Eigen::Index>(n)) = replaced_relation(m.variant(), pts[n], phi) / scale;
    return t;
  };
  const auto train = sample_input_box(m, cfg.samples, derive_seed(cfg.seed, 1));
  const Eigen::MatrixXd X = m.network_inputs(train);
  const Eigen::RowVectorXd T = targets(train);
  const auto grid = input_grid(m, cfg.grid_points);
  const Eigen::MatrixXd Xg = m.network_inputs(grid);
  const Eigen::RowVectorXd Tg = targets(grid);

  NetworkParameters net = m.network();
  NetworkParameters best = net;
  Adam adam(net.size(), {cfg.learning_rate});
  std::mt19937_64 rng(derive_seed(cfg.seed, 2));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(net.size());
  BatchCache cache;
  PretrainReport rep;
  rep.grid_size = grid.size();
  rep.relative_rmse = relative_rmse(network_forward_batch(net.view(), Xg), Tg);
  double best_err = rep.relative_rmse;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t nb = std::min(cfg.batch_size, order.size() - b0);
      Eigen::MatrixXd xb(X.rows(), static_cast<Eigen::Index>(nb));
      Eigen::RowVectorXd tb(static_cast<Eigen::Index>(nb));
      for (std::size_t c = 0; c < nb; ++c) {
        xb.col(static_cast<Eigen::Index>(c)) = X.col(static_cast<Eigen::Index>(order[b0 + c]));
        tb(static_cast<Eigen::Index>(c)) = T(static_cast<Eigen::Index>(order[b0 + c]));
      }
      const auto view = net.view();
      const Eigen::RowVectorXd out = network_forward_batch(view, xb, &cache);
      const Eigen::RowVectorXd dout = 2.0 * (out - tb) / static_cast<double>(nb);
      std::fill(grad.begin(), grad.end(), 0.0);
      network_backward_batch(view, cache, dout, grad);
      clip_gradient(grad, 1e3);
      adam.step(net.values, grad);
    }
    rep.epochs = epoch;
    if (epoch % cfg.check_every == 0 || epoch == cfg.max_epochs) {
      const double err = relative_rmse(network_forward_batch(net.view(), Xg), Tg);
      if (!std::isfinite(err)) throw DivergenceError(epoch, 0, "pretraining diverged");
      if (err < best_err) {
        best_err = err;
        best = net;
      }
      if (err <= 0.5 * cfg.tolerance) break;
    }
  }
  rep.relative_rmse = best_err;
  rep.within_tolerance = best_err <= cfg.tolerance;
  if (!rep.within_tolerance) {
    rep.warning = std::string(variant_name(m.variant())) + " pretraining relative RMSE " + format_double(best_err) +
                  " exceeds tolerance " + format_double(cfg.tolerance);
  }
  m.set_network(best);
  m.set_network_prior_mean(best.values);
  auto meta = m.metadata();
  meta.pretrained = true;
  m.set_metadata(meta);
  return rep;
}

// --- training protocol ------------------------------------------------------------------

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 5000;
  std::size_t patience = 50;
  std::size_t repetitions = 5;
  std::uint64_t seed = 0;
  double mape_alpha = 0.1;
  double validation_fraction = 0.2;
  Timestamp chunk = 14 * kSecondsPerDay;
  double clip_norm = 1e3;
  bool include_priors = true;
  std::size_t workers = 1;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
    if (validation_fraction > 0 && (patience == 0 || patience >= max_epochs)) throw ConfigError("patience must lie in [1, max_epochs)");
    if (repetitions == 0) throw ConfigError("repetitions must be positive");
    if (!(mape_alpha > 0)) throw ConfigError("mape_alpha must be positive");
    if (!(validation_fraction >= 0 && validation_fraction < 1)) throw ConfigError("validation_fraction must lie in [0, 1)");
    if (chunk <= 0) throw ConfigError("chunk must be positive");
    if (!(clip_norm > 0)) throw ConfigError("clip_norm must be positive");
    if (workers == 0) throw ConfigError("workers must be positive");
  }
};

struct RepetitionReport {
  std::uint64_t seed = 0;
  std::size_t train_samples = 0;
  std::size_t validation_samples = 0;
  std::size_t best_epoch = 0;
  double best_validation_mse = 0.0;
  std::vector<double> train_loss;      // mean normalized batch loss per epoch
  std::vector<double> validation_mse;  // per epoch
  friend bool operator==(const RepetitionReport&, const RepetitionReport&) = default;
};

struct TrainingReport {
  Variant variant = Variant::MM;
  double noise_sigma = 0.0;
  std::size_t training_samples = 0;
  std::vector<RepetitionReport> repetitions;
  std::size_t chosen_epochs = 0;
  std::vector<double> final_train_loss;
  LossTerms final_loss;
  friend bool operator==(const TrainingReport& a, const TrainingReport& b) {
    return a.variant == b.variant && a.noise_sigma == b.noise_sigma && a.training_samples == b.training_samples &&
           a.repetitions == b.repetitions && a.chosen_epochs == b.chosen_epochs &&
           a.final_train_loss == b.final_train_loss && a.final_loss.data == b.final_loss.data &&
           a.final_loss.physical == b.final_loss.physical && a.final_loss.network == b.final_loss.network;
  }
};

struct TrainingResult {
  HybridModel model;
  TrainingReport report;
};

namespace detail {

inline DivergenceError diverged(std::size_t epoch, std::size_t batch, const std::string& why) {
  return DivergenceError(epoch, batch, why);
}

// One pass over `data` in a seeded random order. Returns the mean normalized batch loss.
inline double run_epoch(const HybridModel& m, std::vector<double>& theta, const PriorSpec& prior, const Batch& data,
                        Adam& adam, std::mt19937_64& rng, const TrainConfig& cfg, std::size_t epoch) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  double sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
    const std::size_t nb = std::min(cfg.batch_size, order.size() - b0);
    const Batch batch = gather(data, std::span(order).subspan(b0, nb));
    double value = 0.0;
    std::vector<double> grad;
    try {
      grad = normalized_gradient(m, theta, prior, batch, data.size(), &value);
    } catch (const EvaluationError& e) {
      throw diverged(epoch, batches, e.what());
    } catch (const DomainError& e) {
      throw diverged(epoch, batches, e.what());
    }
    if (!std::isfinite(value)) throw diverged(epoch, batches, "non-finite loss");
    for (double g : grad) {
      if (!std::isfinite(g)) throw diverged(epoch, batches, "non-finite gradient");
    }
    clip_gradient(grad, cfg.clip_norm);
    adam.step(theta, grad);
    sum += value;
    ++batches;
  }
  return sum / static_cast<double>(batches);
}

inline double mse(const HybridModel& m, std::span<const double> theta, const Batch& b, std::size_t epoch) {
  std::vector<double> q;
  try {
    q = m.evaluate(theta, b.points, b.inputs).q_o;
  } catch (const EvaluationError& e) {
    throw diverged(epoch, 0, e.what());
  } catch (const DomainError& e) {
    throw diverged(epoch, 0, e.what());
  }
  double s = 0.0;
  for (std::size_t n = 0; n < q.size(); ++n) s += (q[n] - b.targets[n]) * (q[n] - b.targets[n]);
  return s / static_cast<double>(q.size());
}

inline RepetitionReport early_stopping_run(const HybridModel& initial, const PriorSpec& prior,
                                           std::span<const OperatingPoint> training, const TrainConfig& cfg,
                                           std::uint64_t seed) {
  std::vector<Timestamp> t;
  for (const auto& x : training) t.push_back(x.timestamp);
  const auto val = draw_validation_chunks(t, cfg.chunk, cfg.validation_fraction, seed);
  std::vector<OperatingPoint> tr, va;
  for (std::size_t i = 0; i < training.size(); ++i) (val[i] ? va : tr).push_back(training[i]);
  if (tr.empty() || va.empty()) throw ConfigError("early stopping needs both training and validation samples");
  RepetitionReport rep;
  rep.seed = seed;
  rep.train_samples = tr.size();
  rep.validation_samples = va.size();
  const Batch train_b = make_batch(initial, tr);
  const Batch val_b = make_batch(initial, va);
  std::vector<double> theta(initial.theta().begin(), initial.theta().end());
  Adam adam(theta.size(), {cfg.learning_rate});
  std::mt19937_64 rng(seed);
  rep.best_validation_mse = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rep.train_loss.push_back(run_epoch(initial, theta, prior, train_b, adam, rng, cfg, epoch));
    const double v = mse(initial, theta, val_b, epoch);
    if (!std::isfinite(v)) throw diverged(epoch, 0, "non-finite validation error");
    rep.validation_mse.push_back(v);
    if (v < rep.best_validation_mse) {
      rep.best_validation_mse = v;
      rep.best_epoch = epoch;
    }
    if (epoch - rep.best_epoch >= cfg.patience) break;
  }
  return rep;
}

}  // namespace detail

// Trains `initial` on `training` (train + validation partitions, time ordered).
//   1. `repetitions` early-stopping runs, each with freshly drawn validation chunks;
//   2. epochs = round(mean best epoch), at least 1;
//   3. retrain from `initial` on all of `training` for that many epochs.
inline TrainingResult fit(const HybridModel& initial, std::span<const OperatingPoint> training, const TrainConfig& cfg,
                          const PriorSpec* prior_override = nullptr) {
  cfg.validate();
  if (training.empty()) throw ConfigError("empty training set");
  for (const auto& x : training) validate(x);
  std::vector<double> y;
  for (const auto& x : training) y.push_back(x.q_o);
  PriorSpec prior = prior_override ? *prior_override : make_prior_spec(initial, noise_sigma_from_mape(cfg.mape_alpha, y));
  if (!prior_override) prior.include_priors = cfg.include_priors;

  TrainingResult res;
  res.report.variant = initial.variant();
  res.report.noise_sigma = prior.noise_sigma;
  res.report.training_samples = training.size();

  if (cfg.validation_fraction > 0) {
    std::vector<std::uint64_t> seeds;
    for (std::size_t r = 0; r < cfg.repetitions; ++r) seeds.push_back(derive_seed(cfg.seed, r));
    if (cfg.workers > 1) {
      std::vector<std::future<RepetitionReport>> jobs;
      std::size_t next = 0;
      res.report.repetitions.resize(seeds.size());
      while (next < seeds.size()) {
        jobs.clear();
        const std::size_t start = next;
        for (; next < seeds.size() && jobs.size() < cfg.workers; ++next) {
          jobs.push_back(std::async(std::launch::async, detail::early_stopping_run, std::cref(initial),
                                    std::cref(prior), training, std::cref(cfg), seeds[next]));
        }
        for (std::size_t j = 0; j < jobs.size(); ++j) res.report.repetitions[start + j] = jobs[j].get();
      }
    } else {
      for (auto s : seeds) res.report.repetitions.push_back(detail::early_stopping_run(initial, prior, training, cfg, s));
    }
    double sum = 0.0;
    for (const auto& r : res.report.repetitions) sum += static_cast<double>(r.best_epoch);
    res.report.chosen_epochs =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(sum / static_cast<double>(cfg.repetitions))));
  } else {
    res.report.chosen_epochs = cfg.max_epochs;
  }

  const Batch all = make_batch(initial, training);
  std::vector<double> theta(initial.theta().begin(), initial.theta().end());
  Adam adam(theta.size(), {cfg.learning_rate});
  std::mt19937_64 rng(derive_seed(cfg.seed, cfg.repetitions));
  for (std::size_t epoch = 1; epoch <= res.report.chosen_epochs; ++epoch) {
    res.report.final_train_loss.push_back(detail::run_epoch(initial, theta, prior, all, adam, rng, cfg, epoch));
  }
  res.model = initial;
  res.model.set_theta(theta);
  auto meta = res.model.metadata();
  meta.epochs = res.report.chosen_epochs;
  meta.seed = cfg.seed;
  res.model.set_metadata(meta);
  res.report.final_loss = loss_terms(res.model, theta, prior, all, all.size());
  return res;
}

inline nlohmann::json training_report_to_json(const TrainingReport& r, const HybridModel& m) {
  nlohmann::json j;
  j["format"] = "vfm-training-report";
  j["version"] = 1;
  j["variant"] = std::string(variant_name(r.variant));
  j["noise_sigma"] = r.noise_sigma;
  j["training_samples"] = r.training_samples;
  j["chosen_epochs"] = r.chosen_epochs;
  auto reps = nlohmann::json::array();
  for (const auto& rep : r.repetitions) {
    reps.push_back({{"seed", rep.seed},
                    {"train_samples", rep.train_samples},
                    {"validation_samples", rep.validation_samples},
                    {"best_epoch", rep.best_epoch},
                    {"best_validation_mse", rep.best_validation_mse},
                    {"train_loss", rep.train_loss},
                    {"validation_mse", rep.validation_mse}});
  }
  j["repetitions"] = std::move(reps);
  j["final_train_loss"] = r.final_train_loss;
  j["final_loss"] = {{"data", r.final_loss.data},
                     {"physical_prior", r.final_loss.physical},
                     {"network_prior", r.final_loss.network},
                     {"map_loss", r.final_loss.map_loss()}};
  auto phys = nlohmann::json::array();
  for (auto p : kAllParams) {
    const auto& o = m.priors().physical[static_cast<std::size_t>(p)];
    if (!o) continue;
    phys.push_back({{"name", std::string(param_name(p))},
                    {"estimable", m.is_estimable(p)},
                    {"prior_mean", o->mean},
                    {"prior_sigma", o->sigma},
                    {"posterior", m.natural(p)}});
  }
  j["physical_parameters"] = std::move(phys);
  if (has_network(m.variant())) {
    const auto theta = m.theta().subspan(m.physical_count());
    const auto mu = m.network_prior_mean();
    double dev = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      dev += (theta[i] - mu[i]) * (theta[i] - mu[i]);
      norm += theta[i] * theta[i];
    }
    j["network_parameters"] = {{"count", theta.size()},
                               {"widths", std::vector<std::size_t>(m.widths().begin(), m.widths().end())},
                               {"pretrained_prior", m.metadata().pretrained},
                               {"l2_norm", std::sqrt(norm)},
                               {"l2_deviation_from_prior", std::sqrt(dev)}};
  }
  return j;
}

}  // namespace vfm
