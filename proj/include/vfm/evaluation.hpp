#pragma once

// Accuracy metrics and consistency analyses for trained models.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vfm/hybrid.hpp"
#include "vfm/stats.hpp"

namespace vfm {

namespace detail {

inline void check_pair(std::span<const double> pred, std::span<const double> meas) {
  if (pred.size() != meas.size()) throw ContractError("predictions and measurements differ in length");
  if (pred.empty()) throw ContractError("no samples to evaluate");
  for (double y : meas) {
    if (y == 0.0) throw DomainError("zero measurement: relative error undefined");
  }
}

}  // namespace detail

// Relative deviations |yhat - y| / |y| in percent.
inline std::vector<double> relative_deviations(std::span<const double> pred, std::span<const double> meas) {
  detail::check_pair(pred, meas);
  std::vector<double> d(pred.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::abs(pred[i] - meas[i]) / std::abs(meas[i]) * 100.0;
  return d;
}

inline double mape(std::span<const double> pred, std::span<const double> meas) {
  return mean(relative_deviations(pred, meas));
}

// Percentage of samples whose deviation is at most each threshold (in percent).
inline std::vector<double> cumulative_deviation(std::span<const double> pred, std::span<const double> meas,
                                                std::span<const double> thresholds) {
  auto d = relative_deviations(pred, meas);
  std::sort(d.begin(), d.end());
  std::vector<double> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    const auto k = std::upper_bound(d.begin(), d.end(), t) - d.begin();
    out.push_back(100.0 * static_cast<double>(k) / static_cast<double>(d.size()));
  }
  return out;
}

inline std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 200; ++i) t.push_back(0.5 * i);
  t.push_back(std::numeric_limits<double>::infinity());
  return t;
}

struct Aggregate {
  std::size_t count = 0;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

inline Aggregate aggregate(std::span<const double> v) {
  if (v.empty()) throw ContractError("aggregate of an empty sample");
  Aggregate a;
  a.count = v.size();
  a.min = *std::min_element(v.begin(), v.end());
  a.max = *std::max_element(v.begin(), v.end());
  a.q1 = quantile(v, 0.25);
  a.median = quantile(v, 0.5);
  a.q3 = quantile(v, 0.75);
  return a;
}

inline nlohmann::json aggregate_to_json(const Aggregate& a) {
  return {{"count", a.count}, {"min", a.min}, {"q1", a.q1}, {"median", a.median}, {"q3", a.q3}, {"max", a.max}};
}

// --- reports ---------------------------------------------------------------------------

struct EvaluationReport {
  std::string well_id;
  std::string model;
  std::string horizon;  // "90d", "7d", "all", ...
  std::size_t samples = 0;
  double mape = 0.0;
  std::vector<double> thresholds;
  std::vector<double> cumulative;
};

inline EvaluationReport evaluate_predictions(std::span<const double> pred, std::span<const double> meas,
                                             std::string well_id, std::string model, std::string horizon,
                                             std::vector<double> thresholds = default_thresholds()) {
  EvaluationReport r;
  r.well_id = std::move(well_id);
  r.model = std::move(model);
  r.horizon = std::move(horizon);
  r.samples = pred.size();
  r.mape = mape(pred, meas);
  r.cumulative = cumulative_deviation(pred, meas, thresholds);
  r.thresholds = std::move(thresholds);
  return r;
}

inline std::vector<double> targets_of(std::span<const OperatingPoint> pts) {
  std::vector<double> y;
  y.reserve(pts.size());
  for (const auto& x : pts) y.push_back(x.q_o);
  return y;
}

inline EvaluationReport evaluate_model(const HybridModel& m, std::span<const OperatingPoint> pts, std::string well_id,
                                       std::string horizon) {
  const auto pred = m.predict_batch(pts);
  return evaluate_predictions(pred, targets_of(pts), std::move(well_id), std::string(variant_name(m.variant())),
                              std::move(horizon));
}

inline nlohmann::json report_to_json(const EvaluationReport& r) {
  return {{"well", r.well_id}, {"model", r.model}, {"horizon", r.horizon}, {"samples", r.samples}, {"mape", r.mape}};
}

// Long-format curve table: well,model,horizon,threshold_pct,within_pct
inline void write_curves_csv(std::ostream& out, std::span<const EvaluationReport> reports) {
  out << "well,model,horizon,threshold_pct,within_pct\n";
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
      out << r.well_id << ',' << r.model << ',' << r.horizon << ',' << format_double(r.thresholds[i]) << ','
          << format_double(r.cumulative[i]) << '\n';
    }
  }
}

// --- horizons ------------------------------------------------------------------------------

struct Horizon {
  std::string tag;
  Timestamp span = 0;
};

inline std::vector<Horizon> default_horizons() { return {{"90d", 90 * kSecondsPerDay}, {"7d", 7 * kSecondsPerDay}}; }

// Samples in [origin, origin + span).
inline std::vector<OperatingPoint> horizon_window(std::span<const OperatingPoint> test, Timestamp origin,
                                                  Timestamp span) {
  std::vector<OperatingPoint> out;
  for (const auto& x : test) {
    if (x.timestamp >= origin && x.timestamp < origin + span) out.push_back(x);
  }
  return out;
}

// Reports per horizon, in the given order. Windows start at `origin` (default: the
// first test sample); the test data must reach 95% of the longest horizon and every
// window must hold samples.
inline std::vector<EvaluationReport> horizon_compare(const HybridModel& m, std::span<const OperatingPoint> test,
                                                     const std::string& well_id, std::span<const Horizon> horizons,
                                                     std::optional<Timestamp> origin = std::nullopt) {
  if (test.empty()) throw ConfigError("no test data for the horizon comparison");
  const Timestamp t0 = origin.value_or(test.front().timestamp);
  Timestamp longest = 0;
  for (const auto& h : horizons) longest = std::max(longest, h.span);
  const Timestamp covered = test.back().timestamp - t0;
  if (static_cast<double>(covered) < 0.95 * static_cast<double>(longest)) {
    throw ConfigError("test data spans " + format_double(static_cast<double>(covered) / kSecondsPerDay) +
                      " days, too short for the " + format_double(static_cast<double>(longest) / kSecondsPerDay) +
                      "-day horizon");
  }
  std::vector<EvaluationReport> out;
  for (const auto& h : horizons) {
    const auto w = horizon_window(test, t0, h.span);
    if (w.empty()) throw ConfigError("horizon " + h.tag + " holds no test samples");
    out.push_back(evaluate_model(m, w, well_id, h.tag));
  }
  return out;
}

// --- sensitivity ---------------------------------------------------------------------------

struct SweepCurve {
  std::size_t base_index = 0;  // index into the points the bases were drawn from
  OperatingPoint base;
  Input variable = Input::u;
  std::vector<double> values;
  std::vector<double> q_o;              // NaN where the model cannot be evaluated
  std::vector<std::size_t> violations;  // k where q_o[k+1] < q_o[k]
};

inline std::vector<std::size_t> pick_base_points(std::size_t available, std::size_t count, std::uint64_t seed) {
  if (available == 0) throw ConfigError("no points to draw sensitivity bases from");
  std::vector<std::size_t> idx(available);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(count, available));
  return idx;
}

// Training min/max of the variable widened by `extend` of the range on each side,
// clipped to physical bounds.
inline std::pair<double, double> sweep_range(const InputStatistics& s, Input v, double extend = 0.1) {
  const auto i = static_cast<std::size_t>(v);
  const double w = s.upper[i] - s.lower[i];
  double lo = s.lower[i] - extend * w, hi = s.upper[i] + extend * w;
  if (v == Input::u || v == Input::eta_g || v == Input::eta_o) {
    lo = std::max(lo, 0.0);
    hi = std::min(hi, 1.0);
  } else {
    lo = std::max(lo, 1e-6 * std::max(1.0, std::abs(hi)));
  }
  return {lo, hi};
}

inline SweepCurve sweep(const HybridModel& m, const OperatingPoint& base, Input v, double lo, double hi,
                        std::size_t steps) {
  if (steps < 2) throw ConfigError("a sweep needs at least two steps");
  SweepCurve c;
  c.base = base;
  c.variable = v;
  for (std::size_t k = 0; k < steps; ++k) {
    const double val = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(steps - 1);
    OperatingPoint x = base;
    set_input(x, v, val);
    double q = std::numeric_limits<double>::quiet_NaN();
    if (x.p1 > x.p2 && x.eta_g + x.eta_o <= 1.0 + 1e-12) {
      try {
        q = m.evaluate(std::span(&x, 1)).q_o[0];
      } catch (const EvaluationError&) {
      } catch (const DomainError&) {
      }
    }
    c.values.push_back(val);
    c.q_o.push_back(q);
  }
  for (std::size_t k = 0; k + 1 < steps; ++k) {
    const double a = c.q_o[k], b = c.q_o[k + 1];
    if (std::isfinite(a) && std::isfinite(b) && b < a - 1e-12 * std::abs(a)) c.violations.push_back(k);
  }
  return c;
}

inline std::vector<SweepCurve> sensitivity_sweep(const HybridModel& m, std::span<const OperatingPoint> points,
                                                 std::span<const std::size_t> bases, Input v, double lo, double hi,
                                                 std::size_t steps = 50) {
  std::vector<SweepCurve> out;
  for (auto i : bases) {
    auto c = sweep(m, points[i], v, lo, hi, steps);
    c.base_index = i;
    out.push_back(std::move(c));
  }
  return out;
}

inline std::size_t total_violations(std::span<const SweepCurve> curves) {
  std::size_t n = 0;
  for (const auto& c : curves) n += c.violations.size();
  return n;
}

inline void write_sweeps_csv(std::ostream& out, const std::string& model, std::span<const SweepCurve> curves,
                             bool header = true) {
  if (header) out << "model,variable,base,value,q_o,violation\n";
  for (const auto& c : curves) {
    for (std::size_t k = 0; k < c.values.size(); ++k) {
      const bool flagged = k > 0 && std::find(c.violations.begin(), c.violations.end(), k - 1) != c.violations.end();
      out << model << ',' << input_name(c.variable) << ',' << c.base_index << ',' << format_double(c.values[k]) << ','
          << (std::isfinite(c.q_o[k]) ? format_double(c.q_o[k]) : std::string("nan")) << ',' << (flagged ? 1 : 0)
          << '\n';
    }
  }
}

// --- correlation ---------------------------------------------------------------------------

inline constexpr std::array<std::string_view, 8> kCorrelationColumns{"p1", "p2", "t1", "t2", "u", "eta_g", "eta_o", "q_o"};

// Pearson correlation of the columns of X (samples in rows). Columns with zero
// variance yield NaN rows and columns.
inline Eigen::MatrixXd correlation_matrix(const Eigen::MatrixXd& X) {
  if (X.rows() < 3) throw ConfigError("correlation needs at least 3 samples");
  const Eigen::RowVectorXd mu = X.colwise().mean();
  const Eigen::MatrixXd C = X.rowwise() - mu;
  const Eigen::Index k = X.cols();
  std::vector<char> constant(static_cast<std::size_t>(k));
  Eigen::VectorXd sd(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    constant[static_cast<std::size_t>(j)] = X.col(j).maxCoeff() == X.col(j).minCoeff();
    sd(j) = C.col(j).norm();
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  Eigen::MatrixXd R(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = i; j < k; ++j) {
      double r = 1.0;
      if (constant[static_cast<std::size_t>(i)] || constant[static_cast<std::size_t>(j)]) {
        r = nan;
      } else if (i != j) {
        r = std::clamp(C.col(i).dot(C.col(j)) / (sd(i) * sd(j)), -1.0, 1.0);
      }
      R(i, j) = R(j, i) = r;
    }
  }
  return R;
}

inline Eigen::MatrixXd correlation_matrix(std::span<const OperatingPoint> pts) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(pts.size()), 8);
  for (std::size_t n = 0; n < pts.size(); ++n) {
    const auto r = static_cast<Eigen::Index>(n);
    for (std::size_t i = 0; i < kInputCount; ++i) X(r, static_cast<Eigen::Index>(i)) = input_value(pts[n], static_cast<Input>(i));
    X(r, 7) = pts[n].q_o;
  }
  return correlation_matrix(X);
}

inline nlohmann::json correlation_to_json(const Eigen::MatrixXd& R) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < R.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < R.cols(); ++j) row.push_back(std::isfinite(R(i, j)) ? nlohmann::json(R(i, j)) : nlohmann::json());
    rows.push_back(std::move(row));
  }
  return {{"columns", kCorrelationColumns}, {"matrix", rows}};
}

}  // namespace vfm
