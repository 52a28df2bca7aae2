#pragma once

// Command-line front end: generate, train, predict, evaluate, sensitivity, consistency.
// `run` never exits the process; it returns 0 on success, 2 for bad input or
// configuration and 3 for numerical failures.

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "vfm/estimation.hpp"
#include "vfm/evaluation.hpp"
#include "vfm/synthetic.hpp"

namespace vfm::cli {

namespace fs = std::filesystem;

inline constexpr int kExitSuccess = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;

struct ConfigKey {
  std::string_view key;
  std::string_view fallback;
  std::string_view help;
};

// Keys of a run configuration file; each one is also a flag (`_` becomes `-`).
inline constexpr std::array<ConfigKey, 35> kRunKeys{{
    {"seed", "0", "base seed for splits, initialization and training"},
    {"workers", "1", "concurrent training runs or repetitions"},
    {"variant", "MM", "comma-separated model variants to train"},
    {"test_days", "90", "trailing test span in days"},
    {"validation_fraction", "0.2", "share of training samples held out for early stopping"},
    {"chunk_days", "14", "validation chunk length in days"},
    {"compress", "false", "steady-state compression"},
    {"compression_window_s", "3600", "steady-state window in seconds"},
    {"compression_tolerance", "0.02", "relative range tolerated inside a steady window"},
    {"hidden", "100,100,100", "hidden layer widths"},
    {"pretrain", "true", "pretrain substitution networks on the mechanistic relation"},
    {"pretrain_samples", "10000", "pretraining sample count"},
    {"pretrain_epochs", "400", "pretraining epoch limit"},
    {"pretrain_learning_rate", "0.001", "pretraining step size"},
    {"pretrain_tolerance", "0.02", "pretraining relative RMSE target"},
    {"learning_rate", "0.0001", "Adam step size"},
    {"batch_size", "32", "minibatch size"},
    {"max_epochs", "5000", "epoch limit"},
    {"patience", "50", "early-stopping patience in epochs"},
    {"repetitions", "5", "early-stopping repetitions"},
    {"mape_alpha", "0.1", "flow meter MAPE setting the noise level"},
    {"clip_norm", "1000", "gradient norm limit"},
    {"include_priors", "true", "add the prior terms to the loss"},
    {"prior_rho_o", "850,750,950", "oil density prior: mean,min,max"},
    {"prior_rho_w", "1000,950,1100", "water density prior: mean,min,max"},
    {"prior_kappa", "1.3,1.1,1.5", "heat capacity ratio prior: mean,min,max"},
    {"prior_m_g", "0.0189,0.016,0.024", "gas molar mass prior: mean,min,max"},
    {"prior_p_rc", "0.6,0.4,0.8", "critical pressure ratio prior: mean,min,max"},
    {"prior_c_d", "0.8,0.5,1.0", "discharge coefficient prior: mean,min,max"},
    {"horizon_days", "90,7", "evaluation horizons in days"},
    {"sweep_points", "5", "base points per sensitivity sweep"},
    {"sweep_steps", "50", "values per sweep"},
    {"sweep_extend", "0.1", "sweep range beyond the training span, as a share of it"},
    {"sweep_variables", "u,p1", "inputs swept by the sensitivity command"},
    {"subfunction_steps", "100", "values per subfunction trace"},
}};

inline std::string flag_name(std::string_view key) {
  std::string f = "--" + std::string(key);
  std::replace(f.begin(), f.end(), '_', '-');
  return f;
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  for (auto part : split_view(s, ',')) {
    part = trim(part);
    if (!part.empty()) out.emplace_back(part);
  }
  return out;
}

// Defaults, then the file, then flags. Unknown file keys are rejected.
inline KeyValueConfig layered_config(std::span<const std::string_view> known,
                                     const std::map<std::string, std::string>& defaults,
                                     const std::optional<std::string>& path,
                                     const std::map<std::string, std::string>& flags) {
  KeyValueConfig out;
  for (const auto& [k, v] : defaults) out.set(k, v);
  if (path) {
    const auto file = KeyValueConfig::load(*path);
    for (const auto& [k, v] : file.entries()) {
      if (std::find(known.begin(), known.end(), k) == known.end()) {
        throw ConfigError(*path + ": unknown key '" + k + "'");
      }
      out.set(k, v);
    }
  }
  for (const auto& [k, v] : flags) out.set(k, v);
  return out;
}

// --- run settings -----------------------------------------------------------------------

struct RunSettings {
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::vector<Variant> variants{Variant::MM};
  PipelineConfig pipeline{};
  ModelPriors priors = default_priors();
  bool pretrain = true;
  PretrainConfig pretraining{};
  TrainConfig training{};
  std::vector<Horizon> horizons = default_horizons();
  std::size_t sweep_points = 5;
  std::size_t sweep_steps = 50;
  double sweep_extend = 0.1;
  std::vector<Input> sweep_variables{Input::u, Input::p1};
  std::size_t subfunction_steps = 100;

  std::uint64_t init_seed() const { return derive_seed(seed, 2); }
  std::uint64_t pretrain_seed() const { return derive_seed(seed, 3); }
  std::uint64_t base_point_seed() const { return derive_seed(seed, 4); }
};

inline Timestamp days(double d, const std::string& key) {
  if (!(d > 0) || !std::isfinite(d)) throw ConfigError("key '" + key + "' must be a positive number of days");
  return static_cast<Timestamp>(std::llround(d * static_cast<double>(kSecondsPerDay)));
}

inline ParameterPrior parse_prior(const std::string& key, const std::string& text) {
  const auto parts = split_list(text);
  std::array<double, 3> v{};
  if (parts.size() != 3) throw ConfigError("key '" + key + "': expected mean,min,max");
  for (std::size_t i = 0; i < 3; ++i) {
    const auto d = parse_double(parts[i]);
    if (!d) throw ConfigError("key '" + key + "': not a number: '" + parts[i] + "'");
    v[i] = *d;
  }
  if (!(v[1] > 0 && v[1] < v[2] && v[0] >= v[1] && v[0] <= v[2])) {
    throw ConfigError("key '" + key + "': need 0 < min < max with the mean inside");
  }
  return {v[0], physical_prior_sigma(v[1], v[2])};
}

inline std::size_t positive_count(const KeyValueConfig& c, const std::string& key) {
  const auto n = c.get_integer<std::size_t>(key, 0);
  if (n == 0) throw ConfigError("key '" + key + "' must be positive");
  return n;
}

inline RunSettings settings_from_config(const KeyValueConfig& c) {
  RunSettings s;
  s.seed = c.get_integer<std::uint64_t>("seed", s.seed);
  s.workers = positive_count(c, "workers");
  s.variants.clear();
  for (const auto& tag : split_list(c.get_string("variant", "MM"))) {
    const auto v = parse_variant(tag);
    if (std::find(s.variants.begin(), s.variants.end(), v) == s.variants.end()) s.variants.push_back(v);
  }
  if (s.variants.empty()) throw ConfigError("no model variant given; valid tags: " + valid_variant_list());

  auto& split = s.pipeline.split;
  split.test_span = days(c.get_double("test_days", 90), "test_days");
  split.validation_fraction = c.get_double("validation_fraction", split.validation_fraction);
  split.chunk = days(c.get_double("chunk_days", 14), "chunk_days");
  split.seed = s.seed;
  s.pipeline.compress = c.get_bool("compress", false);
  s.pipeline.compression.window = c.get_integer<Timestamp>("compression_window_s", s.pipeline.compression.window);
  s.pipeline.compression.tolerance = c.get_double("compression_tolerance", s.pipeline.compression.tolerance);
  if (s.pipeline.compression.window <= 0 || !(s.pipeline.compression.tolerance > 0)) {
    throw ConfigError("compression window and tolerance must be positive");
  }

  s.priors.hidden.clear();
  for (const auto& w : split_list(c.get_string("hidden", ""))) {
    const auto n = parse_integer<std::size_t>(w);
    if (!n || *n == 0) throw ConfigError("key 'hidden': widths must be positive integers");
    s.priors.hidden.push_back(*n);
  }
  for (auto p : kAllParams) {
    const std::string key = "prior_" + std::string(param_name(p));
    if (const auto v = c.get_string(key)) s.priors.set(p, parse_prior(key, *v));
  }

  s.pretrain = c.get_bool("pretrain", true);
  s.pretraining.samples = positive_count(c, "pretrain_samples");
  s.pretraining.max_epochs = positive_count(c, "pretrain_epochs");
  s.pretraining.learning_rate = c.get_double("pretrain_learning_rate", s.pretraining.learning_rate);
  s.pretraining.tolerance = c.get_double("pretrain_tolerance", s.pretraining.tolerance);
  s.pretraining.seed = s.pretrain_seed();
  if (!(s.pretraining.learning_rate > 0 && s.pretraining.tolerance > 0)) {
    throw ConfigError("pretraining step size and tolerance must be positive");
  }

  auto& t = s.training;
  t.learning_rate = c.get_double("learning_rate", t.learning_rate);
  t.batch_size = c.get_integer<std::size_t>("batch_size", t.batch_size);
  t.max_epochs = c.get_integer<std::size_t>("max_epochs", t.max_epochs);
  t.patience = c.get_integer<std::size_t>("patience", t.patience);
  t.repetitions = c.get_integer<std::size_t>("repetitions", t.repetitions);
  t.mape_alpha = c.get_double("mape_alpha", t.mape_alpha);
  t.clip_norm = c.get_double("clip_norm", t.clip_norm);
  t.include_priors = c.get_bool("include_priors", t.include_priors);
  t.validation_fraction = split.validation_fraction;
  t.chunk = split.chunk;
  t.seed = s.seed;
  t.workers = s.workers;
  t.validate();

  s.horizons.clear();
  for (const auto& d : split_list(c.get_string("horizon_days", ""))) {
    const auto v = parse_double(d);
    if (!v) throw ConfigError("key 'horizon_days': not a number: '" + d + "'");
    s.horizons.push_back({format_double(*v) + "d", days(*v, "horizon_days")});
  }
  if (s.horizons.empty()) throw ConfigError("key 'horizon_days' lists no horizon");

  s.sweep_points = positive_count(c, "sweep_points");
  s.sweep_steps = c.get_integer<std::size_t>("sweep_steps", s.sweep_steps);
  if (s.sweep_steps < 2) throw ConfigError("key 'sweep_steps' must be at least 2");
  s.sweep_extend = c.get_double("sweep_extend", s.sweep_extend);
  if (!(s.sweep_extend >= 0)) throw ConfigError("key 'sweep_extend' must be nonnegative");
  s.sweep_variables.clear();
  for (const auto& v : split_list(c.get_string("sweep_variables", ""))) s.sweep_variables.push_back(parse_input(v));
  if (s.sweep_variables.empty()) throw ConfigError("key 'sweep_variables' lists no input");
  s.subfunction_steps = c.get_integer<std::size_t>("subfunction_steps", s.subfunction_steps);
  if (s.subfunction_steps < 2) throw ConfigError("key 'subfunction_steps' must be at least 2");
  c.require_all_used("config");
  return s;
}

// --- manifest ---------------------------------------------------------------------------

struct Artifact {
  std::string path;
  std::string fnv1a64;
};

class RunManifest {
 public:
  explicit RunManifest(std::string command, fs::path root) : command_(std::move(command)), root_(std::move(root)) {}

  void set_config(std::optional<std::string> path, const KeyValueConfig& effective) {
    config_path_ = std::move(path);
    config_ = nlohmann::json::object();
    for (const auto& [k, v] : effective.entries()) config_[k] = v;
  }
  void set_seed(const std::string& name, std::uint64_t v) { seeds_[name] = v; }

  void add_input(const std::string& path) {
    const auto data = read_file(path);
    std::lock_guard lock(mutex_);
    inputs_.push_back({path, hex64(fnv1a64(data))});
  }

  // Writes `content` to root/rel and records it.
  void emit(const std::string& rel, std::string_view content) {
    const fs::path full = root_ / rel;
    fs::create_directories(full.parent_path());
    write_file(full.string(), content);
    std::lock_guard lock(mutex_);
    outputs_.push_back({rel, hex64(fnv1a64(content))});
  }

  const std::vector<Artifact>& outputs() const { return outputs_; }

  nlohmann::json to_json(double wall_clock_seconds) const {
    auto listing = [](std::vector<Artifact> a) {
      std::sort(a.begin(), a.end(), [](const auto& x, const auto& y) { return x.path < y.path; });
      auto j = nlohmann::json::array();
      for (const auto& x : a) j.push_back({{"path", x.path}, {"fnv1a64", x.fnv1a64}});
      return j;
    };
    nlohmann::json j;
    j["format"] = "vfm-run-manifest";
    j["version"] = 1;
    j["command"] = command_;
    j["config_path"] = config_path_ ? nlohmann::json(*config_path_) : nlohmann::json(nullptr);
    j["config"] = config_;
    j["seeds"] = seeds_;
    j["inputs"] = listing(inputs_);
    j["outputs"] = listing(outputs_);
    j["wall_clock_seconds"] = wall_clock_seconds;
    return j;
  }

  void write(double wall_clock_seconds) const {
    fs::create_directories(root_);
    write_file((root_ / "manifest.json").string(), to_json(wall_clock_seconds).dump(1) + "\n");
  }

 private:
  std::string command_;
  fs::path root_;
  std::optional<std::string> config_path_;
  nlohmann::json config_ = nlohmann::json::object();
  nlohmann::json seeds_ = nlohmann::json::object();
  std::vector<Artifact> inputs_;
  std::vector<Artifact> outputs_;
  mutable std::mutex mutex_;
};

// --- helpers --------------------------------------------------------------------------------

inline std::string json_text(const nlohmann::json& j) { return j.dump(1) + "\n"; }

inline std::string well_id_of(const std::string& path) { return fs::path(path).stem().string(); }

struct LoadedModel {
  std::string label;
  HybridModel model;
};

// Labels are variant tags, numbered when a tag repeats.
inline std::vector<LoadedModel> load_models(const std::vector<std::string>& paths, RunManifest& manifest) {
  std::vector<LoadedModel> out;
  std::map<std::string, std::size_t> seen;
  for (const auto& p : paths) {
    manifest.add_input(p);
    auto m = load_model(p);
    std::string label(variant_name(m.variant()));
    if (const auto n = ++seen[label]; n > 1) label += "#" + std::to_string(n);
    out.push_back({std::move(label), std::move(m)});
  }
  return out;
}

inline WellDataset load_dataset(const std::string& path, const RunSettings& s, RunManifest& manifest, bool with_split) {
  manifest.add_input(path);
  const auto series = ingest_file(path);
  return with_split ? prepare(series, s.pipeline, well_id_of(path)) : preprocess(series, s.pipeline, well_id_of(path));
}

inline nlohmann::json dataset_summary(const WellDataset& ds) {
  std::array<std::size_t, 3> counts{};
  for (auto p : ds.partition) ++counts[static_cast<std::size_t>(p)];
  return {{"well", ds.well_id},
          {"ingested", ds.ingested},
          {"filter", filter_report_to_json(ds.filter)},
          {"compression_removed", ds.compression_removed},
          {"lag_removed", ds.lag_removed},
          {"samples", ds.points.size()},
          {"train", counts[0]},
          {"validation", counts[1]},
          {"test", counts[2]}};
}

// Runs jobs on up to `workers` threads; rethrows the failure of the lowest job index.
template <class Job>
void run_jobs(std::size_t count, std::size_t workers, Job job) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < std::min(workers, count); ++w) pool.emplace_back(worker);
    worker();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// --- commands ---------------------------------------------------------------------------

inline void cmd_generate(const KeyValueConfig& cfg, const std::string& origin, RunManifest& manifest,
                         std::ostream& log) {
  const auto s = scenario_from_config(cfg, origin);
  manifest.set_seed("seed", s.seed);
  const auto well = simulate(s);
  std::ostringstream csv;
  write_csv(csv, well.measured);
  manifest.emit(s.name + ".csv", csv.str());
  std::ostringstream truth;
  write_csv(truth, well.truth);
  manifest.emit(s.name + ".truth.csv", truth.str());
  log << "generated " << well.measured.size() << " samples for " << s.name << "\n";
}

inline void cmd_train(const RunSettings& s, const std::vector<std::string>& data, RunManifest& manifest,
                      std::ostream& log, std::ostream& warn) {
  std::vector<WellDataset> wells;
  for (const auto& path : data) {
    wells.push_back(load_dataset(path, s, manifest, true));
    for (std::size_t i = 0; i + 1 < wells.size(); ++i) {
      if (wells[i].well_id == wells.back().well_id) throw ConfigError("two data files map to well '" + wells[i].well_id + "'");
    }
    const auto& ds = wells.back();
    std::ostringstream part;
    write_partition_csv(part, ds);
    manifest.emit(ds.well_id + "/partitions.csv", part.str());
    manifest.emit(ds.well_id + "/dataset.json", json_text(dataset_summary(ds)));
  }

  struct Job {
    const WellDataset* ds;
    Variant variant;
    std::string warning;
    std::size_t epochs = 0;
  };
  std::vector<Job> jobs;
  for (const auto& ds : wells) {
    for (auto v : s.variants) jobs.push_back({&ds, v, {}, 0});
  }
  const std::size_t fit_workers = jobs.size() == 1 ? s.workers : 1;

  run_jobs(jobs.size(), s.workers, [&](std::size_t i) {
    auto& job = jobs[i];
    const auto train = job.ds->training();
    auto model = HybridModel::build(job.variant, s.priors, s.init_seed(), statistics_from_samples(train));
    nlohmann::json pre = nullptr;
    if (is_substitution(job.variant) && s.pretrain) {
      const auto r = pretrain_network(model, s.pretraining);
      pre = {{"relative_rmse", r.relative_rmse},
             {"epochs", r.epochs},
             {"grid_size", r.grid_size},
             {"within_tolerance", r.within_tolerance}};
      job.warning = r.warning;
    }
    auto cfg = s.training;
    cfg.workers = fit_workers;
    const auto res = fit(model, train, cfg);
    auto report = training_report_to_json(res.report, res.model);
    report["well"] = job.ds->well_id;
    report["pretraining"] = pre;
    const std::string dir = job.ds->well_id + "/" + std::string(variant_name(job.variant)) + "/";
    manifest.emit(dir + "model.json", json_text(model_to_json(res.model)));
    manifest.emit(dir + "training_report.json", json_text(report));
    job.epochs = res.report.chosen_epochs;
  });

  for (const auto& job : jobs) {
    if (!job.warning.empty()) warn << "warning: " << job.ds->well_id << "/" << variant_name(job.variant) << ": " << job.warning << "\n";
    log << "trained " << variant_name(job.variant) << " on " << job.ds->well_id << " for " << job.epochs << " epochs\n";
  }
}

inline void cmd_predict(const RunSettings& s, const std::string& model_path, const std::string& data,
                        RunManifest& manifest, std::ostream& log) {
  const auto models = load_models({model_path}, manifest);
  const auto ds = load_dataset(data, s, manifest, false);
  if (ds.points.empty()) throw ConfigError("no samples left after preprocessing '" + data + "'");
  const auto pred = models.front().model.predict_batch(ds.points);
  std::ostringstream csv;
  csv << "timestamp,q_o_measured,q_o_predicted\n";
  for (std::size_t i = 0; i < pred.size(); ++i) {
    csv << format_iso8601(ds.points[i].timestamp) << ',' << format_double(ds.points[i].q_o) << ','
        << format_double(pred[i]) << '\n';
  }
  manifest.emit("predictions.csv", csv.str());
  log << "predicted " << pred.size() << " samples\n";
}

inline void cmd_evaluate(const RunSettings& s, const std::vector<std::string>& model_paths, const std::string& data,
                         RunManifest& manifest, std::ostream& log) {
  const auto models = load_models(model_paths, manifest);
  const auto ds = load_dataset(data, s, manifest, true);
  const auto test = ds.test();

  std::vector<EvaluationReport> all;
  std::ostringstream table;
  table << "well,model,test_samples";
  for (const auto& h : s.horizons) table << ",mape_" << h.tag;
  table << '\n';
  auto reports = nlohmann::json::array();
  for (const auto& [label, m] : models) {
    auto r = horizon_compare(m, test, ds.well_id, s.horizons);
    table << ds.well_id << ',' << label << ',' << test.size();
    for (auto& e : r) {
      e.model = label;
      table << ',' << format_double(e.mape);
      reports.push_back(report_to_json(e));
      all.push_back(std::move(e));
    }
    table << '\n';
  }
  std::ostringstream curves;
  write_curves_csv(curves, all);
  manifest.emit("mape_table.csv", table.str());
  manifest.emit("curves.csv", curves.str());
  manifest.emit("evaluation.json", json_text({{"well", ds.well_id}, {"dataset", dataset_summary(ds)}, {"reports", reports}}));
  manifest.emit("correlation.json", json_text(correlation_to_json(correlation_matrix(ds.training()))));
  log << "evaluated " << models.size() << " model(s) on " << test.size() << " test samples\n";
}

inline void cmd_sensitivity(const RunSettings& s, const std::vector<std::string>& model_paths, const std::string& data,
                            RunManifest& manifest, std::ostream& log) {
  const auto models = load_models(model_paths, manifest);
  const auto ds = load_dataset(data, s, manifest, true);
  const auto test = ds.test();
  if (test.size() < s.sweep_points) throw ConfigError("fewer test samples than sweep base points");
  const auto bases = pick_base_points(test.size(), s.sweep_points, s.base_point_seed());
  manifest.set_seed("base_points", s.base_point_seed());

  std::ostringstream csv;
  bool header = true;
  auto results = nlohmann::json::array();
  for (const auto& [label, m] : models) {
    for (auto v : s.sweep_variables) {
      const auto [lo, hi] = sweep_range(m.statistics(), v, s.sweep_extend);
      const auto curves = sensitivity_sweep(m, test, bases, v, lo, hi, s.sweep_steps);
      write_sweeps_csv(csv, label, curves, header);
      header = false;
      std::size_t missing = 0;
      for (const auto& c : curves) missing += static_cast<std::size_t>(std::count_if(c.q_o.begin(), c.q_o.end(), [](double q) { return !std::isfinite(q); }));
      results.push_back({{"model", label},
                         {"variable", std::string(input_name(v))},
                         {"lower", lo},
                         {"upper", hi},
                         {"curves", curves.size()},
                         {"violations", total_violations(curves)},
                         {"unevaluable", missing}});
    }
  }
  auto base_json = nlohmann::json::array();
  for (auto i : bases) base_json.push_back({{"index", i}, {"timestamp", format_iso8601(test[i].timestamp)}});
  manifest.emit("sweeps.csv", csv.str());
  manifest.emit("sensitivity.json", json_text({{"well", ds.well_id}, {"base_points", base_json}, {"results", results}}));
  for (const auto& r : results) {
    log << r["model"].get<std::string>() << " " << r["variable"].get<std::string>() << ": "
        << r["violations"].get<std::size_t>() << " monotonicity violation(s)\n";
  }
}

inline void cmd_consistency(const RunSettings& s, const std::vector<std::string>& model_paths, RunManifest& manifest,
                            std::ostream& log) {
  const auto models = load_models(model_paths, manifest);
  std::ostringstream csv;
  csv << "model,variable,value,network,effective,mechanistic\n";
  auto summary = nlohmann::json::array();
  for (const auto& [label, m] : models) {
    if (m.variant() == Variant::MM) throw ContractError("MM has no subfunction");
    for (auto v : variant_spec(m.variant()).inputs) {
      const auto [lo, hi] = sweep_range(m.statistics(), v, s.sweep_extend);
      std::size_t evaluable = 0;
      double sq = 0.0, ref = 0.0;
      for (std::size_t k = 0; k < s.subfunction_steps; ++k) {
        const double x = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(s.subfunction_steps - 1);
        csv << label << ',' << input_name(v) << ',' << format_double(x) << ',';
        try {
          const auto t = m.extract_subfunction(v, std::span(&x, 1)).front();
          csv << format_double(t.network) << ',' << format_double(t.effective) << ',' << format_double(t.mechanistic) << '\n';
          ++evaluable;
          sq += (t.effective - t.mechanistic) * (t.effective - t.mechanistic);
          ref += t.mechanistic * t.mechanistic;
        } catch (const DomainError&) {
          csv << "nan,nan,nan\n";
        } catch (const EvaluationError&) {
          csv << "nan,nan,nan\n";
        }
      }
      const double n = static_cast<double>(std::max<std::size_t>(evaluable, 1));
      summary.push_back({{"model", label},
                         {"variable", std::string(input_name(v))},
                         {"points", s.subfunction_steps},
                         {"evaluable", evaluable},
                         {"rms_deviation", std::sqrt(sq / n)},
                         {"rms_mechanistic", std::sqrt(ref / n)}});
    }
  }
  manifest.emit("subfunctions.csv", csv.str());
  manifest.emit("consistency.json", json_text({{"traces", summary}}));
  log << "traced " << summary.size() << " subfunction input(s)\n";
}

// --- entry point ---------------------------------------------------------------------------

namespace detail {

struct CommandArgs {
  std::string out;
  std::optional<std::string> config;
  std::map<std::string, std::string> keys;
  std::vector<std::string> data;
  std::vector<std::string> models;
};

inline void add_key_flags(CLI::App* sub, CommandArgs& a, std::span<const std::string_view> keys,
                          const std::function<std::string(std::string_view)>& help) {
  for (auto k : keys) sub->add_option(flag_name(k), a.keys[std::string(k)], help(k));
}

inline std::map<std::string, std::string> given_flags(const CLI::App* sub, const CommandArgs& a) {
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : a.keys) {
    if (sub->count(flag_name(k)) > 0) out[k] = v;
  }
  return out;
}

inline std::vector<std::string_view> run_key_names() {
  std::vector<std::string_view> out;
  for (const auto& k : kRunKeys) out.push_back(k.key);
  return out;
}

inline std::map<std::string, std::string> run_defaults() {
  std::map<std::string, std::string> out;
  for (const auto& k : kRunKeys) out[std::string(k.key)] = std::string(k.fallback);
  return out;
}

}  // namespace detail

inline int run(std::span<const std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Virtual flow meter models: synthetic wells, training, evaluation and consistency analysis", "vfm"};
  app.require_subcommand(1, 1);

  const auto run_keys = detail::run_key_names();
  auto run_help = [](std::string_view k) {
    for (const auto& c : kRunKeys) {
      if (c.key == k) return std::string(c.help) + " (default " + std::string(c.fallback) + ")";
    }
    return std::string();
  };
  std::map<std::string, detail::CommandArgs> cmd;
  std::map<std::string, CLI::App*> subs;

  auto add = [&](const std::string& name, const std::string& about) {
    auto* sub = app.add_subcommand(name, about);
    auto& a = cmd[name];
    sub->add_option("--out", a.out, "output directory")->required();
    sub->add_option("--config", a.config, name == "generate" ? "scenario file" : "run configuration file");
    subs[name] = sub;
    return sub;
  };

  auto* gen = add("generate", "simulate a synthetic well into a CSV file");
  detail::add_key_flags(gen, cmd["generate"], kScenarioKeys, [](std::string_view k) {
    return "scenario key " + std::string(k);
  });

  auto* train = add("train", "fit one or more model variants to well data");
  train->add_option("--data", cmd["train"].data, "well CSV file(s)")->required();
  detail::add_key_flags(train, cmd["train"], run_keys, run_help);

  auto* predict = add("predict", "predict the oil rate for every usable sample");
  predict->add_option("--model", cmd["predict"].models, "model archive")->required()->expected(1);
  predict->add_option("--data", cmd["predict"].data, "well CSV file")->required()->expected(1);
  detail::add_key_flags(predict, cmd["predict"], run_keys, run_help);

  for (const std::string name : {"evaluate", "sensitivity"}) {
    auto* sub = add(name, name == "evaluate" ? "test-set accuracy per horizon" : "monotonicity sweeps around test points");
    sub->add_option("--model", cmd[name].models, "model archive(s)")->required();
    sub->add_option("--data", cmd[name].data, "well CSV file")->required()->expected(1);
    detail::add_key_flags(sub, cmd[name], run_keys, run_help);
  }

  auto* cons = add("consistency", "trace learned subfunctions against their mechanistic relations");
  cons->add_option("--model", cmd["consistency"].models, "model archive(s)")->required();
  detail::add_key_flags(cons, cmd["consistency"], run_keys, run_help);

  std::vector<const char*> argv{"vfm"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitSuccess : kExitInput;
  }

  std::string name;
  for (const auto& [n, sub] : subs) {
    if (sub->parsed()) name = n;
  }
  const auto& a = cmd[name];
  const auto start = std::chrono::steady_clock::now();
  try {
    RunManifest manifest(name, a.out);
    const auto flags = detail::given_flags(subs[name], a);
    if (name == "generate") {
      std::vector<std::string_view> keys(kScenarioKeys.begin(), kScenarioKeys.end());
      const auto cfg = layered_config(keys, {}, a.config, flags);
      if (a.config) manifest.add_input(*a.config);
      manifest.set_config(a.config, cfg);
      cmd_generate(cfg, a.config.value_or("scenario"), manifest, out);
    } else {
      const auto cfg = layered_config(run_keys, detail::run_defaults(), a.config, flags);
      if (a.config) manifest.add_input(*a.config);
      manifest.set_config(a.config, cfg);
      const auto s = settings_from_config(cfg);
      manifest.set_seed("seed", s.seed);
      if (name == "train") {
        manifest.set_seed("init", s.init_seed());
        manifest.set_seed("pretrain", s.pretrain_seed());
        cmd_train(s, a.data, manifest, out, err);
      } else if (name == "predict") {
        cmd_predict(s, a.models.front(), a.data.front(), manifest, out);
      } else if (name == "evaluate") {
        cmd_evaluate(s, a.models, a.data.front(), manifest, out);
      } else if (name == "sensitivity") {
        cmd_sensitivity(s, a.models, a.data.front(), manifest, out);
      } else {
        cmd_consistency(s, a.models, manifest, out);
      }
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    manifest.write(wall);
    return kExitSuccess;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const IngestError& e) {
    err << "error: ingest: " << e.what() << "\n";
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const EvaluationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInput;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, out, err);
}

}  // namespace vfm::cli
