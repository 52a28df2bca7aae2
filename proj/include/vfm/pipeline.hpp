#pragma once

// Well data preparation: CSV ingestion, sample filtering, steady-state
// compression, lagged mass fractions and the chronological split.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vfm/fluid.hpp"
#include "vfm/stats.hpp"
#include "vfm/text.hpp"

namespace vfm {

inline constexpr std::array<std::string_view, 9> kCsvColumns{
    "timestamp", "p1_pa", "p2_pa", "t1_k", "t2_k", "choke_frac", "qo_m3s", "qg_m3s", "qw_m3s"};

inline std::string csv_header() {
  std::string h;
  for (auto c : kCsvColumns) {
    if (!h.empty()) h += ',';
    h += c;
  }
  return h;
}

// A time series as read from disk. `rows[i]` is the 1-based data row of points[i].
struct Series {
  std::vector<OperatingPoint> points;
  std::vector<std::size_t> rows;

  std::size_t size() const { return points.size(); }
};

inline Series ingest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IngestError(0, "empty input, expected header '" + csv_header() + "'");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  const auto header = split_view(trim(line), ',');
  std::array<std::size_t, kCsvColumns.size()> col{};
  for (std::size_t k = 0; k < kCsvColumns.size(); ++k) {
    const auto it = std::find_if(header.begin(), header.end(), [&](auto h) { return trim(h) == kCsvColumns[k]; });
    if (it == header.end()) throw IngestError(0, "missing column '" + std::string(kCsvColumns[k]) + "'");
    col[k] = static_cast<std::size_t>(it - header.begin());
  }
  Series s;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto f = split_view(line, ',');
    if (f.size() != header.size()) {
      throw IngestError(row, "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(f.size()));
    }
    const auto ts = parse_iso8601(f[col[0]]);
    if (!ts) throw IngestError(row, "unparseable timestamp '" + std::string(trim(f[col[0]])) + "'");
    std::array<double, 8> v{};
    for (std::size_t k = 1; k < kCsvColumns.size(); ++k) {
      const auto d = parse_double(f[col[k]]);
      if (!d || !std::isfinite(*d)) {
        throw IngestError(row, "unparseable value '" + std::string(trim(f[col[k]])) + "' in column " +
                                   std::string(kCsvColumns[k]));
      }
      v[k - 1] = *d;
    }
    if (!s.points.empty() && *ts <= s.points.back().timestamp) {
      throw IngestError(row, *ts == s.points.back().timestamp ? "duplicate timestamp" : "timestamp out of order");
    }
    OperatingPoint x;
    x.timestamp = *ts;
    x.p1 = v[0];
    x.p2 = v[1];
    x.t1 = v[2];
    x.t2 = v[3];
    x.u = v[4];
    x.q_o = v[5];
    x.q_g = v[6];
    x.q_w = v[7];
    s.points.push_back(x);
    s.rows.push_back(row);
  }
  return s;
}

inline Series ingest_file(const std::string& path) {
  std::istringstream in(read_file(path));
  return ingest(in);
}

inline void write_csv(std::ostream& out, std::span<const OperatingPoint> points) {
  out << csv_header() << '\n';
  for (const auto& x : points) {
    out << format_iso8601(x.timestamp) << ',' << format_double(x.p1) << ',' << format_double(x.p2) << ','
        << format_double(x.t1) << ',' << format_double(x.t2) << ',' << format_double(x.u) << ','
        << format_double(x.q_o) << ',' << format_double(x.q_g) << ',' << format_double(x.q_w) << '\n';
  }
}

// --- filtering -------------------------------------------------------------------

enum class FilterRule {
  nonpositive_pressure,
  nonpositive_temperature,
  choke_out_of_range,
  negative_flow,
  zero_total_flow,
  reverse_pressure,
};
inline constexpr std::size_t kFilterRuleCount = 6;

inline std::string_view rule_name(FilterRule r) {
  static constexpr std::array<std::string_view, kFilterRuleCount> names{
      "nonpositive pressure", "nonpositive temperature", "choke opening out of range",
      "negative flow rate",   "zero total flow",         "downstream pressure above upstream"};
  return names[static_cast<std::size_t>(r)];
}

struct DroppedSample {
  std::size_t row = 0;
  Timestamp timestamp = 0;
  FilterRule rule{};
};

struct FilterReport {
  std::array<std::size_t, kFilterRuleCount> counts{};
  std::size_t input = 0;
  std::size_t retained = 0;
  std::vector<DroppedSample> dropped;

  std::size_t dropped_total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }
  double retained_fraction() const { return input ? static_cast<double>(retained) / static_cast<double>(input) : 0.0; }
};

inline nlohmann::json filter_report_to_json(const FilterReport& r) {
  nlohmann::json counts = nlohmann::json::object();
  for (std::size_t i = 0; i < kFilterRuleCount; ++i) counts[std::string(rule_name(static_cast<FilterRule>(i)))] = r.counts[i];
  return {{"input", r.input},
          {"retained", r.retained},
          {"dropped", r.dropped_total()},
          {"retained_fraction", r.retained_fraction()},
          {"counts", counts}};
}

// First failing rule, in declaration order.
inline std::optional<FilterRule> rejection_rule(const OperatingPoint& x) {
  if (!(x.p1 > 0 && x.p2 > 0)) return FilterRule::nonpositive_pressure;
  if (!(x.t1 > 0 && x.t2 > 0)) return FilterRule::nonpositive_temperature;
  if (!(x.u >= 0 && x.u <= 1)) return FilterRule::choke_out_of_range;
  if (!(x.q_o >= 0 && x.q_g >= 0 && x.q_w >= 0)) return FilterRule::negative_flow;
  if (!(x.q_o + x.q_g + x.q_w > 0)) return FilterRule::zero_total_flow;
  if (x.p2 > x.p1) return FilterRule::reverse_pressure;
  return std::nullopt;
}

inline std::pair<Series, FilterReport> filter_samples(const Series& in) {
  Series out;
  FilterReport rep;
  rep.input = in.size();
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (const auto r = rejection_rule(in.points[i])) {
      ++rep.counts[static_cast<std::size_t>(*r)];
      rep.dropped.push_back({in.rows.empty() ? i + 1 : in.rows[i], in.points[i].timestamp, *r});
      continue;
    }
    out.points.push_back(in.points[i]);
    out.rows.push_back(in.rows.empty() ? i + 1 : in.rows[i]);
  }
  rep.retained = out.size();
  return {std::move(out), rep};
}

// --- steady-state compression -------------------------------------------------------
//
// Sample i is steady when its trailing window [t_i - window, t_i] holds at least two
// samples and p1, p2 and u each vary by at most `tolerance` relative to their window
// median. A maximal run of consecutive steady samples spanning at least `window`
// collapses to the per-field median over the union of its windows, stamped with the
// run's last timestamp. Samples with no other sample within `window` on either side
// are already isolated operating points and pass through; everything else is dropped.
// Output points are more than `window` apart, so compression is idempotent.

struct CompressionConfig {
  Timestamp window = 3600;
  double tolerance = 0.02;
};

inline std::vector<OperatingPoint> steady_state_compress(std::span<const OperatingPoint> in,
                                                         const CompressionConfig& cfg = {}) {
  if (cfg.window <= 0) throw ConfigError("steady-state window must be positive");
  if (!(cfg.tolerance >= 0)) throw ConfigError("steady-state tolerance must be nonnegative");
  const std::size_t n = in.size();
  std::vector<std::size_t> first(n);  // first index inside the trailing window
  std::vector<char> steady(n, 0);
  std::vector<double> buf;
  auto relative_range = [&](std::size_t lo, std::size_t hi, auto get) {
    buf.clear();
    for (std::size_t k = lo; k <= hi; ++k) buf.push_back(get(in[k]));
    const auto [mn, mx] = std::minmax_element(buf.begin(), buf.end());
    const double med = std::abs(median(buf));
    if (med == 0.0) return *mx - *mn == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return (*mx - *mn) / med;
  };
  std::size_t lo = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (in[lo].timestamp < in[i].timestamp - cfg.window) ++lo;
    first[i] = lo;
    if (i - lo + 1 < 2) continue;
    steady[i] = relative_range(lo, i, [](const auto& x) { return x.p1; }) <= cfg.tolerance &&
                relative_range(lo, i, [](const auto& x) { return x.p2; }) <= cfg.tolerance &&
                relative_range(lo, i, [](const auto& x) { return x.u; }) <= cfg.tolerance;
  }
  auto isolated = [&](std::size_t i) {
    const bool before = i > 0 && in[i].timestamp - in[i - 1].timestamp <= cfg.window;
    const bool after = i + 1 < n && in[i + 1].timestamp - in[i].timestamp <= cfg.window;
    return !before && !after;
  };
  std::vector<OperatingPoint> out;
  std::size_t i = 0;
  while (i < n) {
    if (!steady[i]) {
      if (isolated(i)) out.push_back(in[i]);
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < n && steady[j + 1]) ++j;
    if (in[j].timestamp - in[i].timestamp >= cfg.window) {
      const std::size_t a = first[i];
      auto med = [&](auto get) {
        buf.clear();
        for (std::size_t k = a; k <= j; ++k) buf.push_back(get(in[k]));
        return median(buf);
      };
      OperatingPoint x;
      x.timestamp = in[j].timestamp;
      x.p1 = med([](const auto& s) { return s.p1; });
      x.p2 = med([](const auto& s) { return s.p2; });
      x.t1 = med([](const auto& s) { return s.t1; });
      x.t2 = med([](const auto& s) { return s.t2; });
      x.u = med([](const auto& s) { return s.u; });
      x.q_o = med([](const auto& s) { return s.q_o; });
      x.q_g = med([](const auto& s) { return s.q_g; });
      x.q_w = med([](const auto& s) { return s.q_w; });
      out.push_back(x);
    }
    i = j + 1;
  }
  return out;
}

// --- lagged fractions ------------------------------------------------------------------

struct LaggedSeries {
  std::vector<OperatingPoint> points;
  std::vector<Timestamp> fraction_source;  // timestamp of the sample the fractions came from
  std::size_t dropped = 0;                 // samples without a usable predecessor
};

inline LaggedSeries apply_lagged_fractions(std::span<const OperatingPoint> in, const FluidConstants& c) {
  LaggedSeries out;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const auto f = i > 0 ? lagged_mass_fractions(in[i - 1], c) : std::nullopt;
    if (!f) {
      ++out.dropped;
      continue;
    }
    OperatingPoint x = in[i];
    x.set_fractions(*f);
    out.points.push_back(x);
    out.fraction_source.push_back(in[i - 1].timestamp);
  }
  return out;
}

// --- partitioning ----------------------------------------------------------------------

enum class Partition { train, validation, test };

inline std::string_view partition_name(Partition p) {
  switch (p) {
    case Partition::train: return "train";
    case Partition::validation: return "validation";
    case Partition::test: return "test";
  }
  return "?";
}

struct SplitConfig {
  Timestamp test_span = 90 * kSecondsPerDay;
  double validation_fraction = 0.2;
  Timestamp chunk = 14 * kSecondsPerDay;
  std::uint64_t seed = 0;
};

// Marks whole chunks (aligned at the first timestamp) as validation, drawn in a
// seeded random order until at least `fraction` of the samples are covered.
inline std::vector<char> draw_validation_chunks(std::span<const Timestamp> t, Timestamp chunk, double fraction,
                                                std::uint64_t seed) {
  if (!(fraction >= 0 && fraction < 1)) throw ConfigError("validation fraction must lie in [0, 1)");
  if (chunk <= 0) throw ConfigError("validation chunk length must be positive");
  std::vector<char> val(t.size(), 0);
  if (fraction == 0.0 || t.empty()) return val;
  if (t.back() - t.front() < chunk) {
    throw ConfigError("too little data to form one " + std::to_string(chunk / kSecondsPerDay) + "-day validation chunk");
  }
  std::map<std::int64_t, std::vector<std::size_t>> chunks;
  for (std::size_t i = 0; i < t.size(); ++i) chunks[(t[i] - t.front()) / chunk].push_back(i);
  std::vector<std::int64_t> ids;
  for (const auto& [id, members] : chunks) ids.push_back(id);
  std::mt19937_64 rng(seed);
  for (std::size_t k = ids.size(); k > 1; --k) {
    std::swap(ids[k - 1], ids[static_cast<std::size_t>(rng() % k)]);
  }
  const double need = fraction * static_cast<double>(t.size());
  std::size_t taken = 0;
  for (auto id : ids) {
    if (static_cast<double>(taken) >= need) break;
    for (auto i : chunks[id]) val[i] = 1;
    taken += chunks[id].size();
  }
  return val;
}

struct WellDataset {
  std::string well_id = "well";
  std::vector<OperatingPoint> points;
  std::vector<Partition> partition;
  std::vector<Timestamp> fraction_source;
  FilterReport filter;
  std::size_t ingested = 0;
  std::size_t compression_removed = 0;
  std::size_t lag_removed = 0;

  std::vector<OperatingPoint> select(std::initializer_list<Partition> parts) const {
    std::vector<OperatingPoint> out;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (partition.empty() || std::find(parts.begin(), parts.end(), partition[i]) != parts.end()) {
        out.push_back(points[i]);
      }
    }
    return out;
  }
  std::vector<OperatingPoint> training() const { return select({Partition::train, Partition::validation}); }
  std::vector<OperatingPoint> test() const { return select({Partition::test}); }
};

inline void split(WellDataset& ds, const SplitConfig& cfg) {
  if (ds.points.empty()) throw ConfigError("cannot split an empty dataset");
  if (cfg.test_span <= 0) throw ConfigError("test span must be positive");
  const Timestamp t0 = ds.points.front().timestamp;
  const Timestamp t1 = ds.points.back().timestamp;
  if (t1 - t0 <= cfg.test_span) throw ConfigError("dataset span does not exceed the test span");
  const Timestamp cut = t1 - cfg.test_span;
  ds.partition.assign(ds.points.size(), Partition::train);
  std::vector<Timestamp> rest;
  for (std::size_t i = 0; i < ds.points.size(); ++i) {
    if (ds.points[i].timestamp > cut) {
      ds.partition[i] = Partition::test;
    } else {
      rest.push_back(ds.points[i].timestamp);
    }
  }
  const auto val = draw_validation_chunks(rest, cfg.chunk, cfg.validation_fraction, cfg.seed);
  for (std::size_t i = 0; i < rest.size(); ++i) {
    if (val[i]) ds.partition[i] = Partition::validation;
  }
}

struct PipelineConfig {
  bool compress = false;
  CompressionConfig compression{};
  SplitConfig split{};
  FluidConstants constants{};
};

// Filtering, optional compression and lagged fractions, without a split.
inline WellDataset preprocess(const Series& raw, const PipelineConfig& cfg, std::string well_id = "well") {
  WellDataset ds;
  ds.well_id = std::move(well_id);
  ds.ingested = raw.size();
  auto [kept, report] = filter_samples(raw);
  ds.filter = std::move(report);
  std::vector<OperatingPoint> pts = std::move(kept.points);
  if (cfg.compress) {
    auto c = steady_state_compress(pts, cfg.compression);
    ds.compression_removed = pts.size() - c.size();
    pts = std::move(c);
  }
  auto lagged = apply_lagged_fractions(pts, cfg.constants);
  ds.lag_removed = lagged.dropped;
  ds.points = std::move(lagged.points);
  ds.fraction_source = std::move(lagged.fraction_source);
  return ds;
}

inline WellDataset prepare(const Series& raw, const PipelineConfig& cfg, std::string well_id = "well") {
  auto ds = preprocess(raw, cfg, std::move(well_id));
  split(ds, cfg.split);
  return ds;
}

// Prepared samples with their partition label.
inline void write_partition_csv(std::ostream& out, const WellDataset& ds) {
  out << csv_header() << ",eta_g,eta_o,eta_w,partition\n";
  for (std::size_t i = 0; i < ds.points.size(); ++i) {
    const auto& x = ds.points[i];
    out << format_iso8601(x.timestamp) << ',' << format_double(x.p1) << ',' << format_double(x.p2) << ','
        << format_double(x.t1) << ',' << format_double(x.t2) << ',' << format_double(x.u) << ','
        << format_double(x.q_o) << ',' << format_double(x.q_g) << ',' << format_double(x.q_w) << ','
        << format_double(x.eta_g) << ',' << format_double(x.eta_o) << ',' << format_double(x.eta_w) << ','
        << partition_name(ds.partition.empty() ? Partition::train : ds.partition[i]) << '\n';
  }
}

}  // namespace vfm
