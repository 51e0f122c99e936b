#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "linksight/error.hpp"
#include "linksight/rng.hpp"
#include "linksight/trace.hpp"
#include "linksight/util.hpp"

namespace linksight {

struct IntRange {
  int lo = 0;
  int hi = 0;
  friend bool operator==(const IntRange&, const IntRange&) = default;
};

struct RealRange {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const RealRange&, const RealRange&) = default;
};

/// Parameter ranges for the four anomaly shapes. Positions are 1-based
/// sample numbers (first sample = 1); defaults target 300-sample traces.
struct InjectionPlan {
  double affected_fraction = 0.33;
  IntRange suddend_start{200, 280};
  IntRange suddenr_start{25, 275};
  IntRange suddenr_duration{5, 20};
  double instad_rate = 0.01;  // fraction of the trace length, 1 sample each
  IntRange slowd_start{1, 20};
  IntRange slowd_duration{150, 180};
  RealRange slowd_slope{0.5, 1.5};
  double floor = kRssiFloor;
  std::uint64_t seed = 0;

  friend bool operator==(const InjectionPlan&, const InjectionPlan&) = default;
};

/// Number of spike positions for an InstaD injection, at least one.
inline int instad_position_count(double rate, int trace_length) {
  return std::max(1, static_cast<int>(std::lround(rate * trace_length)));
}

/// Rescales the plan's position and duration ranges from traces of length
/// `from_length` to traces of length `to_length`. The slope range is an RSSI
/// rate per sample and is left unchanged.
inline InjectionPlan scale_plan(const InjectionPlan& plan, int from_length,
                                int to_length) {
  if (from_length < 1 || to_length < 1)
    throw ParameterError("inject: plan lengths must be >= 1");
  double f = static_cast<double>(to_length) / from_length;
  auto scale = [&](IntRange r) {
    IntRange out;
    out.lo = std::max(1, static_cast<int>(std::lround(r.lo * f)));
    out.hi = std::max(out.lo, static_cast<int>(std::lround(r.hi * f)));
    return out;
  };
  InjectionPlan out = plan;
  out.suddend_start = scale(plan.suddend_start);
  out.suddenr_start = scale(plan.suddenr_start);
  out.suddenr_duration = scale(plan.suddenr_duration);
  out.slowd_start = scale(plan.slowd_start);
  out.slowd_duration = scale(plan.slowd_duration);
  return out;
}

inline void validate_plan(const InjectionPlan& plan, int trace_length) {
  auto check = [&](IntRange r, const char* name, bool may_overrun) {
    if (r.lo < 1 || r.lo > r.hi)
      throw ParameterError(std::string("inject: bad range for ") + name);
    if (r.hi > trace_length && !may_overrun)
      throw ParameterError(std::string("inject: ") + name +
                           " exceeds trace length");
  };
  if (!(plan.affected_fraction > 0.0 && plan.affected_fraction <= 1.0))
    throw ParameterError("inject: affected_fraction must be in (0, 1]");
  check(plan.suddend_start, "suddend_start", false);
  check(plan.suddenr_start, "suddenr_start", false);
  check(plan.suddenr_duration, "suddenr_duration", true);
  if (plan.suddenr_start.hi + plan.suddenr_duration.hi - 1 > trace_length)
    throw ParameterError("inject: suddenr window can exceed trace end");
  check(plan.slowd_start, "slowd_start", false);
  check(plan.slowd_duration, "slowd_duration", true);  // ramp truncates at end
  if (plan.slowd_slope.lo <= 0.0 || plan.slowd_slope.lo > plan.slowd_slope.hi)
    throw ParameterError("inject: bad slowd_slope range");
  if (plan.instad_rate <= 0.0 || plan.instad_rate > 1.0)
    throw ParameterError("inject: instad_rate must be in (0, 1]");
}

// ---------------------------------------------------------------------------
// Per-trace injection operations. All positions are 1-based sample numbers;
// every operation returns a modified copy and never raises a sample.
// ---------------------------------------------------------------------------

/// Permanent degradation: every sample from `start` to the end drops to the
/// floor and never recovers.
inline Trace inject_sudden_d(const Trace& trace, int start,
                             double floor = kRssiFloor) {
  int n = trace.length();
  if (start < 1 || start > n)
    throw ParameterError("inject: sudden_d start " + std::to_string(start) +
                         " outside [1, " + std::to_string(n) + "]");
  Trace out = trace;
  for (int k = start; k <= n; ++k)
    out.values[static_cast<std::size_t>(k - 1)] = floor;
  out.label = AnomalyKind::SuddenD;
  return out;
}

/// Degradation with recovery: samples `start .. start+duration-1` drop to
/// the floor, everything else is untouched.
inline Trace inject_sudden_r(const Trace& trace, int start, int duration,
                             double floor = kRssiFloor) {
  int n = trace.length();
  if (start < 1 || start > n)
    throw ParameterError("inject: sudden_r start " + std::to_string(start) +
                         " outside [1, " + std::to_string(n) + "]");
  if (duration < 1) throw ParameterError("inject: sudden_r duration must be >= 1");
  if (start + duration - 1 > n)
    throw ParameterError("inject: sudden_r window exceeds trace end");
  Trace out = trace;
  for (int k = start; k < start + duration; ++k)
    out.values[static_cast<std::size_t>(k - 1)] = floor;
  out.label = AnomalyKind::SuddenR;
  return out;
}

/// Single-sample spikes to the floor at each of the given positions.
inline Trace inject_insta_d(const Trace& trace, const std::vector<int>& positions,
                            double floor = kRssiFloor) {
  int n = trace.length();
  std::vector<int> sorted = positions;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] < 1 || sorted[i] > n)
      throw ParameterError("inject: insta_d position " +
                           std::to_string(sorted[i]) + " outside [1, " +
                           std::to_string(n) + "]");
    if (i > 0 && sorted[i] == sorted[i - 1])
      throw ParameterError("inject: duplicate insta_d position " +
                           std::to_string(sorted[i]));
  }
  Trace out = trace;
  for (int p : sorted) out.values[static_cast<std::size_t>(p - 1)] = floor;
  out.label = AnomalyKind::InstaD;
  return out;
}

/// Gradual ramp-down: inside [start, start+duration-1] each sample x gains
/// min(0, -slope*(x-start)); past the window the offset reached at the
/// window end is held to the trace end. Results clamp at the floor. The
/// window may overrun the trace, in which case the ramp truncates.
inline Trace inject_slow_d(const Trace& trace, int start, int duration,
                           double slope, double floor = kRssiFloor) {
  int n = trace.length();
  if (start < 1 || start > n)
    throw ParameterError("inject: slow_d start " + std::to_string(start) +
                         " outside [1, " + std::to_string(n) + "]");
  if (duration < 1) throw ParameterError("inject: slow_d duration must be >= 1");
  if (slope <= 0.0) throw ParameterError("inject: slow_d slope must be > 0");
  Trace out = trace;
  int window_end = std::min(start + duration - 1, n);
  double held = std::min(0.0, -slope * (window_end - start));
  for (int x = start; x <= n; ++x) {
    double offset = x <= window_end ? std::min(0.0, -slope * (x - start)) : held;
    double& v = out.values[static_cast<std::size_t>(x - 1)];
    v = std::max(floor, v + offset);
  }
  out.label = AnomalyKind::SlowD;
  return out;
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

namespace detail {

inline std::string copy_suffix(AnomalyKind kind) {
  switch (kind) {
    case AnomalyKind::SuddenD: return "-suddend";
    case AnomalyKind::SuddenR: return "-suddenr";
    case AnomalyKind::InstaD: return "-instad";
    case AnomalyKind::SlowD: return "-slowd";
    case AnomalyKind::None: break;
  }
  return "-none";
}

/// First `take` entries of a seeded permutation of 0..n-1 (partial
/// Fisher-Yates).
inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t take,
                                               Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  take = std::min(take, n);
  for (std::size_t i = 0; i < take; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.next_u64() % (n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(take);
  return idx;
}

inline Trace inject_kind(const Trace& trace, AnomalyKind kind,
                         const InjectionPlan& plan, Rng& rng) {
  int n = trace.length();
  switch (kind) {
    case AnomalyKind::SuddenD:
      return inject_sudden_d(
          trace, rng.uniform_int(plan.suddend_start.lo, plan.suddend_start.hi),
          plan.floor);
    case AnomalyKind::SuddenR: {
      int start = rng.uniform_int(plan.suddenr_start.lo, plan.suddenr_start.hi);
      int duration =
          rng.uniform_int(plan.suddenr_duration.lo, plan.suddenr_duration.hi);
      return inject_sudden_r(trace, start, duration, plan.floor);
    }
    case AnomalyKind::InstaD: {
      int want = instad_position_count(plan.instad_rate, n);
      // Sample distinct positions, skipping samples already at the floor so
      // every spike is visible.
      std::vector<int> eligible;
      eligible.reserve(static_cast<std::size_t>(n));
      for (int p = 1; p <= n; ++p)
        if (trace.values[static_cast<std::size_t>(p - 1)] > plan.floor)
          eligible.push_back(p);
      if (eligible.empty())
        for (int p = 1; p <= n; ++p) eligible.push_back(p);
      std::size_t take =
          std::min(static_cast<std::size_t>(want), eligible.size());
      std::vector<std::size_t> chosen = sample_indices(eligible.size(), take, rng);
      std::vector<int> positions;
      positions.reserve(take);
      for (std::size_t c : chosen) positions.push_back(eligible[c]);
      return inject_insta_d(trace, positions, plan.floor);
    }
    case AnomalyKind::SlowD: {
      int start = rng.uniform_int(plan.slowd_start.lo, plan.slowd_start.hi);
      int duration =
          rng.uniform_int(plan.slowd_duration.lo, plan.slowd_duration.hi);
      double slope = rng.uniform_real(plan.slowd_slope.lo, plan.slowd_slope.hi);
      return inject_slow_d(trace, start, duration, slope, plan.floor);
    }
    case AnomalyKind::None: break;
  }
  return trace;
}

}  // namespace detail

/// Replicates the base corpus once per anomaly kind, injects that kind into
/// a seeded random `affected_fraction` of each copy, and concatenates the
/// four copies. With 2123 base traces and fraction 0.33 this yields 8492
/// traces: 700 per anomaly and 5692 normal.
inline LabeledDataset build_labeled_dataset(const std::vector<Trace>& base,
                                            const InjectionPlan& plan,
                                            std::vector<std::string>* warnings = nullptr) {
  if (base.empty()) throw ParameterError("inject: base corpus is empty");
  int length = base.front().length();
  for (const Trace& t : base)
    if (t.length() != length)
      throw ParameterError("inject: base traces must share one length");
  validate_plan(plan, length);

  std::size_t per_copy =
      static_cast<std::size_t>(plan.affected_fraction * base.size());
  if (per_copy == 0) {
    per_copy = 1;
    if (warnings)
      warnings->push_back("inject: base corpus smaller than 1/affected_fraction;"
                          " injecting one trace per copy");
  }

  LabeledDataset dataset;
  dataset.trace_length = length;
  dataset.seed = plan.seed;
  dataset.traces.reserve(base.size() * kAnomalyKinds.size());
  for (AnomalyKind kind : kAnomalyKinds) {
    Rng select_rng(derive_seed(plan.seed, "select", static_cast<std::uint64_t>(kind)));
    std::vector<std::size_t> chosen =
        detail::sample_indices(base.size(), per_copy, select_rng);
    std::vector<bool> inject_mask(base.size(), false);
    for (std::size_t i : chosen) inject_mask[i] = true;
    for (std::size_t i = 0; i < base.size(); ++i) {
      Trace copy = base[i];
      copy.id += detail::copy_suffix(kind);
      copy.label = AnomalyKind::None;
      if (inject_mask[i]) {
        Rng param_rng(derive_seed(
            plan.seed, "params-" + std::string(to_string(kind)),
            static_cast<std::uint64_t>(i)));
        copy = detail::inject_kind(copy, kind, plan, param_rng);
        copy.id = base[i].id + detail::copy_suffix(kind);
      }
      dataset.traces.push_back(std::move(copy));
    }
  }
  dataset.provenance =
      "inject base=" + std::to_string(base.size()) +
      " fraction=" + format_double(plan.affected_fraction) +
      " per_kind=" + std::to_string(per_copy) +
      " normal=" + std::to_string(dataset.traces.size() - 4 * per_copy);
  return dataset;
}

// ---------------------------------------------------------------------------
// Plan configuration file: flat key=value lines.
// ---------------------------------------------------------------------------

inline void save_plan(std::ostream& out, const InjectionPlan& plan) {
  out << "affected_fraction=" << format_double(plan.affected_fraction) << "\n"
      << "suddend_start_min=" << plan.suddend_start.lo << "\n"
      << "suddend_start_max=" << plan.suddend_start.hi << "\n"
      << "suddenr_start_min=" << plan.suddenr_start.lo << "\n"
      << "suddenr_start_max=" << plan.suddenr_start.hi << "\n"
      << "suddenr_duration_min=" << plan.suddenr_duration.lo << "\n"
      << "suddenr_duration_max=" << plan.suddenr_duration.hi << "\n"
      << "instad_rate=" << format_double(plan.instad_rate) << "\n"
      << "slowd_start_min=" << plan.slowd_start.lo << "\n"
      << "slowd_start_max=" << plan.slowd_start.hi << "\n"
      << "slowd_duration_min=" << plan.slowd_duration.lo << "\n"
      << "slowd_duration_max=" << plan.slowd_duration.hi << "\n"
      << "slowd_slope_min=" << format_double(plan.slowd_slope.lo) << "\n"
      << "slowd_slope_max=" << format_double(plan.slowd_slope.hi) << "\n"
      << "floor=" << format_double(plan.floor) << "\n"
      << "seed=" << plan.seed << "\n";
}

inline InjectionPlan load_plan(std::istream& in) {
  InjectionPlan plan;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    std::string where = "inject: plan line " + std::to_string(line_no);
    std::size_t eq = view.find('=');
    if (eq == std::string_view::npos) throw ParseError(where + ": missing '='");
    std::string_view key = trim(view.substr(0, eq));
    std::string_view value = trim(view.substr(eq + 1));
    auto as_int = [&] { return static_cast<int>(parse_int(value, where)); };
    if (key == "affected_fraction") plan.affected_fraction = parse_double(value, where);
    else if (key == "suddend_start_min") plan.suddend_start.lo = as_int();
    else if (key == "suddend_start_max") plan.suddend_start.hi = as_int();
    else if (key == "suddenr_start_min") plan.suddenr_start.lo = as_int();
    else if (key == "suddenr_start_max") plan.suddenr_start.hi = as_int();
    else if (key == "suddenr_duration_min") plan.suddenr_duration.lo = as_int();
    else if (key == "suddenr_duration_max") plan.suddenr_duration.hi = as_int();
    else if (key == "instad_rate") plan.instad_rate = parse_double(value, where);
    else if (key == "slowd_start_min") plan.slowd_start.lo = as_int();
    else if (key == "slowd_start_max") plan.slowd_start.hi = as_int();
    else if (key == "slowd_duration_min") plan.slowd_duration.lo = as_int();
    else if (key == "slowd_duration_max") plan.slowd_duration.hi = as_int();
    else if (key == "slowd_slope_min") plan.slowd_slope.lo = parse_double(value, where);
    else if (key == "slowd_slope_max") plan.slowd_slope.hi = parse_double(value, where);
    else if (key == "floor") plan.floor = parse_double(value, where);
    else if (key == "seed") plan.seed = static_cast<std::uint64_t>(parse_int(value, where));
    else throw ParseError(where + ": unknown key '" + std::string(key) + "'");
  }
  return plan;
}

}  // namespace linksight
