#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "linksight/error.hpp"
#include "linksight/trace.hpp"
#include "linksight/util.hpp"

namespace linksight {

struct DtwConfig {
  /// Sakoe-Chiba band radius; unset means an unconstrained warp.
  std::optional<int> window = std::nullopt;
};

/// Dynamic time warping distance with |a_i - b_j| local cost and the
/// standard match/insert/delete steps.
inline double dtw(std::span<const double> a, std::span<const double> b,
                  const DtwConfig& cfg = {}) {
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());
  if (n == 0 || m == 0) throw ParameterError("baseline: dtw input is empty");
  if (cfg.window) {
    if (*cfg.window < 0)
      throw ParameterError("baseline: dtw window must be >= 0");
    if (*cfg.window < std::abs(n - m))
      throw InfeasibleError("baseline: dtw band narrower than the length gap");
  }
  const double inf = std::numeric_limits<double>::infinity();
  // Two-row dynamic program over the (n+1) x (m+1) grid.
  std::vector<double> prev(static_cast<std::size_t>(m) + 1, inf);
  std::vector<double> curr(static_cast<std::size_t>(m) + 1, inf);
  prev[0] = 0.0;
  for (int i = 1; i <= n; ++i) {
    int j_lo = 1, j_hi = m;
    if (cfg.window) {
      j_lo = std::max(1, i - *cfg.window);
      j_hi = std::min(m, i + *cfg.window);
    }
    std::fill(curr.begin(), curr.end(), inf);
    for (int j = j_lo; j <= j_hi; ++j) {
      double cost = std::abs(a[static_cast<std::size_t>(i - 1)] -
                             b[static_cast<std::size_t>(j - 1)]);
      double best = std::min({prev[static_cast<std::size_t>(j - 1)],
                              prev[static_cast<std::size_t>(j)],
                              curr[static_cast<std::size_t>(j - 1)]});
      curr[static_cast<std::size_t>(j)] = cost + best;
    }
    std::swap(prev, curr);
  }
  double result = prev[static_cast<std::size_t>(m)];
  if (!std::isfinite(result))
    throw InfeasibleError("baseline: dtw band blocked every warping path");
  return result;
}

struct LabeledSequence {
  std::vector<double> values;
  AnomalyKind label = AnomalyKind::None;
};

/// k-nearest-neighbor vote under DTW distance. Neighbor ties at equal
/// distance prefer the smaller label id; vote ties break by smaller summed
/// distance, then by label order. Both rules are independent of the
/// training set's storage order.
inline AnomalyKind knn_classify(std::span<const LabeledSequence> train,
                                std::span<const double> query, int k,
                                const DtwConfig& cfg = {}, int threads = 1) {
  if (train.empty()) throw ParameterError("baseline: empty training set");
  if (k < 1) throw ParameterError("baseline: k must be >= 1");
  if (static_cast<std::size_t>(k) > train.size())
    throw ParameterError("baseline: k exceeds the training set size");
  std::vector<std::pair<double, int>> scored(train.size());
  detail::parallel_for(train.size(), threads, [&](std::size_t i) {
    scored[i] = {dtw(train[i].values, query, cfg),
                 static_cast<int>(train[i].label)};
  });
  std::partial_sort(scored.begin(), scored.begin() + k, scored.end());
  std::map<int, std::pair<int, double>> votes;  // label -> (count, summed distance)
  for (int i = 0; i < k; ++i) {
    auto& v = votes[scored[static_cast<std::size_t>(i)].second];
    v.first += 1;
    v.second += scored[static_cast<std::size_t>(i)].first;
  }
  int best_label = -1;
  int best_count = -1;
  double best_sum = std::numeric_limits<double>::infinity();
  for (const auto& [label, v] : votes) {  // map iterates in label order
    if (v.first > best_count ||
        (v.first == best_count && v.second < best_sum)) {
      best_label = label;
      best_count = v.first;
      best_sum = v.second;
    }
  }
  return static_cast<AnomalyKind>(best_label);
}

}  // namespace linksight
