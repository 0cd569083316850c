#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace mcsr {

struct WilcoxonResult {
  bool degenerate = false;  // every difference was zero; no p-value
  std::size_t n = 0;        // non-zero differences
  double w_plus = 0, w_minus = 0;
  double statistic = 0;  // min(W+, W-)
  double p_value = 1.0;  // two-sided
  bool exact = true;
};

inline void to_json(nlohmann::json& j, const WilcoxonResult& r) {
  if (r.degenerate) {
    j = {{"degenerate", true}, {"n", 0}};
    return;
  }
  j = {{"degenerate", false}, {"n", r.n},         {"w_plus", r.w_plus},  {"w_minus", r.w_minus},
       {"statistic", r.statistic}, {"p_value", r.p_value}, {"method", r.exact ? "exact" : "normal"}};
}

/// Average ranks (1-based) of |d|, ties sharing their mean rank.
inline std::vector<double> midranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

inline constexpr std::size_t kWilcoxonExactMax = 20;
// Reports skip tests with fewer non-zero differences; the exact p is never below 2^(1-n).
inline constexpr std::size_t kWilcoxonMinN = 5;

/// Two-sided signed-rank test on x - y. Zero differences are dropped. The
/// null distribution of W+ is counted over all 2^n sign assignments for
/// n <= 20 (midranks are doubled so sums stay integral); above that a
/// normal approximation with tie and continuity corrections is used.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y,
                                           bool force_normal = false) {
  if (x.size() != y.size()) throw std::invalid_argument("wilcoxon: samples must be paired");
  std::vector<double> d, mag;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i] - y[i];
    if (!std::isfinite(v)) throw std::invalid_argument("wilcoxon: non-finite difference");
    if (v != 0.0) {
      d.push_back(v);
      mag.push_back(std::abs(v));
    }
  }
  WilcoxonResult r;
  r.n = d.size();
  if (r.n == 0) {
    r.degenerate = true;
    return r;
  }
  const auto ranks = midranks(mag);
  for (std::size_t i = 0; i < r.n; ++i) (d[i] > 0 ? r.w_plus : r.w_minus) += ranks[i];
  r.statistic = std::min(r.w_plus, r.w_minus);
  const double n = static_cast<double>(r.n);

  if (r.n <= kWilcoxonExactMax && !force_normal) {
    r.exact = true;
    std::vector<std::size_t> doubled(r.n);
    std::size_t total = 0;
    for (std::size_t i = 0; i < r.n; ++i) total += doubled[i] = static_cast<std::size_t>(std::lround(2 * ranks[i]));
    std::vector<double> count(total + 1, 0.0);
    count[0] = 1;
    for (std::size_t v : doubled)
      for (std::size_t s = total; s >= v; --s) count[s] += count[s - v];
    const auto w = static_cast<std::size_t>(std::lround(2 * r.w_plus));
    double lower = 0, upper = 0;
    for (std::size_t s = 0; s <= total; ++s) {
      if (s <= w) lower += count[s];
      if (s >= w) upper += count[s];
    }
    const double all = std::ldexp(1.0, static_cast<int>(r.n));
    r.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / all);
    return r;
  }

  r.exact = false;
  std::vector<double> sorted = mag;
  std::sort(sorted.begin(), sorted.end());
  double ties = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    ties += t * t * t - t;
    i = j + 1;
  }
  const double mean = n * (n + 1) / 4.0;
  const double var = n * (n + 1) * (2 * n + 1) / 24.0 - ties / 48.0;
  const double dev = std::max(0.0, std::abs(r.w_plus - mean) - 0.5);
  const double z = var > 0 ? dev / std::sqrt(var) : 0.0;
  r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return r;
}

}  // namespace mcsr
