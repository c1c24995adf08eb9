#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "wcseg/error.hpp"

namespace wcseg {

inline double mean_of(std::span<const double> xs) {
  if (xs.empty()) throw DegenerateDataError("mean of an empty sample");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// n-1 denominator.
inline double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) throw DegenerateDataError("sample variance needs n >= 2");
  const double m = mean_of(xs);
  double ss = 0;
  for (double x : xs) ss += (x - m) * (x - m);
  return ss / static_cast<double>(xs.size() - 1);
}

inline double sample_sd(std::span<const double> xs) { return std::sqrt(sample_variance(xs)); }

// ---- Pearson ----

struct PearsonResult {
  double r, p, ci_low, ci_high;
  std::size_t n;
};

/// Sample correlation; two-sided p from t with n-2 df; Fisher-z confidence interval.
inline PearsonResult pearson(std::span<const double> xs, std::span<const double> ys, double confidence = 0.95) {
  if (xs.size() != ys.size()) throw ValidationError("pearson: length mismatch");
  const std::size_t n = xs.size();
  if (n < 3) throw DegenerateDataError("pearson: needs n >= 3");
  const double mx = mean_of(xs), my = mean_of(ys);
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx, syy += dy * dy, sxy += dx * dy;
  }
  if (!(sxx > 0) || !(syy > 0)) throw DegenerateDataError("pearson: zero variance");
  const double r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double df = static_cast<double>(n - 2);
  PearsonResult out{r, 0.0, r, r, n};
  if (std::abs(r) < 1.0) {
    const double t = r * std::sqrt(df / (1 - r * r));
    out.p = 2 * boost::math::cdf(boost::math::complement(boost::math::students_t(df), std::abs(t)));
    if (n > 3) {
      const double z = std::atanh(r), se = 1 / std::sqrt(static_cast<double>(n - 3));
      const double q = boost::math::quantile(boost::math::normal(), 0.5 + confidence / 2);
      out.ci_low = std::tanh(z - q * se);
      out.ci_high = std::tanh(z + q * se);
    } else {
      out.ci_low = -1.0, out.ci_high = 1.0;
    }
  }
  return out;
}

// ---- Bland-Altman ----

struct BlandAltmanResult {
  double bias, lower, upper, sd;
  std::size_t n;
};

/// Differences pred - reference; limits at bias ± 1.96 sample SD.
inline BlandAltmanResult bland_altman(std::span<const double> reference, std::span<const double> pred) {
  if (reference.size() != pred.size()) throw ValidationError("bland_altman: length mismatch");
  if (reference.size() < 2) throw DegenerateDataError("bland_altman: needs n >= 2");
  std::vector<double> d(reference.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = pred[i] - reference[i];
  const double bias = mean_of(d), sd = sample_sd(d);
  return {bias, bias - 1.96 * sd, bias + 1.96 * sd, sd, d.size()};
}

// ---- one-way ANOVA ----

struct AnovaResult {
  double f, p;
  std::size_t df_between, df_within;
};

inline AnovaResult one_way_anova(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw ValidationError("anova: needs at least two groups");
  std::size_t n = 0;
  double grand = 0;
  for (const auto& g : groups) {
    if (g.size() < 2) throw DegenerateDataError("anova: every group needs n >= 2");
    n += g.size();
    grand += std::accumulate(g.begin(), g.end(), 0.0);
  }
  grand /= static_cast<double>(n);
  double ssb = 0, ssw = 0;
  for (const auto& g : groups) {
    const double m = mean_of(g);
    ssb += static_cast<double>(g.size()) * (m - grand) * (m - grand);
    for (double x : g) ssw += (x - m) * (x - m);
  }
  if (!(ssw > 0)) throw DegenerateDataError("anova: zero within-group variance");
  const std::size_t dfb = groups.size() - 1, dfw = n - groups.size();
  const double f = (ssb / static_cast<double>(dfb)) / (ssw / static_cast<double>(dfw));
  const double p = boost::math::cdf(boost::math::complement(
      boost::math::fisher_f(static_cast<double>(dfb), static_cast<double>(dfw)), f));
  return {f, p, dfb, dfw};
}

// ---- post-hoc ----

struct WelchResult {
  double t, df, p;
};

inline WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  const double va = sample_variance(a) / static_cast<double>(a.size());
  const double vb = sample_variance(b) / static_cast<double>(b.size());
  const double diff = mean_of(a) - mean_of(b);
  const double se2 = va + vb;
  if (!(se2 > 0)) {
    if (diff == 0) return {0.0, std::numeric_limits<double>::infinity(), 1.0};
    throw DegenerateDataError("welch: zero variance in both groups");
  }
  const double t = diff / std::sqrt(se2);
  const double df = se2 * se2 /
                    (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  const double p = 2 * boost::math::cdf(boost::math::complement(boost::math::students_t(df), std::abs(t)));
  return {t, df, std::min(1.0, p)};
}

/// Holm step-down adjustment; result[i] >= p[i], order-preserving on sorted input.
inline std::vector<double> holm_adjust(std::span<const double> p) {
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
  std::vector<double> adj(m);
  double running = 0;
  for (std::size_t rank = 0; rank < m; ++rank) {
    running = std::max(running, std::min(1.0, static_cast<double>(m - rank) * p[order[rank]]));
    adj[order[rank]] = running;
  }
  return adj;
}

struct PairwiseP {
  std::size_t a, b;
  double raw, adjusted;
};

/// Welch t-test over every group pair (a < b), Holm-adjusted across pairs.
inline std::vector<PairwiseP> posthoc_pairwise(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw ValidationError("posthoc: needs at least two groups");
  for (const auto& g : groups)
    if (g.size() < 2) throw DegenerateDataError("posthoc: every group needs n >= 2");
  std::vector<PairwiseP> out;
  std::vector<double> raw;
  for (std::size_t a = 0; a < groups.size(); ++a)
    for (std::size_t b = a + 1; b < groups.size(); ++b) {
      const double p = welch_t_test(groups[a], groups[b]).p;
      out.push_back({a, b, p, 0});
      raw.push_back(p);
    }
  const auto adj = holm_adjust(raw);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].adjusted = adj[i];
  return out;
}

// ---- box plot ----

/// Linear interpolation between order statistics (h = (n-1)q).
inline double quantile_linear(std::vector<double> sorted_copy, double q) {
  if (sorted_copy.empty()) throw DegenerateDataError("quantile of an empty sample");
  std::sort(sorted_copy.begin(), sorted_copy.end());
  const double h = static_cast<double>(sorted_copy.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted_copy.size() - 1);
  return sorted_copy[lo] + (h - static_cast<double>(lo)) * (sorted_copy[hi] - sorted_copy[lo]);
}

struct BoxplotStats {
  double q1, median, q3, iqr, lower_fence, upper_fence;
  double whisker_low, whisker_high;  // extreme values inside the fences
  std::vector<double> outliers;      // in input order
};

inline BoxplotStats boxplot_stats(std::span<const double> values) {
  if (values.empty()) throw DegenerateDataError("boxplot: empty sample");
  std::vector<double> v(values.begin(), values.end());
  BoxplotStats s{};
  s.q1 = quantile_linear(v, 0.25);
  s.median = quantile_linear(v, 0.5);
  s.q3 = quantile_linear(v, 0.75);
  s.iqr = s.q3 - s.q1;
  s.lower_fence = s.q1 - 1.5 * s.iqr;
  s.upper_fence = s.q3 + 1.5 * s.iqr;
  s.whisker_low = std::numeric_limits<double>::infinity();
  s.whisker_high = -std::numeric_limits<double>::infinity();
  for (double x : values) {
    if (x < s.lower_fence || x > s.upper_fence) {
      s.outliers.push_back(x);
    } else {
      s.whisker_low = std::min(s.whisker_low, x);
      s.whisker_high = std::max(s.whisker_high, x);
    }
  }
  return s;
}

}  // namespace wcseg
