#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "repsim/types.hpp"

namespace repsim {

template <typename Scalar>
Scalar mean(const std::vector<Scalar>& xs) {
  require(!xs.empty(), errc::degenerate_input, "mean of empty sample");
  return std::accumulate(xs.begin(), xs.end(), Scalar(0)) / static_cast<Scalar>(xs.size());
}

// Sample standard deviation (n-1 denominator); 0 for fewer than two points.
template <typename Scalar>
Scalar stddev(const std::vector<Scalar>& xs) {
  if (xs.size() < 2) return Scalar(0);
  const Scalar m = mean(xs);
  Scalar ss = 0;
  for (Scalar x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<Scalar>(xs.size() - 1));
}

// Linear-interpolation quantile, q in [0,1], matching numpy's default.
template <typename Scalar>
Scalar quantile(std::vector<Scalar> xs, double q) {
  require(!xs.empty(), errc::degenerate_input, "quantile of empty sample");
  require(q >= 0.0 && q <= 1.0, errc::invalid_argument, "quantile order outside [0,1]");
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return static_cast<Scalar>((1.0 - frac) * xs[lo] + frac * xs[hi]);
}

// Fixed-width histogram over [lo, hi]; values on the top edge land in the
// last bin, values outside the range are clamped into the boundary bins.
template <typename Scalar>
std::vector<std::size_t> histogram(const std::vector<Scalar>& xs, std::size_t bins, Scalar lo,
                                   Scalar hi) {
  require(bins > 0, errc::invalid_argument, "histogram needs at least one bin");
  require(lo < hi, errc::invalid_argument, "histogram range is empty");
  std::vector<std::size_t> counts(bins, 0);
  for (Scalar x : xs) {
    auto b = static_cast<std::ptrdiff_t>(std::floor((x - lo) / (hi - lo) * bins));
    b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(bins) - 1);
    ++counts[static_cast<std::size_t>(b)];
  }
  return counts;
}

template <typename Scalar>
Scalar pearson(const std::vector<Scalar>& xs, const std::vector<Scalar>& ys) {
  require(xs.size() == ys.size(), errc::invalid_argument, "pearson inputs differ in length");
  require(xs.size() >= 2, errc::degenerate_input, "pearson needs at least two points");
  const Scalar mx = mean(xs);
  const Scalar my = mean(ys);
  Scalar sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  require(sxx > 0 && syy > 0, errc::constant_vector, "pearson of a constant vector");
  return sxy / std::sqrt(sxx * syy);
}

namespace detail {

// Average ranks for ties, 1-based.
template <typename Scalar>
std::vector<double> ranks(const std::vector<Scalar>& xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> r(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace detail

// Spearman rank correlation; exact +-1 when both rankings are tie-free and
// aligned or reversed, because the rank vectors are then integer-valued.
template <typename Scalar>
double spearman(const std::vector<Scalar>& xs, const std::vector<Scalar>& ys) {
  require(xs.size() == ys.size(), errc::invalid_argument, "spearman inputs differ in length");
  require(xs.size() >= 2, errc::degenerate_input, "spearman needs at least two points");
  const std::vector<double> rx = detail::ranks(xs);
  const std::vector<double> ry = detail::ranks(ys);
  return pearson(rx, ry);
}

}  // namespace repsim
