#include "attenc/stats.hpp"

#include <algorithm>
#include <cmath>

namespace attenc::stats {

namespace {

double log_pmf(std::size_t k, std::size_t n, double p) {
  const double kk = static_cast<double>(k), nn = static_cast<double>(n);
  double lp = std::lgamma(nn + 1.0) - std::lgamma(kk + 1.0) - std::lgamma(nn - kk + 1.0);
  if (k > 0) lp += kk * std::log(p);
  if (k < n) lp += (nn - kk) * std::log1p(-p);
  return lp;
}

double pmf(std::size_t k, std::size_t n, double p) {
  if (p <= 0.0) return k == 0 ? 1.0 : 0.0;
  if (p >= 1.0) return k == n ? 1.0 : 0.0;
  return std::exp(log_pmf(k, n, p));
}

}  // namespace

double binomial_upper_tail(std::size_t k, std::size_t n, double p) {
  double s = 0.0;
  for (std::size_t i = k; i <= n; ++i) s += pmf(i, n, p);
  return std::min(1.0, s);
}

double binomial_lower_tail(std::size_t k, std::size_t n, double p) {
  double s = 0.0;
  for (std::size_t i = 0; i <= std::min(k, n); ++i) s += pmf(i, n, p);
  return std::min(1.0, s);
}

double binomial_two_sided(std::size_t k, std::size_t n, double p) {
  // sum of outcomes no more likely than the observed one
  const double observed = pmf(k, n, p) * (1.0 + 1e-7);
  double s = 0.0;
  for (std::size_t i = 0; i <= n; ++i) {
    const double q = pmf(i, n, p);
    if (q <= observed) s += q;
  }
  return std::min(1.0, s);
}

double sign_test(std::size_t wins, std::size_t losses) {
  const std::size_t n = wins + losses;
  if (n == 0) return 1.0;
  return binomial_two_sided(wins, n, 0.5);
}

double two_proportion_test(std::size_t k1, std::size_t n1, std::size_t k2, std::size_t n2) {
  const double p1 = static_cast<double>(k1) / static_cast<double>(n1);
  const double p2 = static_cast<double>(k2) / static_cast<double>(n2);
  const double pooled = static_cast<double>(k1 + k2) / static_cast<double>(n1 + n2);
  const double se = std::sqrt(pooled * (1.0 - pooled) * (1.0 / static_cast<double>(n1) + 1.0 / static_cast<double>(n2)));
  if (se == 0.0) return p1 == p2 ? 1.0 : 0.0;
  const double z = std::abs(p1 - p2) / se;
  return std::erfc(z / std::sqrt(2.0));
}

}  // namespace attenc::stats
