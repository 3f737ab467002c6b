#pragma once

#include <cstddef>

namespace attenc::stats {

/// P(X >= k) for X ~ Binomial(n, p).
double binomial_upper_tail(std::size_t k, std::size_t n, double p);
/// P(X <= k) for X ~ Binomial(n, p).
double binomial_lower_tail(std::size_t k, std::size_t n, double p);
/// Two-sided exact binomial test of k successes in n trials against p.
double binomial_two_sided(std::size_t k, std::size_t n, double p);
/// Two-sided sign test on paired outcomes, ties dropped.
double sign_test(std::size_t wins, std::size_t losses);
/// Two-sided two-proportion z-test p-value.
double two_proportion_test(std::size_t k1, std::size_t n1, std::size_t k2, std::size_t n2);

}  // namespace attenc::stats
