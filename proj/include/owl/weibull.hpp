#pragma once

#include <span>

namespace owl::weibull {

/// Two-parameter Weibull (shape kappa, scale lambda), both positive and finite.
struct WeibullParams {
    double shape;
    double scale;

    static WeibullParams checked(double shape, double scale);
    bool operator==(const WeibullParams&) const = default;
};

/// Maximum-likelihood fit. Solves the profile shape equation
///
///   sum(x^k ln x) / sum(x^k) - 1/k - mean(ln x) = 0
///
/// by safeguarded Newton iteration (bisection fallback inside a sign
/// bracket), starting from the log-moment estimate k0 = pi / (sqrt(6) sd(ln x)).
/// The scale follows in closed form, lambda = (sum(x^k) / n)^(1/k).
///
/// Throws UsageError for fewer than two samples, DataError for non-positive,
/// non-finite or all-equal samples, NumericError when 200 iterations do not
/// reach a residual of 1e-8.
WeibullParams fit_mle(std::span<const double> samples);

/// Residual of the shape equation above.
double shape_equation(std::span<const double> samples, double shape);

double log_likelihood(const WeibullParams& params, std::span<const double> samples);

double cdf(const WeibullParams& params, double x);

/// Probability of inclusion exp(-(distance / lambda)^kappa).
double psi(const WeibullParams& params, double distance);

}  // namespace owl::weibull
