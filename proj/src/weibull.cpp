#include "owl/weibull.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "owl/common.hpp"

namespace owl::weibull {

namespace {
constexpr int kMaxIterations = 200;
constexpr double kTolerance = 1e-8;

// Log-samples shifted so the largest is zero; keeps exp(k * y) <= 1 for any k.
struct ShiftedLogs {
    std::vector<double> y;
    double log_max = 0.0;
    double mean_y = 0.0;
};

ShiftedLogs shifted_logs(std::span<const double> samples) {
    ShiftedLogs out;
    out.y.reserve(samples.size());
    out.log_max = std::log(*std::max_element(samples.begin(), samples.end()));
    for (double x : samples) out.y.push_back(std::log(x) - out.log_max);
    for (double v : out.y) out.mean_y += v;
    out.mean_y /= static_cast<double>(samples.size());
    return out;
}

struct Residual {
    double value;
    double slope;
};

Residual residual(const ShiftedLogs& logs, double k) {
    double sw = 0.0, swy = 0.0, swyy = 0.0;
    for (double y : logs.y) {
        const double w = std::exp(k * y);
        sw += w;
        swy += w * y;
        swyy += w * y * y;
    }
    const double m1 = swy / sw;
    const double m2 = swyy / sw;
    return {m1 - 1.0 / k - logs.mean_y, (m2 - m1 * m1) + 1.0 / (k * k)};
}

void validate_samples(std::span<const double> samples) {
    if (samples.size() < 2) throw UsageError("weibull fit needs at least 2 samples");
    for (double x : samples)
        if (!(x > 0.0) || !std::isfinite(x)) throw DataError("weibull fit: samples must be positive and finite");
    const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
    if (*lo == *hi) throw DataError("weibull fit: degenerate input, all samples equal");
}
}  // namespace

WeibullParams WeibullParams::checked(double shape, double scale) {
    if (!(shape > 0.0) || !std::isfinite(shape) || !(scale > 0.0) || !std::isfinite(scale))
        throw DataError("invalid weibull parameters (" + std::to_string(shape) + ", " + std::to_string(scale) + ")");
    return {shape, scale};
}

double shape_equation(std::span<const double> samples, double shape) {
    return residual(shifted_logs(samples), shape).value;
}

WeibullParams fit_mle(std::span<const double> samples) {
    validate_samples(samples);
    const auto logs = shifted_logs(samples);

    double var = 0.0;
    for (double y : logs.y) var += (y - logs.mean_y) * (y - logs.mean_y);
    var /= static_cast<double>(logs.y.size() - 1);
    double k = std::numbers::pi / std::sqrt(6.0 * var);
    if (!std::isfinite(k) || k <= 0.0) k = 1.0;

    // The residual increases monotonically from -inf (k -> 0) to -mean_y > 0
    // (k -> inf), so a sign bracket always exists.
    int iterations = 0;
    double lo = k, hi = k;
    Residual r = residual(logs, k);
    if (std::abs(r.value) <= kTolerance) return WeibullParams::checked(k, std::exp(logs.log_max));
    if (r.value < 0.0) {
        while (residual(logs, hi).value < 0.0) {
            lo = hi;
            hi *= 2.0;
            if (++iterations > kMaxIterations) throw NumericError("weibull fit: failed to bracket shape");
        }
    } else {
        while (residual(logs, lo).value > 0.0) {
            hi = lo;
            lo *= 0.5;
            if (++iterations > kMaxIterations) throw NumericError("weibull fit: failed to bracket shape");
        }
    }

    k = std::clamp(k, lo, hi);
    bool converged = false;
    for (int it = 0; it < kMaxIterations; ++it) {
        r = residual(logs, k);
        if (std::abs(r.value) <= kTolerance) {
            converged = true;
            break;
        }
        if (r.value < 0.0)
            lo = k;
        else
            hi = k;
        double next = k - r.value / r.slope;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (next == k) break;
        k = next;
    }
    if (!converged) {
        r = residual(logs, k);
        if (!(std::abs(r.value) <= kTolerance))
            throw NumericError("weibull fit: shape iteration did not converge (residual " + std::to_string(r.value) +
                               ")");
    }

    double sw = 0.0;
    for (double y : logs.y) sw += std::exp(k * y);
    const double scale = std::exp(logs.log_max + std::log(sw / static_cast<double>(logs.y.size())) / k);
    return WeibullParams::checked(k, scale);
}

double log_likelihood(const WeibullParams& params, std::span<const double> samples) {
    const double k = params.shape;
    const double lambda = params.scale;
    double ll = 0.0;
    for (double x : samples) {
        const double z = x / lambda;
        ll += std::log(k / lambda) + (k - 1.0) * std::log(z) - std::pow(z, k);
    }
    return ll;
}

double cdf(const WeibullParams& params, double x) {
    if (!(x >= 0.0)) throw DataError("weibull cdf: x must be non-negative");
    return -std::expm1(-std::pow(x / params.scale, params.shape));
}

double psi(const WeibullParams& params, double distance) {
    if (!(distance >= 0.0)) throw DataError("weibull psi: distance must be non-negative");
    return std::exp(-std::pow(distance / params.scale, params.shape));
}

}  // namespace owl::weibull
