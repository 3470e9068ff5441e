#include "owl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace owl {

MetricRecord compute_metrics(std::span<const ScoredSample> scored) {
    std::size_t known = 0, known_correct = 0, known_top1 = 0;
    std::size_t unknown = 0, unknown_rejected = 0;
    for (const auto& s : scored) {
        if (s.true_class) {
            ++known;
            if (s.verdict.known && *s.verdict.known == *s.true_class) ++known_correct;
            if (s.verdict.best_class == *s.true_class) ++known_top1;
        } else {
            ++unknown;
            if (s.verdict.is_unknown()) ++unknown_rejected;
        }
    }

    MetricRecord r;
    r.n_known_samples = known;
    r.n_unknown_samples = unknown;
    const auto nk = static_cast<double>(known);
    const auto nu = static_cast<double>(unknown);
    if (known > 0) {
        r.cwca = static_cast<double>(known_correct) / nk;
        r.top1 = static_cast<double>(known_top1) / nk;
    }
    if (unknown > 0) r.uda = static_cast<double>(unknown_rejected) / nu;
    if (known > 0 && unknown > 0)
        r.owca = (nk * *r.cwca + nu * *r.uda) / (nk + nu);
    else if (known > 0)
        r.owca = r.cwca;
    else if (unknown > 0)
        r.owca = r.uda;
    return r;
}

double reject_all_threshold() noexcept { return std::nextafter(1.0, 2.0); }

double calibrate_threshold(std::span<const double> unknown_scores, double target_uda) {
    if (unknown_scores.empty()) throw DataError("calibration needs at least one unknown score");
    if (!(target_uda >= 0.0 && target_uda <= 1.0)) throw UsageError("target UDA must lie in [0, 1]");
    std::vector<double> sorted(unknown_scores.begin(), unknown_scores.end());
    for (double s : sorted)
        if (!std::isfinite(s)) throw DataError("calibration: non-finite score");
    std::sort(sorted.begin(), sorted.end());

    // Slack absorbs representation error in target * n (e.g. 0.3 * 10).
    const double n = static_cast<double>(sorted.size());
    const double needed = target_uda * n - 1e-9;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (i > 0 && sorted[i] == sorted[i - 1]) continue;
        // Candidate sorted[i] rejects exactly the i scores strictly below it.
        if (static_cast<double>(i) >= needed) return sorted[i];
    }
    return std::max(reject_all_threshold(), std::nextafter(sorted.back(), std::numeric_limits<double>::infinity()));
}

double average_incremental_accuracy(std::span<const double> per_step_top1) {
    if (per_step_top1.empty()) throw UsageError("average incremental accuracy needs at least one step");
    double total = 0.0;
    for (double a : per_step_top1) total += a;
    return total / static_cast<double>(per_step_top1.size());
}

}  // namespace owl
