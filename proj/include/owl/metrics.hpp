#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "owl/common.hpp"

namespace owl {

/// Outcome of the thresholded decision rule for one query.
struct Verdict {
    std::optional<ClassId> known;  // empty = "unknown"
    double score = 0.0;            // max class probability
    ClassId best_class = 0;        // closed-world argmax, regardless of the threshold

    bool is_unknown() const noexcept { return !known.has_value(); }
};

struct ScoredSample {
    std::optional<ClassId> true_class;  // empty = ground-truth unknown
    Verdict verdict;
};

struct MetricRecord {
    std::optional<double> cwca;  // absent iff n_known_samples == 0
    std::optional<double> uda;   // absent iff n_unknown_samples == 0
    std::optional<double> owca;  // absent iff there are no samples at all
    std::optional<double> top1;  // closed-world argmax accuracy on known samples
    std::size_t n_known_samples = 0;
    std::size_t n_unknown_samples = 0;

    bool operator==(const MetricRecord&) const = default;
};

// CwCA counts a rejected known sample as an error; UDA is the fraction of
// true unknowns rejected; OwCA is the (knowns + 1)-way accuracy, computed as
// the sample-weighted mean of CwCA and UDA.
MetricRecord compute_metrics(std::span<const ScoredSample> scored);

/// Smallest candidate in {scores} U {next double above 1} whose fraction of
/// scores strictly below it reaches target_uda.
double calibrate_threshold(std::span<const double> unknown_scores, double target_uda);

/// Sentinel returned when every unknown must be rejected.
double reject_all_threshold() noexcept;

double average_incremental_accuracy(std::span<const double> per_step_top1);

}  // namespace owl
