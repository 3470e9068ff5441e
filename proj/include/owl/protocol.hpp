#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "owl/agent.hpp"
#include "owl/feature_store.hpp"
#include "owl/metrics.hpp"

namespace owl::protocol {

enum class Mode { incremental, openworld };

/// Class-introduction plan: the initial classes, then one list of new
/// (unknown) classes per phase. All lists are pairwise disjoint.
struct PhaseSchedule {
    std::vector<ClassId> initial_classes;
    std::vector<std::vector<ClassId>> phases;
    Mode mode = Mode::incremental;

    void validate(const Dataset& dataset) const;
    bool operator==(const PhaseSchedule&) const = default;
};

/// `initial` classes followed by batches of `step` over the first `total`
/// entries of `classes` (total = 0 uses all). With a shuffle seed the class
/// order is permuted first.
PhaseSchedule make_schedule(std::span<const ClassId> classes, std::size_t initial, std::size_t step,
                            std::size_t total, Mode mode, std::optional<std::uint64_t> shuffle_seed = std::nullopt);

struct SchedulePreset {
    std::size_t initial = 50;
    std::size_t step = 5;
    std::size_t total = 0;
    bool shuffle = false;

    bool operator==(const SchedulePreset&) const = default;
};

/// "ow100": 50 initial classes, 100 in total. "ow500": 50 initial, 500 in total.
SchedulePreset named_preset(std::string_view name, std::size_t step);

struct ProtocolConfig {
    Mode mode = Mode::incremental;
    LearnerKind learner = LearnerKind::evm;
    std::vector<ClassId> initial_classes;
    std::vector<std::vector<ClassId>> phases;
    std::optional<SchedulePreset> preset;  // used when initial_classes is empty
    double delta = 0.0;
    std::optional<double> target_uda;
    std::size_t min_samples_per_class = 2;
    LearnerConfig learner_config;
    std::uint64_t seed = 0;
    std::filesystem::path features_path;

    void validate() const;
};

/// Sub-stream indices derived from ProtocolConfig::seed.
inline constexpr std::uint64_t kStreamPerceptron = 1;
inline constexpr std::uint64_t kStreamClassOrder = 2;
inline constexpr std::uint64_t kStreamHoldout = 3;
inline constexpr std::uint64_t kStreamTraffic = 100;  // + phase index

PhaseSchedule resolve_schedule(const ProtocolConfig& config, const Dataset& dataset);

/// Learner configuration with the perceptron seed taken from the
/// kStreamPerceptron sub-stream of config.seed.
LearnerConfig effective_learner_config(const ProtocolConfig& config);

/// Simulated annotator. Returns true labels for buffered unknowns, drops
/// samples whose class is already known and withholds classes with fewer
/// than min_samples_per_class samples until more arrive. A sample id is
/// counted once however often it is buffered.
class Annotator {
public:
    Annotator(const Dataset& truth, std::size_t min_samples_per_class = 2);

    std::map<ClassId, std::vector<TaggedVector>> annotate(const std::vector<TaggedVector>& buffer,
                                                          const std::set<ClassId>& known);

    const std::map<ClassId, std::vector<TaggedVector>>& withheld() const noexcept { return withheld_; }

private:
    const Dataset* truth_;
    std::size_t min_samples_;
    std::map<ClassId, std::vector<TaggedVector>> withheld_;
    std::set<std::string> withheld_ids_;
};

struct PhaseReport {
    std::size_t phase = 0;
    std::size_t n_known_classes = 0;
    std::size_t detected = 0;       // |DU_n|
    std::vector<ClassId> enrolled;  // K_n
    double delta = 0.0;             // threshold applied in the evaluation
    MetricRecord metrics;
};

struct OperationalOutcome {
    std::size_t detected = 0;
    std::vector<ClassId> enrolled;
    std::vector<std::string> trained_ids;
};

struct Evaluation {
    MetricRecord metrics;
    double delta = 0.0;
    std::vector<std::string> sample_ids;
};

/// Phase 0: trains the learner on every train sample of the initial classes.
OwlAgent run_initialization(const PhaseSchedule& schedule, const Dataset& dataset, const ProtocolConfig& config);

/// Phase n >= 1. Open-world mode streams the train samples of the known
/// classes, U_n and any earlier scheduled class still unknown through
/// decide(), annotates the buffer and enrolls what comes back. Incremental
/// mode enrolls all of U_n's train samples directly.
OperationalOutcome run_operational_phase(OwlAgent& agent, Annotator& annotator, const PhaseSchedule& schedule,
                                         const Dataset& dataset, std::size_t n, const ProtocolConfig& config);

/// Scores the val samples of the known classes plus, in open-world mode, the
/// next phase's unknown classes and any earlier scheduled class still
/// unknown. With a target UDA and unknowns present, the threshold is
/// calibrated on the unknown scores first. The agent is not modified.
Evaluation run_evaluation_phase(const OwlAgent& agent, const Dataset& dataset, const PhaseSchedule& schedule,
                                std::size_t n, std::optional<double> target_uda);

struct RunSummary {
    double average_top1 = 0.0;
    std::optional<double> average_cwca;
    std::optional<double> average_uda;
    std::optional<double> average_owca;
};

struct RunResult {
    PhaseSchedule schedule;
    std::vector<PhaseReport> reports;
    RunSummary summary;
    OwlAgent agent;
};

RunResult run_full(const ProtocolConfig& config, const Dataset& dataset);

std::string report_csv(std::span<const PhaseReport> reports);
/// Fixed-width text table of the reports with an averages row.
std::string render_table(std::span<const PhaseReport> reports, std::string_view title);

/// Shortest decimal that round-trips the double.
std::string format_double(double value);

}  // namespace owl::protocol
