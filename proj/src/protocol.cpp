#include "owl/protocol.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace owl::protocol {

namespace {
std::map<ClassId, std::vector<TaggedVector>> train_data(const Dataset& dataset, std::span<const ClassId> classes) {
    const auto groups = dataset.by_class(Split::train);
    std::map<ClassId, std::vector<TaggedVector>> out;
    for (ClassId id : classes) {
        const auto it = groups.find(id);
        if (it == groups.end()) throw DataError("class " + std::to_string(id) + " has no train samples");
        auto& dst = out[id];
        for (const auto* s : it->second) dst.push_back({s->sample_id, s->features});
    }
    return out;
}

// Scheduled classes of U_1 .. U_upto that the agent does not know yet.
std::set<ClassId> pending_unknown(const PhaseSchedule& schedule, std::size_t upto, const std::set<ClassId>& known) {
    std::set<ClassId> out;
    for (std::size_t i = 0; i < std::min(upto, schedule.phases.size()); ++i)
        for (ClassId id : schedule.phases[i])
            if (!known.contains(id)) out.insert(id);
    return out;
}
}  // namespace

void PhaseSchedule::validate(const Dataset& dataset) const {
    if (initial_classes.empty()) throw UsageError("schedule: no initial classes");
    const auto train_classes = dataset.class_ids(Split::train);
    std::set<ClassId> seen;
    const auto check = [&](ClassId id) {
        if (!seen.insert(id).second) throw UsageError("schedule: class " + std::to_string(id) + " listed twice");
        if (!std::binary_search(train_classes.begin(), train_classes.end(), id))
            throw DataError("schedule: class " + std::to_string(id) + " has no train samples in the dataset");
    };
    for (ClassId id : initial_classes) check(id);
    for (const auto& phase : phases) {
        if (phase.empty()) throw UsageError("schedule: phase without new classes");
        for (ClassId id : phase) check(id);
    }
}

PhaseSchedule make_schedule(std::span<const ClassId> classes, std::size_t initial, std::size_t step,
                            std::size_t total, Mode mode, std::optional<std::uint64_t> shuffle_seed) {
    std::vector<ClassId> order(classes.begin(), classes.end());
    if (shuffle_seed) {
        Rng rng(*shuffle_seed);
        shuffle(order, rng);
    }
    if (total == 0) total = order.size();
    if (total > order.size())
        throw UsageError("schedule: " + std::to_string(total) + " classes requested, " +
                         std::to_string(order.size()) + " available");
    if (initial == 0 || initial > total) throw UsageError("schedule: initial class count out of range");
    if (step == 0) throw UsageError("schedule: step must be positive");

    PhaseSchedule s;
    s.mode = mode;
    s.initial_classes.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(initial));
    for (std::size_t start = initial; start < total; start += step) {
        const std::size_t end = std::min(total, start + step);
        s.phases.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                              order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return s;
}

SchedulePreset named_preset(std::string_view name, std::size_t step) {
    if (name == "ow100") return {50, step, 100, false};
    if (name == "ow500") return {50, step, 500, false};
    throw UsageError("unknown schedule preset '" + std::string(name) + "'");
}

void ProtocolConfig::validate() const {
    if (!(delta >= 0.0 && delta <= reject_all_threshold())) throw UsageError("config: delta must lie in [0, 1]");
    if (target_uda && !(*target_uda >= 0.0 && *target_uda <= 1.0))
        throw UsageError("config: target_uda must lie in [0, 1]");
    if (min_samples_per_class == 0) throw UsageError("config: min_samples_per_class must be positive");
    if (initial_classes.empty() && !preset) throw UsageError("config: initial_classes or preset required");
    learner_config.evm.validate();
    learner_config.mlp.validate();
}

PhaseSchedule resolve_schedule(const ProtocolConfig& config, const Dataset& dataset) {
    PhaseSchedule s;
    if (!config.initial_classes.empty()) {
        s.initial_classes = config.initial_classes;
        s.phases = config.phases;
        s.mode = config.mode;
    } else {
        const auto& p = *config.preset;
        const auto classes = dataset.class_ids(Split::train);
        std::optional<std::uint64_t> seed;
        if (p.shuffle) seed = derive_seed(config.seed, kStreamClassOrder);
        s = make_schedule(classes, p.initial, p.step, p.total, config.mode, seed);
    }
    s.validate(dataset);
    return s;
}

Annotator::Annotator(const Dataset& truth, std::size_t min_samples_per_class)
    : truth_(&truth), min_samples_(min_samples_per_class) {
    if (min_samples_ == 0) throw UsageError("annotator: min_samples_per_class must be positive");
}

std::map<ClassId, std::vector<TaggedVector>> Annotator::annotate(const std::vector<TaggedVector>& buffer,
                                                                 const std::set<ClassId>& known) {
    for (const auto& item : buffer) {
        const auto* sample = truth_->find(item.sample_id);
        if (!sample) throw DataError("annotator: no ground truth for sample '" + item.sample_id + "'");
        if (known.contains(sample->class_id)) continue;
        if (!withheld_ids_.insert(item.sample_id).second) continue;
        withheld_[sample->class_id].push_back(item);
    }
    std::map<ClassId, std::vector<TaggedVector>> labeled;
    for (auto it = withheld_.begin(); it != withheld_.end();) {
        if (known.contains(it->first) || it->second.size() >= min_samples_) {
            for (const auto& item : it->second) withheld_ids_.erase(item.sample_id);
            if (!known.contains(it->first)) labeled.emplace(it->first, std::move(it->second));
            it = withheld_.erase(it);
        } else {
            ++it;
        }
    }
    return labeled;
}

LearnerConfig effective_learner_config(const ProtocolConfig& config) {
    auto out = config.learner_config;
    out.mlp.rng_seed = derive_seed(config.seed, kStreamPerceptron);
    return out;
}

OwlAgent run_initialization(const PhaseSchedule& schedule, const Dataset& dataset, const ProtocolConfig& config) {
    const auto data = train_data(dataset, schedule.initial_classes);
    return OwlAgent::initialize(config.learner, data, dataset.dim(), effective_learner_config(config), config.delta);
}

OperationalOutcome run_operational_phase(OwlAgent& agent, Annotator& annotator, const PhaseSchedule& schedule,
                                         const Dataset& dataset, std::size_t n, const ProtocolConfig& config) {
    if (n == 0 || n > schedule.phases.size())
        throw UsageError("phase index " + std::to_string(n) + " out of range [1, " +
                         std::to_string(schedule.phases.size()) + "]");
    const auto& unknown = schedule.phases[n - 1];
    OperationalOutcome out;

    if (schedule.mode == Mode::incremental) {
        const auto data = train_data(dataset, unknown);
        for (const auto& [_, samples] : data)
            for (const auto& s : samples) out.trained_ids.push_back(s.sample_id);
        agent.enroll(data);
        out.enrolled = unknown;
        std::sort(out.enrolled.begin(), out.enrolled.end());
        return out;
    }

    const auto known = agent.known_classes();
    const auto unknown_now = pending_unknown(schedule, n, known);
    std::set<ClassId> present(known.begin(), known.end());
    present.insert(unknown_now.begin(), unknown_now.end());
    std::vector<const LabeledSample*> stream;
    for (const auto& s : dataset.samples())
        if (s.split == Split::train && present.contains(s.class_id)) stream.push_back(&s);
    Rng rng(derive_seed(config.seed, kStreamTraffic + n));
    shuffle(stream, rng);

    for (const auto* s : stream) agent.decide({s->sample_id, s->features});
    out.detected = agent.buffer().size();

    const auto labeled = annotator.annotate(agent.buffer(), known);
    if (labeled.empty()) {
        agent.take_buffer();
        return out;
    }
    for (const auto& [id, samples] : labeled) {
        if (!unknown_now.contains(id))
            throw std::logic_error("protocol: enrolled class " + std::to_string(id) + " was not scheduled as unknown");
        out.enrolled.push_back(id);
        for (const auto& s : samples) out.trained_ids.push_back(s.sample_id);
    }
    agent.enroll(labeled);
    return out;
}

Evaluation run_evaluation_phase(const OwlAgent& agent, const Dataset& dataset, const PhaseSchedule& schedule,
                                std::size_t n, std::optional<double> target_uda) {
    const auto known = agent.known_classes();
    std::set<ClassId> unknown;
    if (schedule.mode == Mode::openworld) unknown = pending_unknown(schedule, n + 1, known);

    Evaluation out;
    std::vector<ScoredSample> scored;
    std::vector<double> unknown_scores;
    for (const auto& s : dataset.samples()) {
        if (s.split != Split::val) continue;
        const bool is_known = known.contains(s.class_id);
        if (!is_known && !unknown.contains(s.class_id)) continue;
        out.sample_ids.push_back(s.sample_id);
        auto verdict = agent.score(s.features.values());
        if (!is_known) unknown_scores.push_back(verdict.score);
        scored.push_back({is_known ? std::optional<ClassId>(s.class_id) : std::nullopt, verdict});
    }

    out.delta = agent.delta();
    if (target_uda && !unknown_scores.empty()) {
        out.delta = calibrate_threshold(unknown_scores, *target_uda);
        for (auto& s : scored) {
            if (s.verdict.score >= out.delta)
                s.verdict.known = s.verdict.best_class;
            else
                s.verdict.known.reset();
        }
    }
    out.metrics = compute_metrics(scored);
    return out;
}

RunResult run_full(const ProtocolConfig& config, const Dataset& dataset) {
    config.validate();
    const auto schedule = resolve_schedule(config, dataset);
    auto agent = run_initialization(schedule, dataset, config);
    Annotator annotator(dataset, config.min_samples_per_class);

    std::set<std::string> trained;
    const auto train_by_class = dataset.by_class(Split::train);
    for (ClassId id : schedule.initial_classes)
        for (const auto* s : train_by_class.at(id)) trained.insert(s->sample_id);

    std::vector<PhaseReport> reports;
    std::set<ClassId> expected_known(schedule.initial_classes.begin(), schedule.initial_classes.end());
    for (std::size_t n = 0; n <= schedule.phases.size(); ++n) {
        PhaseReport report;
        report.phase = n;
        if (n > 0) {
            const auto outcome = run_operational_phase(agent, annotator, schedule, dataset, n, config);
            report.detected = outcome.detected;
            report.enrolled = outcome.enrolled;
            trained.insert(outcome.trained_ids.begin(), outcome.trained_ids.end());
            expected_known.insert(outcome.enrolled.begin(), outcome.enrolled.end());
        }
        if (agent.known_classes() != expected_known)
            throw std::logic_error("protocol: known classes diverged from C + sum K_n at phase " + std::to_string(n));
        report.n_known_classes = expected_known.size();

        const auto eval = run_evaluation_phase(agent, dataset, schedule, n, config.target_uda);
        for (const auto& id : eval.sample_ids)
            if (trained.contains(id))
                throw std::logic_error("protocol: sample '" + id + "' used for both training and evaluation");
        report.delta = eval.delta;
        report.metrics = eval.metrics;
        if (config.target_uda && eval.metrics.n_unknown_samples > 0) agent.set_delta(eval.delta);
        reports.push_back(std::move(report));
    }

    RunSummary summary;
    std::vector<double> top1, cwca, uda, owca;
    for (const auto& r : reports) {
        if (r.metrics.top1) top1.push_back(*r.metrics.top1);
        if (r.metrics.cwca) cwca.push_back(*r.metrics.cwca);
        if (r.metrics.uda) uda.push_back(*r.metrics.uda);
        if (r.metrics.owca) owca.push_back(*r.metrics.owca);
    }
    summary.average_top1 = average_incremental_accuracy(top1);
    if (!cwca.empty()) summary.average_cwca = average_incremental_accuracy(cwca);
    if (!uda.empty()) summary.average_uda = average_incremental_accuracy(uda);
    if (!owca.empty()) summary.average_owca = average_incremental_accuracy(owca);
    return RunResult{schedule, std::move(reports), summary, std::move(agent)};
}

std::string format_double(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

std::string report_csv(std::span<const PhaseReport> reports) {
    const auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    std::string out = "phase,n_known,n_unknown,cwca,uda,owca,detected,enrolled\n";
    for (const auto& r : reports) {
        out += std::to_string(r.phase) + ',' + std::to_string(r.metrics.n_known_samples) + ',' +
               std::to_string(r.metrics.n_unknown_samples) + ',' + opt(r.metrics.cwca) + ',' + opt(r.metrics.uda) +
               ',' + opt(r.metrics.owca) + ',' + std::to_string(r.detected) + ',' + std::to_string(r.enrolled.size()) +
               '\n';
    }
    return out;
}

std::string render_table(std::span<const PhaseReport> reports, std::string_view title) {
    const auto pct = [](const std::optional<double>& v) {
        if (!v) return std::string("    ---");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%7.2f", 100.0 * *v);
        return std::string(buf);
    };
    std::ostringstream out;
    out << title << '\n';
    out << "phase  classes    Top-1     CwCA      UDA     OwCA  detected  enrolled\n";
    std::vector<double> sums(4, 0.0);
    std::vector<std::size_t> counts(4, 0);
    for (const auto& r : reports) {
        const std::optional<double> cols[4] = {r.metrics.top1, r.metrics.cwca, r.metrics.uda, r.metrics.owca};
        char head[32];
        std::snprintf(head, sizeof head, "%5zu  %7zu", r.phase, r.n_known_classes);
        out << head;
        for (int i = 0; i < 4; ++i) {
            out << "  " << pct(cols[i]);
            if (cols[i]) {
                sums[i] += *cols[i];
                ++counts[i];
            }
        }
        char tail[32];
        std::snprintf(tail, sizeof tail, "  %8zu  %8zu\n", r.detected, r.enrolled.size());
        out << tail;
    }
    out << "  avg         ";
    for (int i = 0; i < 4; ++i)
        out << "  " << pct(counts[i] ? std::optional<double>(sums[i] / static_cast<double>(counts[i])) : std::nullopt);
    out << '\n';
    return out.str();
}

}  // namespace owl::protocol
