#include "owl/agent.hpp"

#include <algorithm>
#include <type_traits>
#include <utility>

namespace owl {

std::uint64_t perceptron_init_seed(const mlp::TrainConfig& config) { return derive_seed(config.rng_seed, 999); }

std::uint64_t perceptron_expand_seed(const mlp::TrainConfig& config, std::size_t phase) {
    return derive_seed(config.rng_seed, 1000 + phase);
}

namespace {
std::vector<LabeledVector> flatten(const std::map<ClassId, std::vector<TaggedVector>>& data) {
    std::vector<LabeledVector> out;
    for (const auto& [id, samples] : data)
        for (const auto& s : samples) out.push_back({s.features, id});
    return out;
}
}  // namespace

OwlAgent OwlAgent::initialize(LearnerKind kind, const std::map<ClassId, std::vector<TaggedVector>>& data,
                              std::size_t dim, const LearnerConfig& config, double delta) {
    if (data.empty()) throw DataError("agent: no initial classes");
    for (const auto& [id, samples] : data)
        if (samples.empty()) throw DataError("agent: initial class " + std::to_string(id) + " has no samples");

    if (kind == LearnerKind::evm) return OwlAgent(evm::fit(data, dim, config.evm), config, delta);

    std::vector<ClassId> ids;
    for (const auto& [id, _] : data) ids.push_back(id);
    auto model = mlp::init_model(dim, ids, perceptron_init_seed(config.mlp));
    const auto samples = flatten(data);
    model = mlp::train(std::move(model), samples, config.mlp, 0);
    OwlAgent agent(std::move(model), config, delta);
    agent.pending_ = select_exemplars(data);
    return agent;
}

OwlAgent::OwlAgent(Learner learner, LearnerConfig config, double delta)
    : learner_(std::move(learner)), config_(config), delta_(0.0) {
    set_delta(delta);
}

LearnerKind OwlAgent::kind() const noexcept {
    return std::holds_alternative<evm::EvmModel>(learner_) ? LearnerKind::evm : LearnerKind::perceptron;
}

void OwlAgent::set_delta(double delta) {
    // The reject-all sentinel sits one ulp above 1 and is accepted as well.
    if (!(delta >= 0.0 && delta <= reject_all_threshold())) throw UsageError("agent: delta must lie in [0, 1]");
    delta_ = delta;
}

std::size_t OwlAgent::dim() const {
    return std::visit(
        [](const auto& m) -> std::size_t {
            if constexpr (std::is_same_v<std::decay_t<decltype(m)>, evm::EvmModel>)
                return m.dim();
            else
                return m.input_dim();
        },
        learner_);
}

std::set<ClassId> OwlAgent::known_classes() const {
    if (const auto* m = std::get_if<evm::EvmModel>(&learner_)) {
        const auto ids = m->class_ids();
        return {ids.begin(), ids.end()};
    }
    const auto& p = std::get<mlp::PerceptronModel>(learner_);
    return {p.class_ids.begin(), p.class_ids.end()};
}

std::vector<evm::ClassScore> OwlAgent::class_scores(std::span<const float> query) const {
    if (const auto* m = std::get_if<evm::EvmModel>(&learner_)) return m->predict(query);
    const auto& p = std::get<mlp::PerceptronModel>(learner_);
    const auto probs = mlp::forward(p, query);
    std::vector<evm::ClassScore> scores;
    scores.reserve(probs.size());
    for (std::size_t r = 0; r < probs.size(); ++r) scores.push_back({p.class_ids[r], probs[r]});
    std::sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) { return a.class_id < b.class_id; });
    return scores;
}

Verdict OwlAgent::score(std::span<const float> query) const {
    const auto scores = class_scores(query);
    Verdict v;
    v.score = -1.0;
    for (const auto& s : scores) {
        if (s.probability > v.score) {
            v.score = s.probability;
            v.best_class = s.class_id;
        }
    }
    if (v.score >= delta_) v.known = v.best_class;
    return v;
}

Verdict OwlAgent::decide(const TaggedVector& query) {
    auto v = score(query.features.values());
    if (v.is_unknown() && buffered_ids_.insert(query.sample_id).second) buffer_.push_back(query);
    return v;
}

std::vector<TaggedVector> OwlAgent::take_buffer() {
    buffered_ids_.clear();
    return std::exchange(buffer_, {});
}

std::map<ClassId, std::vector<FeatureVector>> OwlAgent::select_exemplars(
    const std::map<ClassId, std::vector<TaggedVector>>& data) {
    std::map<ClassId, std::vector<FeatureVector>> out;
    for (const auto& [id, samples] : data) {
        std::vector<FeatureVector> features;
        features.reserve(samples.size());
        for (const auto& s : samples) features.push_back(s.features);
        const auto picks = herding_select(features, std::min(mlp::kExemplarsPerClass, features.size()));
        auto& chosen = out[id];
        for (std::size_t i : picks) chosen.push_back(features[i]);
    }
    return out;
}

void OwlAgent::enroll(const std::map<ClassId, std::vector<TaggedVector>>& labeled) {
    if (labeled.empty()) throw DataError("agent: empty enrollment");
    const auto known = known_classes();
    for (const auto& [id, samples] : labeled) {
        if (known.contains(id)) throw DataError("agent: class " + std::to_string(id) + " is already known");
        if (samples.empty()) throw DataError("agent: class " + std::to_string(id) + " has no samples to enroll");
    }

    const std::size_t next_phase = phase_ + 1;
    if (auto* m = std::get_if<evm::EvmModel>(&learner_)) {
        learner_ = evm::append_classes(*m, labeled, config_.evm);
    } else {
        auto& p = std::get<mlp::PerceptronModel>(learner_);
        std::vector<ClassId> ids;
        for (const auto& [id, _] : labeled) ids.push_back(id);
        auto expanded = mlp::expand_classes(p, ids, pending_, perceptron_expand_seed(config_.mlp, next_phase));
        const auto samples = flatten(labeled);
        learner_ = mlp::train(std::move(expanded), samples, config_.mlp, next_phase);
        pending_ = select_exemplars(labeled);
    }
    phase_ = next_phase;
    buffer_.clear();
    buffered_ids_.clear();
}

}  // namespace owl
