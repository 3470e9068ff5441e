#pragma once

#include <map>
#include <set>
#include <span>
#include <variant>
#include <vector>

#include "owl/common.hpp"
#include "owl/evm.hpp"
#include "owl/feature_store.hpp"
#include "owl/metrics.hpp"
#include "owl/perceptron.hpp"

namespace owl {

enum class LearnerKind { evm, perceptron };

struct LearnerConfig {
    evm::EvmHyperParams evm;
    mlp::TrainConfig mlp;
};

/// Open-world agent: a learner behind the thresholded decision rule, a buffer
/// of rejected queries, and class enrollment.
class OwlAgent {
public:
    using Learner = std::variant<evm::EvmModel, mlp::PerceptronModel>;

    /// Trains the initial learner on `data` (phase 0). For the perceptron, 20
    /// herding exemplars per class are selected from the training data.
    static OwlAgent initialize(LearnerKind kind, const std::map<ClassId, std::vector<TaggedVector>>& data,
                               std::size_t dim, const LearnerConfig& config, double delta);

    OwlAgent(Learner learner, LearnerConfig config, double delta);

    LearnerKind kind() const noexcept;
    const Learner& learner() const noexcept { return learner_; }
    const LearnerConfig& config() const noexcept { return config_; }
    double delta() const noexcept { return delta_; }
    void set_delta(double delta);
    std::size_t dim() const;
    std::set<ClassId> known_classes() const;
    std::size_t phase() const noexcept { return phase_; }

    /// Per-class probabilities from the learner, ordered by class id.
    std::vector<evm::ClassScore> class_scores(std::span<const float> query) const;

    /// Read-only decision: known(argmax) when max >= delta, else unknown.
    Verdict score(std::span<const float> query) const;

    /// As score(), and buffers the query when it is rejected.
    Verdict decide(const TaggedVector& query);

    const std::vector<TaggedVector>& buffer() const noexcept { return buffer_; }
    std::vector<TaggedVector> take_buffer();

    /// Enrolls newly labelled classes: EVM append, or perceptron expand + train
    /// on the new data and the stored exemplars. Clears the buffer.
    void enroll(const std::map<ClassId, std::vector<TaggedVector>>& labeled);

    /// Rehearsal exemplars held for classes the perceptron has not yet frozen.
    const std::map<ClassId, std::vector<FeatureVector>>& pending_exemplars() const noexcept { return pending_; }

private:
    static std::map<ClassId, std::vector<FeatureVector>> select_exemplars(
        const std::map<ClassId, std::vector<TaggedVector>>& data);

    Learner learner_;
    LearnerConfig config_;
    double delta_;
    std::vector<TaggedVector> buffer_;
    std::set<std::string> buffered_ids_;
    std::map<ClassId, std::vector<FeatureVector>> pending_;
    std::size_t phase_ = 0;
};

/// Seeds used for the perceptron at a given phase: expansion rows come from
/// derive_seed(rng_seed, 1000 + phase); phase 0 init uses derive_seed(rng_seed, 999).
std::uint64_t perceptron_init_seed(const mlp::TrainConfig& config);
std::uint64_t perceptron_expand_seed(const mlp::TrainConfig& config, std::size_t phase);

}  // namespace owl
