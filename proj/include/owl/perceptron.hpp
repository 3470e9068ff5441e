#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "owl/common.hpp"
#include "owl/feature_store.hpp"

namespace owl::mlp {

inline constexpr std::size_t kExemplarsPerClass = 20;

/// Row-major dense matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool operator==(const Matrix&) const = default;
};

struct TrainConfig {
    std::size_t epochs = 300;
    double lr_phase0 = 1e-2;
    double lr_later = 1e-3;
    std::size_t batch_size = 128;
    double momentum = 0.9;
    std::uint64_t rng_seed = 0;

    void validate() const;
};

/// input -> relu(hidden) -> softmax(classes). hidden = floor(input / 2).
/// Output row r corresponds to class_ids[r].
struct PerceptronModel {
    Matrix w1;  // hidden x input
    std::vector<double> b1;
    Matrix w2;  // classes x hidden
    std::vector<double> b2;
    std::vector<ClassId> class_ids;
    std::vector<bool> frozen;  // per output row
    // Rehearsal memory, folded into every train() call.
    std::map<ClassId, std::vector<FeatureVector>> exemplars;

    std::size_t input_dim() const noexcept { return w1.cols; }
    std::size_t hidden_dim() const noexcept { return w1.rows; }
    std::size_t num_classes() const noexcept { return class_ids.size(); }
    std::size_t row_of(ClassId id) const;  // throws DataError for an unknown id

    void validate() const;
    bool operator==(const PerceptronModel&) const = default;
};

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
/// Draw order: W1 row-major, then W2 row-major, from Rng(rng_seed).
PerceptronModel init_model(std::size_t input_dim, std::span<const ClassId> class_ids, std::uint64_t rng_seed);

std::vector<double> forward(const PerceptronModel& model, std::span<const float> features);

struct Gradients {
    Matrix w1;
    std::vector<double> b1;
    Matrix w2;
    std::vector<double> b2;
};

/// Mean softmax cross-entropy over the batch; fills `grad` when non-null.
double loss_and_gradient(const PerceptronModel& model, std::span<const LabeledVector> batch, Gradients* grad);

/// Mini-batch SGD with momentum on softmax cross-entropy over samples plus the
/// stored exemplars. lr is lr_phase0 for phase 0 and lr_later afterwards. The
/// shuffle stream is Rng(derive_seed(rng_seed, phase_index)). Frozen output
/// rows (W2 row and b2 entry) are never written.
PerceptronModel train(PerceptronModel model, std::span<const LabeledVector> samples, const TrainConfig& config,
                      std::size_t phase_index);

/// Adds one output row per new class (weights from Rng(rng_seed), same scheme
/// as init_model with fan_out = total class count), freezes every existing row and
/// merges `exemplars` (existing classes only, at most 20 each) into the model.
PerceptronModel expand_classes(PerceptronModel model, std::span<const ClassId> new_class_ids,
                               std::map<ClassId, std::vector<FeatureVector>> exemplars, std::uint64_t rng_seed);

void serialize_model(const PerceptronModel& model, const std::filesystem::path& path);
PerceptronModel deserialize_model(const std::filesystem::path& path);

}  // namespace owl::mlp
