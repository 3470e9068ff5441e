#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "owl/common.hpp"
#include "owl/feature_store.hpp"
#include "owl/weibull.hpp"

namespace owl::evm {

using weibull::WeibullParams;

struct EvmHyperParams {
    double distance_multiplier = 0.7;  // dm
    double cover_threshold = 0.8;      // ct
    std::size_t tailsize = 75;
    std::size_t exemplars_per_class = 0;  // 0 selects the zero-exemplar variant

    void validate() const;
    bool operator==(const EvmHyperParams&) const = default;
};

struct ExtremeVector {
    FeatureVector features;
    WeibullParams weibull;
    std::string source_sample_id;

    bool operator==(const ExtremeVector&) const = default;
};

struct EvmClassModel {
    ClassId class_id;
    std::vector<ExtremeVector> extreme_vectors;

    bool operator==(const EvmClassModel&) const = default;
};

struct ClassScore {
    ClassId class_id;
    double probability;
};

class EvmModel {
public:
    EvmModel(std::size_t dim, EvmHyperParams params, std::map<ClassId, EvmClassModel> classes);

    std::size_t dim() const noexcept { return dim_; }
    const EvmHyperParams& params() const noexcept { return params_; }
    const std::map<ClassId, EvmClassModel>& classes() const noexcept { return classes_; }
    std::size_t num_classes() const noexcept { return classes_.size(); }
    std::vector<ClassId> class_ids() const;

    /// Per-class probability: max over the class's extreme vectors of
    /// psi(weibull_i, ||x_i - query||). Ordered by class id.
    std::vector<ClassScore> predict(std::span<const float> query) const;

    bool operator==(const EvmModel&) const = default;

private:
    std::size_t dim_;
    EvmHyperParams params_;
    std::map<ClassId, EvmClassModel> classes_;
};

/// Fits one class against its negatives: a Weibull on the min(tailsize, |negatives|)
/// smallest margins dm * ||x_i - x_j|| per positive, then greedy set cover with
/// cover threshold ct to pick the extreme vectors.
EvmClassModel fit_class(ClassId class_id, std::span<const TaggedVector> positives,
                        std::span<const std::span<const float>> negatives, const EvmHyperParams& params);

/// Initial fit: each class uses every other class's samples as negatives.
EvmModel fit(const std::map<ClassId, std::vector<TaggedVector>>& data, std::size_t dim,
             const EvmHyperParams& params);

/// Fits the new classes and appends them. Negatives for a new class are the
/// other new classes' positives plus the first exemplars_per_class extreme
/// vectors (stored order) of every existing class. Existing classes are
/// copied untouched. The result carries `params`.
EvmModel append_classes(const EvmModel& model, const std::map<ClassId, std::vector<TaggedVector>>& new_class_data,
                        const EvmHyperParams& params);

void serialize_model(const EvmModel& model, const std::filesystem::path& path);
EvmModel deserialize_model(const std::filesystem::path& path);

}  // namespace owl::evm
