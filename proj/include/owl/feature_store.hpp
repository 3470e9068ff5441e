#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "owl/common.hpp"

namespace owl {

/// Dense float32 feature row. Always non-empty and finite.
class FeatureVector {
public:
    explicit FeatureVector(std::vector<float> values);

    std::span<const float> values() const noexcept { return values_; }
    std::size_t dim() const noexcept { return values_.size(); }
    float operator[](std::size_t i) const { return values_[i]; }

    // Bitwise comparison, so -0.0f and 0.0f differ.
    bool operator==(const FeatureVector& other) const noexcept;

private:
    std::vector<float> values_;
};

enum class Split : std::uint8_t { train, val };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct LabeledSample {
    std::string sample_id;
    FeatureVector features;
    ClassId class_id;
    Split split;

    bool operator==(const LabeledSample&) const = default;
};

/// A feature vector tagged with the id of the sample it came from.
struct TaggedVector {
    std::string sample_id;
    FeatureVector features;

    bool operator==(const TaggedVector&) const = default;
};

/// A feature vector with its class label, used as training input.
struct LabeledVector {
    FeatureVector features;
    ClassId class_id;
};

/// Immutable collection of labelled samples sharing one dimensionality.
class Dataset {
public:
    Dataset(std::size_t dim, std::vector<LabeledSample> samples);

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return samples_.size(); }
    const std::vector<LabeledSample>& samples() const noexcept { return samples_; }

    const LabeledSample* find(std::string_view sample_id) const;

    // Sorted, unique class ids present in the given split.
    std::vector<ClassId> class_ids(Split split) const;
    std::vector<ClassId> class_ids() const;

    // Samples of the split grouped by class, preserving dataset order within a class.
    std::map<ClassId, std::vector<const LabeledSample*>> by_class(Split split) const;

    bool operator==(const Dataset& other) const { return dim_ == other.dim_ && samples_ == other.samples_; }

private:
    std::size_t dim_;
    std::vector<LabeledSample> samples_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct SynthSpec {
    std::size_t num_classes = 10;
    std::size_t dim = 32;
    std::size_t train_per_class = 100;
    std::size_t val_per_class = 50;
    double mean_radius = 10.0;
    double within_class_stddev = 1.0;
    std::uint64_t rng_seed = 0;

    void validate() const;
};

// The manifest lives next to the feature file as "manifest.csv".
std::filesystem::path manifest_path(const std::filesystem::path& features_path);

void write_features(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_features(const std::filesystem::path& path);

/// Class means uniform on the sphere of radius mean_radius; samples isotropic
/// Gaussian around them. Draw order from one Rng(rng_seed): all class means
/// (class 0 first, `dim` normals each, normalised), then for each class its
/// train samples followed by its val samples (`dim` normals each).
/// Sample ids are "c<class>-<split>-<index>".
Dataset generate_synthetic(const SynthSpec& spec);

/// Herding: greedily picks the index whose inclusion brings the running mean
/// closest to the full-set mean. Ties go to the lowest index.
std::vector<std::size_t> herding_select(std::span<const FeatureVector> samples, std::size_t budget);

double squared_distance(std::span<const float> a, std::span<const float> b) noexcept;
double distance(std::span<const float> a, std::span<const float> b) noexcept;

}  // namespace owl
