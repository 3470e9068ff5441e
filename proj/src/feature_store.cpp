#include "owl/feature_store.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>

#include "owl/binary_io.hpp"

namespace owl {

namespace {
constexpr char kMagic[4] = {'O', 'W', 'L', 'F'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 16;
constexpr std::string_view kManifestHeader = "sample_id,class_id,split,row_index";

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

std::uint64_t parse_unsigned(const std::string& text, const std::string& what) {
    if (text.empty() || !std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isdigit(c); }))
        throw DataError("manifest: bad " + what + " '" + text + "'");
    try {
        return std::stoull(text);
    } catch (const std::exception&) {
        throw DataError("manifest: bad " + what + " '" + text + "'");
    }
}
}  // namespace

FeatureVector::FeatureVector(std::vector<float> values) : values_(std::move(values)) {
    if (values_.empty()) throw DataError("feature vector must have dim >= 1");
    for (float v : values_)
        if (!std::isfinite(v)) throw DataError("feature vector contains a non-finite value");
}

bool FeatureVector::operator==(const FeatureVector& other) const noexcept {
    if (values_.size() != other.values_.size()) return false;
    for (std::size_t i = 0; i < values_.size(); ++i)
        if (std::bit_cast<std::uint32_t>(values_[i]) != std::bit_cast<std::uint32_t>(other.values_[i])) return false;
    return true;
}

std::string_view to_string(Split split) { return split == Split::train ? "train" : "val"; }

Split parse_split(std::string_view text) {
    if (text == "train") return Split::train;
    if (text == "val") return Split::val;
    throw DataError("unknown split '" + std::string(text) + "'");
}

Dataset::Dataset(std::size_t dim, std::vector<LabeledSample> samples) : dim_(dim), samples_(std::move(samples)) {
    if (dim_ == 0) throw DataError("dataset dim must be >= 1");
    index_.reserve(samples_.size());
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        const auto& s = samples_[i];
        if (s.features.dim() != dim_)
            throw DataError("sample '" + s.sample_id + "' has dim " + std::to_string(s.features.dim()) +
                            ", dataset dim is " + std::to_string(dim_));
        if (!index_.emplace(s.sample_id, i).second) throw DataError("duplicate sample_id '" + s.sample_id + "'");
    }
}

const LabeledSample* Dataset::find(std::string_view sample_id) const {
    const auto it = index_.find(std::string(sample_id));
    return it == index_.end() ? nullptr : &samples_[it->second];
}

std::vector<ClassId> Dataset::class_ids(Split split) const {
    std::set<ClassId> ids;
    for (const auto& s : samples_)
        if (s.split == split) ids.insert(s.class_id);
    return {ids.begin(), ids.end()};
}

std::vector<ClassId> Dataset::class_ids() const {
    std::set<ClassId> ids;
    for (const auto& s : samples_) ids.insert(s.class_id);
    return {ids.begin(), ids.end()};
}

std::map<ClassId, std::vector<const LabeledSample*>> Dataset::by_class(Split split) const {
    std::map<ClassId, std::vector<const LabeledSample*>> groups;
    for (const auto& s : samples_)
        if (s.split == split) groups[s.class_id].push_back(&s);
    return groups;
}

void SynthSpec::validate() const {
    if (num_classes == 0) throw UsageError("synthetic spec: num_classes must be positive");
    if (dim == 0) throw UsageError("synthetic spec: dim must be positive");
    if (train_per_class == 0 || val_per_class == 0)
        throw UsageError("synthetic spec: samples per class must be positive");
    if (!(mean_radius > 0.0) || !std::isfinite(mean_radius))
        throw UsageError("synthetic spec: mean_radius must be positive");
    if (!(within_class_stddev > 0.0) || !std::isfinite(within_class_stddev))
        throw UsageError("synthetic spec: within_class_stddev must be positive");
}

std::filesystem::path manifest_path(const std::filesystem::path& features_path) {
    return features_path.parent_path() / "manifest.csv";
}

void write_features(const Dataset& dataset, const std::filesystem::path& path) {
    const auto count = dataset.size();
    if (count > std::numeric_limits<std::uint32_t>::max()) throw DataError("too many samples for feature file");

    io::ByteWriter out;
    out.raw(std::string_view(kMagic, 4));
    out.u32(kVersion);
    out.u32(static_cast<std::uint32_t>(count));
    out.u32(static_cast<std::uint32_t>(dataset.dim()));

    std::string manifest(kManifestHeader);
    manifest += '\n';
    for (std::size_t row = 0; row < count; ++row) {
        const auto& s = dataset.samples()[row];
        for (float v : s.features.values()) {
            if (!std::isfinite(v)) throw DataError("refusing to write non-finite value in '" + s.sample_id + "'");
            out.f32(v);
        }
        if (s.sample_id.empty() || s.sample_id.find_first_of(",\"\r\n") != std::string::npos)
            throw DataError("sample_id '" + s.sample_id + "' cannot be stored in the manifest");
        manifest += s.sample_id;
        manifest += ',' + std::to_string(s.class_id) + ',';
        manifest += to_string(s.split);
        manifest += ',' + std::to_string(row) + '\n';
    }
    io::write_file(path, out.bytes());
    io::write_text(manifest_path(path), manifest);
}

Dataset read_features(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    io::ByteReader in(bytes, "feature file " + path.string());
    if (bytes.size() < kHeaderBytes) throw DataError("feature file " + path.string() + ": header truncated");
    if (in.raw(4) != std::string_view(kMagic, 4)) throw DataError("feature file " + path.string() + ": bad magic");
    const auto version = in.u32();
    if (version != kVersion)
        throw DataError("feature file " + path.string() + ": unsupported version " + std::to_string(version));
    const std::uint64_t count = in.u32();
    const std::uint64_t dim = in.u32();
    if (dim == 0) throw DataError("feature file " + path.string() + ": dim must be >= 1");
    if (count * dim * 4 != in.remaining())
        throw DataError("feature file " + path.string() + ": count x dim inconsistent with payload length");

    std::vector<std::vector<float>> rows(count, std::vector<float>(dim));
    for (auto& row : rows)
        for (auto& v : row) v = in.f32();

    std::ifstream manifest(manifest_path(path));
    if (!manifest) throw DataError("cannot open manifest " + manifest_path(path).string());
    std::string line;
    if (!std::getline(manifest, line) || line != kManifestHeader)
        throw DataError("manifest: missing or wrong header");

    std::vector<std::optional<LabeledSample>> by_row(count);
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 4) throw DataError("manifest: expected 4 fields in '" + line + "'");
        const auto class_id = parse_unsigned(fields[1], "class_id");
        const auto row = parse_unsigned(fields[3], "row_index");
        if (class_id > std::numeric_limits<ClassId>::max()) throw DataError("manifest: class_id out of range");
        if (row >= count) throw DataError("manifest: row_index " + fields[3] + " out of range");
        if (by_row[row]) throw DataError("manifest: row_index " + fields[3] + " listed twice");
        by_row[row] = LabeledSample{fields[0], FeatureVector(std::move(rows[row])), static_cast<ClassId>(class_id),
                                    parse_split(fields[2])};
    }

    std::vector<LabeledSample> samples;
    samples.reserve(count);
    for (std::size_t row = 0; row < count; ++row) {
        if (!by_row[row]) throw DataError("manifest: no entry for row " + std::to_string(row));
        samples.push_back(std::move(*by_row[row]));
    }
    return Dataset(static_cast<std::size_t>(dim), std::move(samples));
}

Dataset generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.rng_seed);

    std::vector<std::vector<double>> means(spec.num_classes, std::vector<double>(spec.dim));
    for (auto& mean : means) {
        double norm2 = 0.0;
        do {
            norm2 = 0.0;
            for (auto& v : mean) {
                v = rng.normal();
                norm2 += v * v;
            }
        } while (norm2 == 0.0);
        const double scale = spec.mean_radius / std::sqrt(norm2);
        for (auto& v : mean) v *= scale;
    }

    std::vector<LabeledSample> samples;
    samples.reserve(spec.num_classes * (spec.train_per_class + spec.val_per_class));
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        const auto emit = [&](Split split, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<float> values(spec.dim);
                for (std::size_t d = 0; d < spec.dim; ++d)
                    values[d] = static_cast<float>(means[c][d] + spec.within_class_stddev * rng.normal());
                samples.push_back({"c" + std::to_string(c) + "-" + std::string(to_string(split)) + "-" +
                                       std::to_string(i),
                                   FeatureVector(std::move(values)), static_cast<ClassId>(c), split});
            }
        };
        emit(Split::train, spec.train_per_class);
        emit(Split::val, spec.val_per_class);
    }
    return Dataset(spec.dim, std::move(samples));
}

std::vector<std::size_t> herding_select(std::span<const FeatureVector> samples, std::size_t budget) {
    if (budget > samples.size())
        throw UsageError("herding budget " + std::to_string(budget) + " exceeds sample count " +
                         std::to_string(samples.size()));
    if (samples.empty()) return {};
    const std::size_t dim = samples.front().dim();
    for (const auto& s : samples)
        if (s.dim() != dim) throw DataError("herding: inconsistent feature dims");

    std::vector<double> target(dim, 0.0);
    for (const auto& s : samples)
        for (std::size_t d = 0; d < dim; ++d) target[d] += s[d];
    for (auto& v : target) v /= static_cast<double>(samples.size());

    std::vector<double> running(dim, 0.0);
    std::vector<bool> taken(samples.size(), false);
    std::vector<std::size_t> order;
    order.reserve(budget);
    for (std::size_t step = 0; step < budget; ++step) {
        const double denom = static_cast<double>(step + 1);
        std::size_t best = samples.size();
        double best_err = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < samples.size(); ++i) {
            if (taken[i]) continue;
            double err = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = target[d] - (running[d] + samples[i][d]) / denom;
                err += diff * diff;
            }
            if (err < best_err) {
                best_err = err;
                best = i;
            }
        }
        taken[best] = true;
        order.push_back(best);
        for (std::size_t d = 0; d < dim; ++d) running[d] += samples[best][d];
    }
    return order;
}

double squared_distance(std::span<const float> a, std::span<const float> b) noexcept {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc;
}

double distance(std::span<const float> a, std::span<const float> b) noexcept {
    return std::sqrt(squared_distance(a, b));
}

}  // namespace owl
