#include "owl/evm.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "owl/binary_io.hpp"

namespace owl::evm {

namespace {
constexpr char kMagic[4] = {'O', 'W', 'L', 'E'};
constexpr std::uint32_t kVersion = 1;

// Indices of kept positives, in pick order.
std::vector<std::size_t> greedy_cover(const std::vector<std::vector<std::size_t>>& covers, std::size_t n) {
    std::vector<bool> covered(n, false);
    std::vector<bool> kept(n, false);
    std::size_t remaining = n;
    std::vector<std::size_t> picks;
    while (remaining > 0) {
        std::size_t best = n;
        std::size_t best_gain = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (kept[i]) continue;
            std::size_t gain = 0;
            for (std::size_t k : covers[i]) gain += covered[k] ? 0 : 1;
            if (gain > best_gain) {
                best_gain = gain;
                best = i;
            }
        }
        // Each positive covers itself (psi(0) = 1 >= ct), so progress is guaranteed.
        if (best == n) throw std::logic_error("evm: set cover stalled");
        kept[best] = true;
        picks.push_back(best);
        for (std::size_t k : covers[best]) {
            if (!covered[k]) {
                covered[k] = true;
                --remaining;
            }
        }
    }
    return picks;
}
}  // namespace

void EvmHyperParams::validate() const {
    if (!(distance_multiplier > 0.0) || !std::isfinite(distance_multiplier))
        throw UsageError("evm: distance multiplier must be positive");
    if (!(cover_threshold > 0.0 && cover_threshold <= 1.0)) throw UsageError("evm: cover threshold must be in (0, 1]");
    if (tailsize < 2) throw UsageError("evm: tailsize must be >= 2");
}

EvmModel::EvmModel(std::size_t dim, EvmHyperParams params, std::map<ClassId, EvmClassModel> classes)
    : dim_(dim), params_(params), classes_(std::move(classes)) {
    if (dim_ == 0) throw DataError("evm: dim must be >= 1");
    params_.validate();
    for (const auto& [id, cls] : classes_) {
        if (id != cls.class_id) throw DataError("evm: class key/id mismatch");
        if (cls.extreme_vectors.empty())
            throw DataError("evm: class " + std::to_string(id) + " has no extreme vectors");
        for (const auto& ev : cls.extreme_vectors)
            if (ev.features.dim() != dim_) throw DataError("evm: extreme vector dim mismatch");
    }
}

std::vector<ClassId> EvmModel::class_ids() const {
    std::vector<ClassId> ids;
    ids.reserve(classes_.size());
    for (const auto& [id, _] : classes_) ids.push_back(id);
    return ids;
}

std::vector<ClassScore> EvmModel::predict(std::span<const float> query) const {
    if (query.size() != dim_)
        throw DataError("evm predict: query dim " + std::to_string(query.size()) + " != model dim " +
                        std::to_string(dim_));
    std::vector<ClassScore> scores;
    scores.reserve(classes_.size());
    for (const auto& [id, cls] : classes_) {
        double best = 0.0;
        for (const auto& ev : cls.extreme_vectors)
            best = std::max(best, weibull::psi(ev.weibull, distance(ev.features.values(), query)));
        scores.push_back({id, best});
    }
    return scores;
}

EvmClassModel fit_class(ClassId class_id, std::span<const TaggedVector> positives,
                        std::span<const std::span<const float>> negatives, const EvmHyperParams& params) {
    params.validate();
    if (positives.empty()) throw DataError("evm: class " + std::to_string(class_id) + " has no positives");
    const std::size_t dim = positives.front().features.dim();
    for (const auto& p : positives)
        if (p.features.dim() != dim) throw DataError("evm: inconsistent positive dims");
    for (const auto& n : negatives)
        if (n.size() != dim) throw DataError("evm: negative dim mismatch");
    const std::size_t tail = std::min(params.tailsize, negatives.size());
    if (tail < 2)
        throw DataError("evm: insufficient negatives for class " + std::to_string(class_id) + " (" +
                        std::to_string(negatives.size()) + " available, need >= 2)");

    const std::size_t n = positives.size();
    std::vector<WeibullParams> fits;
    fits.reserve(n);
    std::vector<double> margins(negatives.size());
    for (const auto& p : positives) {
        for (std::size_t j = 0; j < negatives.size(); ++j)
            margins[j] = params.distance_multiplier * distance(p.features.values(), negatives[j]);
        std::nth_element(margins.begin(), margins.begin() + static_cast<std::ptrdiff_t>(tail - 1), margins.end());
        std::vector<double> smallest(margins.begin(), margins.begin() + static_cast<std::ptrdiff_t>(tail));
        std::sort(smallest.begin(), smallest.end());
        try {
            fits.push_back(weibull::fit_mle(smallest));
        } catch (const Error& e) {
            throw_error(e.kind(), "evm: class " + std::to_string(class_id) + ", sample '" + p.sample_id +
                                      "': " + e.what());
        }
    }

    std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = i + 1; k < n; ++k)
            dist[i][k] = dist[k][i] = distance(positives[i].features.values(), positives[k].features.values());

    std::vector<std::vector<std::size_t>> covers(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k)
            if (weibull::psi(fits[i], dist[i][k]) >= params.cover_threshold) covers[i].push_back(k);

    const auto picks = greedy_cover(covers, n);

    std::vector<bool> covered(n, false);
    for (std::size_t i : picks)
        for (std::size_t k = 0; k < n; ++k)
            if (weibull::psi(fits[i], dist[i][k]) >= params.cover_threshold) covered[k] = true;
    if (std::find(covered.begin(), covered.end(), false) != covered.end())
        throw std::logic_error("evm: greedy cover left a positive uncovered");

    EvmClassModel model{class_id, {}};
    model.extreme_vectors.reserve(picks.size());
    for (std::size_t i : picks)
        model.extreme_vectors.push_back({positives[i].features, fits[i], positives[i].sample_id});
    return model;
}

namespace {
// Fits every class of `data`; negatives for class c are `extra` plus all other classes of `data`.
std::map<ClassId, EvmClassModel> fit_all(const std::map<ClassId, std::vector<TaggedVector>>& data,
                                         std::span<const std::span<const float>> extra, const EvmHyperParams& params) {
    std::vector<ClassId> ids;
    for (const auto& [id, _] : data) ids.push_back(id);

    std::vector<std::optional<EvmClassModel>> results(ids.size());
    parallel_for(ids.size(), thread_budget(), [&](std::size_t idx) {
        std::vector<std::span<const float>> negatives(extra.begin(), extra.end());
        for (const auto& [other, samples] : data) {
            if (other == ids[idx]) continue;
            for (const auto& s : samples) negatives.push_back(s.features.values());
        }
        results[idx] = fit_class(ids[idx], data.at(ids[idx]), negatives, params);
    });

    std::map<ClassId, EvmClassModel> out;
    for (std::size_t i = 0; i < ids.size(); ++i) out.emplace(ids[i], std::move(*results[i]));
    return out;
}
}  // namespace

EvmModel fit(const std::map<ClassId, std::vector<TaggedVector>>& data, std::size_t dim,
             const EvmHyperParams& params) {
    params.validate();
    if (data.empty()) throw DataError("evm: no classes to fit");
    for (const auto& [id, samples] : data)
        for (const auto& s : samples)
            if (s.features.dim() != dim) throw DataError("evm: sample dim mismatch in class " + std::to_string(id));
    return EvmModel(dim, params, fit_all(data, {}, params));
}

EvmModel append_classes(const EvmModel& model, const std::map<ClassId, std::vector<TaggedVector>>& new_class_data,
                        const EvmHyperParams& params) {
    params.validate();
    for (const auto& [id, samples] : new_class_data) {
        if (model.classes().contains(id)) throw DataError("evm: class id " + std::to_string(id) + " already known");
        for (const auto& s : samples)
            if (s.features.dim() != model.dim()) throw DataError("evm: sample dim mismatch in class " + std::to_string(id));
    }

    std::vector<std::span<const float>> exemplars;
    for (const auto& [id, cls] : model.classes()) {
        const auto take = std::min(params.exemplars_per_class, cls.extreme_vectors.size());
        for (std::size_t i = 0; i < take; ++i) exemplars.push_back(cls.extreme_vectors[i].features.values());
    }

    auto classes = model.classes();
    for (auto& [id, cls] : fit_all(new_class_data, exemplars, params)) classes.emplace(id, std::move(cls));
    return EvmModel(model.dim(), params, std::move(classes));
}

void serialize_model(const EvmModel& model, const std::filesystem::path& path) {
    io::ByteWriter out;
    out.raw(std::string_view(kMagic, 4));
    out.u32(kVersion);
    const auto& p = model.params();
    out.f64(p.distance_multiplier);
    out.f64(p.cover_threshold);
    out.u64(p.tailsize);
    out.u64(p.exemplars_per_class);
    out.u32(static_cast<std::uint32_t>(model.dim()));
    out.u32(static_cast<std::uint32_t>(model.num_classes()));
    for (const auto& [id, cls] : model.classes()) {
        out.u32(id);
        out.u32(static_cast<std::uint32_t>(cls.extreme_vectors.size()));
        for (const auto& ev : cls.extreme_vectors) {
            out.str(ev.source_sample_id);
            for (float v : ev.features.values()) out.f32(v);
            out.f64(ev.weibull.shape);
            out.f64(ev.weibull.scale);
        }
    }
    io::write_file(path, out.bytes());
}

EvmModel deserialize_model(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    const std::string what = "evm model " + path.string();
    io::ByteReader in(bytes, what);
    if (in.raw(4) != std::string_view(kMagic, 4)) throw DataError(what + ": bad magic");
    const auto version = in.u32();
    if (version != kVersion) throw DataError(what + ": unsupported version " + std::to_string(version));
    EvmHyperParams params;
    params.distance_multiplier = in.f64();
    params.cover_threshold = in.f64();
    params.tailsize = in.u64();
    params.exemplars_per_class = in.u64();
    const std::size_t dim = in.u32();
    const std::size_t num_classes = in.u32();
    if (dim == 0 || dim * 4 > in.remaining()) throw DataError(what + ": corrupt dimension field");
    std::map<ClassId, EvmClassModel> classes;
    for (std::size_t c = 0; c < num_classes; ++c) {
        EvmClassModel cls{in.u32(), {}};
        const std::size_t nev = in.u32();
        for (std::size_t e = 0; e < nev; ++e) {
            auto id = in.str();
            std::vector<float> values(dim);
            for (auto& v : values) v = in.f32();
            const double shape = in.f64();
            const double scale = in.f64();
            cls.extreme_vectors.push_back(
                {FeatureVector(std::move(values)), WeibullParams::checked(shape, scale), std::move(id)});
        }
        const auto key = cls.class_id;
        if (!classes.emplace(key, std::move(cls)).second) throw DataError(what + ": duplicate class id");
    }
    in.expect_end();
    return EvmModel(dim, params, std::move(classes));
}

}  // namespace owl::evm
