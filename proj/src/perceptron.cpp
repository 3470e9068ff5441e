#include "owl/perceptron.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "owl/binary_io.hpp"

namespace owl::mlp {

namespace {
constexpr char kMagic[4] = {'O', 'W', 'L', 'P'};
constexpr std::uint32_t kVersion = 1;

void fill_glorot(std::span<double> weights, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& w : weights) w = (2.0 * rng.uniform() - 1.0) * limit;
}

// Activations of one sample; `probs` holds the softmax output.
struct Pass {
    std::vector<double> pre;  // hidden pre-activations
    std::vector<double> hidden;
    std::vector<double> probs;
};

void run_forward(const PerceptronModel& m, std::span<const float> x, Pass& pass) {
    const std::size_t h = m.hidden_dim();
    const std::size_t in = m.input_dim();
    pass.pre.assign(h, 0.0);
    pass.hidden.assign(h, 0.0);
    for (std::size_t j = 0; j < h; ++j) {
        const double* w = m.w1.data.data() + j * in;
        double acc = m.b1[j];
        for (std::size_t i = 0; i < in; ++i) acc += w[i] * static_cast<double>(x[i]);
        pass.pre[j] = acc;
        pass.hidden[j] = acc > 0.0 ? acc : 0.0;
    }
    const std::size_t c = m.num_classes();
    pass.probs.assign(c, 0.0);
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < c; ++k) {
        const double* w = m.w2.data.data() + k * h;
        double acc = m.b2[k];
        for (std::size_t j = 0; j < h; ++j) acc += w[j] * pass.hidden[j];
        pass.probs[k] = acc;
        max_logit = std::max(max_logit, acc);
    }
    double total = 0.0;
    for (auto& p : pass.probs) {
        p = std::exp(p - max_logit);
        total += p;
    }
    for (auto& p : pass.probs) p /= total;
}

Gradients zero_gradients(const PerceptronModel& m) {
    return {Matrix(m.w1.rows, m.w1.cols), std::vector<double>(m.b1.size(), 0.0), Matrix(m.w2.rows, m.w2.cols),
            std::vector<double>(m.b2.size(), 0.0)};
}

void check_input(const PerceptronModel& m, std::span<const float> x) {
    if (x.size() != m.input_dim())
        throw DataError("perceptron: input dim " + std::to_string(x.size()) + " != model input dim " +
                        std::to_string(m.input_dim()));
    for (float v : x)
        if (!std::isfinite(v)) throw DataError("perceptron: non-finite input");
}

// Accumulates the unscaled (sum) gradient of one sample; returns its loss.
double accumulate(const PerceptronModel& m, const LabeledVector& s, std::size_t target, Pass& pass,
                  std::vector<double>& dhidden, Gradients& g) {
    const auto x = s.features.values();
    run_forward(m, x, pass);
    const double loss = -std::log(std::max(pass.probs[target], std::numeric_limits<double>::min()));
    const std::size_t h = m.hidden_dim();
    const std::size_t in = m.input_dim();
    dhidden.assign(h, 0.0);
    for (std::size_t k = 0; k < m.num_classes(); ++k) {
        const double dlogit = pass.probs[k] - (k == target ? 1.0 : 0.0);
        g.b2[k] += dlogit;
        double* gw = g.w2.data.data() + k * h;
        const double* w = m.w2.data.data() + k * h;
        for (std::size_t j = 0; j < h; ++j) {
            gw[j] += dlogit * pass.hidden[j];
            dhidden[j] += dlogit * w[j];
        }
    }
    for (std::size_t j = 0; j < h; ++j) {
        if (pass.pre[j] <= 0.0) continue;
        const double d = dhidden[j];
        g.b1[j] += d;
        double* gw = g.w1.data.data() + j * in;
        for (std::size_t i = 0; i < in; ++i) gw[i] += d * static_cast<double>(x[i]);
    }
    return loss;
}
}  // namespace

void TrainConfig::validate() const {
    if (!(lr_phase0 > 0.0) || !(lr_later > 0.0)) throw UsageError("perceptron: learning rates must be positive");
    if (batch_size == 0) throw UsageError("perceptron: batch size must be positive");
    if (!(momentum >= 0.0) || !std::isfinite(momentum)) throw UsageError("perceptron: momentum must be >= 0");
}

std::size_t PerceptronModel::row_of(ClassId id) const {
    const auto it = std::find(class_ids.begin(), class_ids.end(), id);
    if (it == class_ids.end()) throw DataError("perceptron: class " + std::to_string(id) + " has no output row");
    return static_cast<std::size_t>(it - class_ids.begin());
}

void PerceptronModel::validate() const {
    if (w1.cols < 2 || w1.rows != w1.cols / 2) throw DataError("perceptron: hidden size must be floor(input / 2)");
    if (b1.size() != w1.rows || w2.cols != w1.rows || w2.rows != class_ids.size() || b2.size() != class_ids.size() ||
        frozen.size() != class_ids.size())
        throw DataError("perceptron: inconsistent layer shapes");
    std::vector<ClassId> sorted = class_ids;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw DataError("perceptron: duplicate class id");
    const auto finite = [](std::span<const double> v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    if (!finite(w1.data) || !finite(b1) || !finite(w2.data) || !finite(b2))
        throw NumericError("perceptron: non-finite weight");
    for (const auto& [id, vectors] : exemplars) {
        row_of(id);
        for (const auto& v : vectors)
            if (v.dim() != input_dim()) throw DataError("perceptron: exemplar dim mismatch");
    }
}

PerceptronModel init_model(std::size_t input_dim, std::span<const ClassId> class_ids, std::uint64_t rng_seed) {
    if (input_dim < 2) throw UsageError("perceptron: input dim must be >= 2");
    if (class_ids.empty()) throw UsageError("perceptron: need at least one class");
    const std::size_t hidden = input_dim / 2;
    PerceptronModel m;
    m.w1 = Matrix(hidden, input_dim);
    m.b1.assign(hidden, 0.0);
    m.w2 = Matrix(class_ids.size(), hidden);
    m.b2.assign(class_ids.size(), 0.0);
    m.class_ids.assign(class_ids.begin(), class_ids.end());
    m.frozen.assign(class_ids.size(), false);
    Rng rng(rng_seed);
    fill_glorot(m.w1.data, input_dim, hidden, rng);
    fill_glorot(m.w2.data, hidden, class_ids.size(), rng);
    m.validate();
    return m;
}

std::vector<double> forward(const PerceptronModel& model, std::span<const float> features) {
    check_input(model, features);
    Pass pass;
    run_forward(model, features, pass);
    return std::move(pass.probs);
}

double loss_and_gradient(const PerceptronModel& model, std::span<const LabeledVector> batch, Gradients* grad) {
    if (batch.empty()) throw UsageError("perceptron: empty batch");
    Gradients local = zero_gradients(model);
    Pass pass;
    std::vector<double> dhidden;
    double loss = 0.0;
    for (const auto& s : batch) {
        check_input(model, s.features.values());
        loss += accumulate(model, s, model.row_of(s.class_id), pass, dhidden, local);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    if (grad) {
        for (auto& v : local.w1.data) v *= inv;
        for (auto& v : local.b1) v *= inv;
        for (auto& v : local.w2.data) v *= inv;
        for (auto& v : local.b2) v *= inv;
        *grad = std::move(local);
    }
    return loss * inv;
}

PerceptronModel train(PerceptronModel model, std::span<const LabeledVector> samples, const TrainConfig& config,
                      std::size_t phase_index) {
    config.validate();
    model.validate();

    std::vector<const LabeledVector*> data;
    std::vector<LabeledVector> rehearsal;
    for (const auto& [id, vectors] : model.exemplars)
        for (const auto& v : vectors) rehearsal.push_back({v, id});
    data.reserve(samples.size() + rehearsal.size());
    for (const auto& s : samples) data.push_back(&s);
    for (const auto& s : rehearsal) data.push_back(&s);
    if (data.empty()) throw UsageError("perceptron: empty training set");

    std::vector<std::size_t> targets(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        check_input(model, data[i]->features.values());
        targets[i] = model.row_of(data[i]->class_id);
    }
    if (config.epochs == 0) return model;

    const double lr = phase_index == 0 ? config.lr_phase0 : config.lr_later;
    Rng rng(derive_seed(config.rng_seed, phase_index));
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    Gradients velocity = zero_gradients(model);
    Gradients g = zero_gradients(model);
    Pass pass;
    std::vector<double> dhidden;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle(order, rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::fill(g.w1.data.begin(), g.w1.data.end(), 0.0);
            std::fill(g.b1.begin(), g.b1.end(), 0.0);
            std::fill(g.w2.data.begin(), g.w2.data.end(), 0.0);
            std::fill(g.b2.begin(), g.b2.end(), 0.0);
            double loss = 0.0;
            for (std::size_t i = start; i < end; ++i)
                loss += accumulate(model, *data[order[i]], targets[order[i]], pass, dhidden, g);
            const double scale = 1.0 / static_cast<double>(end - start);
            if (!std::isfinite(loss)) {
                std::ostringstream msg;
                msg << "perceptron: non-finite loss at phase " << phase_index << ", epoch " << epoch << ", batch "
                    << start / config.batch_size << " (lr " << lr << ", batch size " << end - start << ")";
                throw NumericError(msg.str());
            }

            const auto step = [&](std::span<double> params, std::span<double> vel, std::span<const double> grad) {
                for (std::size_t i = 0; i < params.size(); ++i) {
                    vel[i] = config.momentum * vel[i] - lr * grad[i] * scale;
                    params[i] += vel[i];
                }
            };
            step(model.w1.data, velocity.w1.data, g.w1.data);
            step(model.b1, velocity.b1, g.b1);
            for (std::size_t k = 0; k < model.num_classes(); ++k) {
                if (model.frozen[k]) continue;
                step(model.w2.row(k), velocity.w2.row(k), g.w2.row(k));
                step(std::span<double>(&model.b2[k], 1), std::span<double>(&velocity.b2[k], 1),
                     std::span<const double>(&g.b2[k], 1));
            }
        }
    }
    model.validate();
    return model;
}

PerceptronModel expand_classes(PerceptronModel model, std::span<const ClassId> new_class_ids,
                               std::map<ClassId, std::vector<FeatureVector>> exemplars, std::uint64_t rng_seed) {
    model.validate();
    for (const auto& [id, vectors] : exemplars) {
        if (std::find(model.class_ids.begin(), model.class_ids.end(), id) == model.class_ids.end())
            throw DataError("perceptron: exemplars given for class " + std::to_string(id) + " which is not known");
        if (vectors.size() > kExemplarsPerClass)
            throw UsageError("perceptron: more than " + std::to_string(kExemplarsPerClass) + " exemplars for class " +
                             std::to_string(id));
        for (const auto& v : vectors)
            if (v.dim() != model.input_dim()) throw DataError("perceptron: exemplar dim mismatch");
    }
    std::vector<ClassId> seen = model.class_ids;
    for (ClassId id : new_class_ids) {
        if (std::find(seen.begin(), seen.end(), id) != seen.end())
            throw DataError("perceptron: class id " + std::to_string(id) + " already has an output row");
        seen.push_back(id);
    }

    std::fill(model.frozen.begin(), model.frozen.end(), true);
    const std::size_t h = model.hidden_dim();
    const std::size_t old_rows = model.num_classes();
    const std::size_t total = old_rows + new_class_ids.size();
    model.w2.data.resize(total * h, 0.0);
    model.w2.rows = total;
    Rng rng(rng_seed);
    fill_glorot(std::span<double>(model.w2.data).subspan(old_rows * h), h, total, rng);
    model.b2.resize(total, 0.0);
    model.class_ids.insert(model.class_ids.end(), new_class_ids.begin(), new_class_ids.end());
    model.frozen.resize(total, false);
    for (auto& [id, vectors] : exemplars) model.exemplars[id] = std::move(vectors);
    model.validate();
    return model;
}

void serialize_model(const PerceptronModel& model, const std::filesystem::path& path) {
    io::ByteWriter out;
    out.raw(std::string_view(kMagic, 4));
    out.u32(kVersion);
    out.u32(static_cast<std::uint32_t>(model.input_dim()));
    out.u32(static_cast<std::uint32_t>(model.hidden_dim()));
    out.u32(static_cast<std::uint32_t>(model.num_classes()));
    for (std::size_t r = 0; r < model.num_classes(); ++r) {
        out.u32(model.class_ids[r]);
        out.u32(model.frozen[r] ? 1 : 0);
    }
    for (double v : model.w1.data) out.f64(v);
    for (double v : model.b1) out.f64(v);
    for (double v : model.w2.data) out.f64(v);
    for (double v : model.b2) out.f64(v);
    out.u32(static_cast<std::uint32_t>(model.exemplars.size()));
    for (const auto& [id, vectors] : model.exemplars) {
        out.u32(id);
        out.u32(static_cast<std::uint32_t>(vectors.size()));
        for (const auto& v : vectors)
            for (float x : v.values()) out.f32(x);
    }
    io::write_file(path, out.bytes());
}

PerceptronModel deserialize_model(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    const std::string what = "perceptron model " + path.string();
    io::ByteReader in(bytes, what);
    if (in.raw(4) != std::string_view(kMagic, 4)) throw DataError(what + ": bad magic");
    const auto version = in.u32();
    if (version != kVersion) throw DataError(what + ": unsupported version " + std::to_string(version));
    const std::size_t input = in.u32();
    const std::size_t hidden = in.u32();
    const std::size_t classes = in.u32();
    if (input < 2 || hidden != input / 2) throw DataError(what + ": corrupt layer sizes");
    const std::size_t weights = hidden * input + hidden + classes * hidden + classes;
    if (classes * 8 + weights * 8 > in.remaining()) throw DataError(what + ": truncated or corrupt file");

    PerceptronModel m;
    for (std::size_t r = 0; r < classes; ++r) {
        m.class_ids.push_back(in.u32());
        const auto flag = in.u32();
        if (flag > 1) throw DataError(what + ": corrupt frozen flag");
        m.frozen.push_back(flag == 1);
    }
    m.w1 = Matrix(hidden, input);
    for (auto& v : m.w1.data) v = in.f64();
    m.b1.resize(hidden);
    for (auto& v : m.b1) v = in.f64();
    m.w2 = Matrix(classes, hidden);
    for (auto& v : m.w2.data) v = in.f64();
    m.b2.resize(classes);
    for (auto& v : m.b2) v = in.f64();
    const std::size_t groups = in.u32();
    for (std::size_t g = 0; g < groups; ++g) {
        const ClassId id = in.u32();
        const std::size_t count = in.u32();
        if (count > kExemplarsPerClass) throw DataError(what + ": corrupt exemplar count");
        auto& vectors = m.exemplars[id];
        for (std::size_t e = 0; e < count; ++e) {
            std::vector<float> values(input);
            for (auto& x : values) x = in.f32();
            vectors.emplace_back(std::move(values));
        }
    }
    in.expect_end();
    m.validate();
    return m;
}

}  // namespace owl::mlp
