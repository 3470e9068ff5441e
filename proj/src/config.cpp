#include "owl/config.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <type_traits>

namespace owl::protocol {

using nlohmann::json;

namespace {
const std::set<std::string> kTopKeys = {"mode",      "learner",    "initial_classes", "phases",
                                        "preset",    "delta",      "target_uda",      "min_samples_per_class",
                                        "evm",       "mlp",        "seed",            "features_path"};
const std::set<std::string> kEvmKeys = {"dm", "ct", "tailsize", "exemplars"};
const std::set<std::string> kMlpKeys = {"epochs", "lr_phase0", "lr_later", "batch", "momentum"};
const std::set<std::string> kPresetKeys = {"initial", "step", "total", "shuffle"};

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw UsageError("config: '" + where + "' must be an object");
    for (const auto& [key, _] : obj.items())
        if (!allowed.contains(key)) throw UsageError("config: unknown key '" + where + key + "'");
}

template <typename T>
T get(const json& obj, const char* key, T fallback, const std::string& where = "") {
    if (!obj.contains(key)) return fallback;
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        const auto& v = obj.at(key);
        if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
            throw UsageError("config: '" + where + key + "' must be a non-negative integer");
    }
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw UsageError("config: bad value for '" + where + key + "': " + e.what());
    }
}

std::vector<ClassId> class_list(const json& v, const std::string& where) {
    if (!v.is_array()) throw UsageError("config: '" + where + "' must be a list of class ids");
    std::vector<ClassId> out;
    for (const auto& item : v) {
        if (!item.is_number_integer() || item.get<std::int64_t>() < 0 ||
            item.get<std::uint64_t>() > std::numeric_limits<ClassId>::max())
            throw UsageError("config: '" + where + "' must hold non-negative integers");
        out.push_back(item.get<ClassId>());
    }
    return out;
}
}  // namespace

std::string learner_name(LearnerKind kind, Mode mode) {
    if (kind == LearnerKind::evm) return mode == Mode::incremental ? "ffil" : "ffowl";
    return mode == Mode::incremental ? "afil" : "afowl";
}

ProtocolConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
    reject_unknown_keys(doc, kTopKeys, "");
    ProtocolConfig c;

    const auto learner = get<std::string>(doc, "learner", "ffil");
    Mode implied_mode;
    if (learner == "ffil" || learner == "ffowl")
        c.learner = LearnerKind::evm;
    else if (learner == "afil" || learner == "afowl")
        c.learner = LearnerKind::perceptron;
    else
        throw UsageError("config: learner must be one of ffil, afil, ffowl, afowl");
    implied_mode = (learner == "ffil" || learner == "afil") ? Mode::incremental : Mode::openworld;

    c.mode = implied_mode;
    if (doc.contains("mode")) {
        const auto mode = get<std::string>(doc, "mode", "");
        if (mode == "incremental")
            c.mode = Mode::incremental;
        else if (mode == "openworld")
            c.mode = Mode::openworld;
        else
            throw UsageError("config: mode must be 'incremental' or 'openworld'");
        if (c.mode != implied_mode)
            throw UsageError("config: learner '" + learner + "' conflicts with mode '" + mode + "'");
    }

    if (doc.contains("initial_classes")) c.initial_classes = class_list(doc["initial_classes"], "initial_classes");
    if (doc.contains("phases")) {
        if (!doc["phases"].is_array()) throw UsageError("config: 'phases' must be a list");
        for (const auto& phase : doc["phases"]) {
            reject_unknown_keys(phase, {"new_classes"}, "phases[].");
            if (!phase.contains("new_classes")) throw UsageError("config: phase without 'new_classes'");
            c.phases.push_back(class_list(phase["new_classes"], "phases[].new_classes"));
        }
    }
    if (doc.contains("preset")) {
        const auto& p = doc["preset"];
        reject_unknown_keys(p, kPresetKeys, "preset.");
        SchedulePreset preset;
        preset.initial = get<std::size_t>(p, "initial", preset.initial, "preset.");
        preset.step = get<std::size_t>(p, "step", preset.step, "preset.");
        preset.total = get<std::size_t>(p, "total", preset.total, "preset.");
        preset.shuffle = get<bool>(p, "shuffle", preset.shuffle, "preset.");
        c.preset = preset;
    }
    if (!c.initial_classes.empty() && c.preset) throw UsageError("config: give either initial_classes or preset");
    if (c.initial_classes.empty() && !c.phases.empty()) throw UsageError("config: phases given without initial_classes");

    c.delta = get<double>(doc, "delta", c.delta);
    if (doc.contains("target_uda") && !doc["target_uda"].is_null()) c.target_uda = get<double>(doc, "target_uda", 0.0);
    c.min_samples_per_class = get<std::size_t>(doc, "min_samples_per_class", c.min_samples_per_class);
    c.seed = get<std::uint64_t>(doc, "seed", c.seed);

    auto& evm = c.learner_config.evm;
    if (doc.contains("evm")) {
        const auto& e = doc["evm"];
        reject_unknown_keys(e, kEvmKeys, "evm.");
        evm.distance_multiplier = get<double>(e, "dm", evm.distance_multiplier, "evm.");
        evm.cover_threshold = get<double>(e, "ct", evm.cover_threshold, "evm.");
        evm.tailsize = get<std::size_t>(e, "tailsize", evm.tailsize, "evm.");
        evm.exemplars_per_class = get<std::size_t>(e, "exemplars", evm.exemplars_per_class, "evm.");
    }
    auto& mlp = c.learner_config.mlp;
    if (doc.contains("mlp")) {
        const auto& m = doc["mlp"];
        reject_unknown_keys(m, kMlpKeys, "mlp.");
        mlp.epochs = get<std::size_t>(m, "epochs", mlp.epochs, "mlp.");
        mlp.lr_phase0 = get<double>(m, "lr_phase0", mlp.lr_phase0, "mlp.");
        mlp.lr_later = get<double>(m, "lr_later", mlp.lr_later, "mlp.");
        mlp.batch_size = get<std::size_t>(m, "batch", mlp.batch_size, "mlp.");
        mlp.momentum = get<double>(m, "momentum", mlp.momentum, "mlp.");
    }

    if (doc.contains("features_path")) {
        std::filesystem::path p = get<std::string>(doc, "features_path", "");
        c.features_path = (p.is_relative() && !base_dir.empty()) ? base_dir / p : p;
    }
    c.validate();
    return c;
}

json config_to_json(const ProtocolConfig& c) {
    json doc;
    doc["mode"] = c.mode == Mode::incremental ? "incremental" : "openworld";
    doc["learner"] = learner_name(c.learner, c.mode);
    if (c.preset) {
        doc["preset"] = {{"initial", c.preset->initial},
                         {"step", c.preset->step},
                         {"total", c.preset->total},
                         {"shuffle", c.preset->shuffle}};
    } else {
        doc["initial_classes"] = c.initial_classes;
        doc["phases"] = json::array();
        for (const auto& phase : c.phases) doc["phases"].push_back({{"new_classes", phase}});
    }
    doc["delta"] = c.delta;
    doc["target_uda"] = c.target_uda ? json(*c.target_uda) : json(nullptr);
    doc["min_samples_per_class"] = c.min_samples_per_class;
    const auto& e = c.learner_config.evm;
    doc["evm"] = {{"dm", e.distance_multiplier},
                  {"ct", e.cover_threshold},
                  {"tailsize", e.tailsize},
                  {"exemplars", e.exemplars_per_class}};
    const auto& m = c.learner_config.mlp;
    doc["mlp"] = {{"epochs", m.epochs},
                  {"lr_phase0", m.lr_phase0},
                  {"lr_later", m.lr_later},
                  {"batch", m.batch_size},
                  {"momentum", m.momentum}};
    doc["seed"] = c.seed;
    doc["features_path"] = c.features_path.string();
    return doc;
}

void apply_override(json& doc, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0)
        throw UsageError("override '" + std::string(assignment) + "' is not of the form key=value");
    const std::string key(assignment.substr(0, eq));
    const std::string text(assignment.substr(eq + 1));
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw UsageError("override key '" + key + "' is malformed");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        if (!node->contains(part)) (*node)[part] = json::object();
        node = &(*node)[part];
        if (!node->is_object()) throw UsageError("override key '" + key + "' descends into a non-object");
        start = dot + 1;
    }
}

json load_config_document(const std::filesystem::path& path, std::span<const std::string> overrides) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config " + path.string());
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw UsageError("config " + path.string() + " is not valid JSON");
    for (const auto& o : overrides) apply_override(doc, o);
    return doc;
}

}  // namespace owl::protocol
