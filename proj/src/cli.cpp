#include "owl/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "owl/binary_io.hpp"
#include "owl/config.hpp"
#include "owl/protocol.hpp"

namespace owl::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

protocol::ProtocolConfig resolve_config(const ConfigOptions& options) {
    json doc = protocol::load_config_document(options.config, options.overrides);
    if (options.seed) doc["seed"] = *options.seed;
    auto config = protocol::parse_config(doc, options.config.parent_path());
    if (options.features) config.features_path = *options.features;
    if (config.features_path.empty()) throw UsageError("no features path: set features_path or pass --features");
    return config;
}

// Removes the listed files unless release() was called.
class OutputGuard {
public:
    void track(fs::path p) { paths_.push_back(std::move(p)); }
    void release() noexcept { paths_.clear(); }
    ~OutputGuard() {
        std::error_code ec;
        for (const auto& p : paths_) fs::remove(p, ec);
    }

private:
    std::vector<fs::path> paths_;
};

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::optional<double> parse_optional_double(const std::string& text, const fs::path& where) {
    if (text.empty()) return std::nullopt;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size())
        throw DataError(where.string() + ": bad number '" + text + "'");
    return v;
}

std::vector<double> read_scores(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<double> scores;
    std::string token;
    while (in >> token) {
        std::replace(token.begin(), token.end(), ',', ' ');
        std::istringstream parts(token);
        std::string piece;
        while (parts >> piece) {
            const auto v = parse_optional_double(piece, path);
            if (v) scores.push_back(*v);
        }
    }
    return scores;
}

OwlAgent::Learner load_learner(const fs::path& path) {
    const auto bytes = io::read_file(path);
    if (bytes.size() < 4) throw DataError(path.string() + ": not a model file");
    const std::string magic(bytes.data(), 4);
    if (magic == "OWLE") return evm::deserialize_model(path);
    if (magic == "OWLP") return mlp::deserialize_model(path);
    throw DataError(path.string() + ": unrecognised model magic");
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = "dm,ct,tailsize,avg_top1,best\n";
    for (const auto& r : rows)
        out += protocol::format_double(r.dm) + ',' + protocol::format_double(r.ct) + ',' + std::to_string(r.tailsize) +
               ',' + protocol::format_double(r.average_top1) + ',' + (r.best ? "1" : "0") + '\n';
    return out;
}

std::string render_report(const std::string& text, const fs::path& source) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "phase,n_known,n_unknown,cwca,uda,owca,detected,enrolled")
        throw DataError(source.string() + ": not a report CSV");

    const auto pct = [](const std::optional<double>& v) {
        char buf[32];
        if (!v) return std::string("    ---");
        std::snprintf(buf, sizeof buf, "%7.2f", 100.0 * *v);
        return std::string(buf);
    };
    std::ostringstream out;
    out << source.string() << '\n';
    out << "phase    known  unknown     CwCA      UDA     OwCA  detected  enrolled\n";
    double sums[3] = {0, 0, 0};
    std::size_t counts[3] = {0, 0, 0};
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 8) throw DataError(source.string() + ": row with " + std::to_string(f.size()) + " fields");
        char head[64];
        std::snprintf(head, sizeof head, "%5s  %7s  %7s", f[0].c_str(), f[1].c_str(), f[2].c_str());
        out << head;
        for (int i = 0; i < 3; ++i) {
            const auto v = parse_optional_double(f[3 + i], source);
            out << "  " << pct(v);
            if (v) {
                sums[i] += *v;
                ++counts[i];
            }
        }
        char tail[64];
        std::snprintf(tail, sizeof tail, "  %8s  %8s\n", f[6].c_str(), f[7].c_str());
        out << tail;
    }
    out << "  avg                 ";
    for (int i = 0; i < 3; ++i)
        out << "  " << pct(counts[i] ? std::optional<double>(sums[i] / static_cast<double>(counts[i])) : std::nullopt);
    out << '\n';
    return out.str();
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* flag) {
    std::vector<T> out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        T v{};
        const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (item.empty() || ec != std::errc() || ptr != item.data() + item.size())
            throw UsageError(std::string(flag) + ": bad list entry '" + item + "'");
        out.push_back(v);
    }
    return out;
}

}  // namespace

fs::path cmd_synth(const SynthOptions& options, std::ostream& log) {
    options.spec.validate();
    if (options.out_dir.empty()) throw UsageError("synth: --out is required");
    const auto dataset = generate_synthetic(options.spec);
    fs::create_directories(options.out_dir);
    const auto path = options.out_dir / "features.owlf";
    write_features(dataset, path);
    log << path.string() << '\n' << manifest_path(path).string() << '\n';
    return path;
}

std::string config_hash(const json& resolved) {
    const std::string text = resolved.dump();
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xF];
    }
    return out;
}

RunManifest cmd_run(const RunOptions& options, std::ostream& log) {
    if (options.out_dir.empty()) throw UsageError("run: --out is required");
    const auto started = utc_timestamp();
    const auto config = resolve_config(options.config);
    const json resolved = protocol::config_to_json(config);
    const auto dataset = read_features(config.features_path);

    fs::create_directories(options.out_dir);
    OutputGuard guard;
    const auto result = protocol::run_full(config, dataset);

    const auto csv_path = options.out_dir / "report.csv";
    guard.track(csv_path);
    io::write_text(csv_path, protocol::report_csv(result.reports));

    const auto name = protocol::learner_name(config.learner, config.mode);
    const auto table = protocol::render_table(result.reports, name);
    const auto table_path = options.out_dir / "report.txt";
    guard.track(table_path);
    io::write_text(table_path, table);

    fs::path model_path;
    if (const auto* m = std::get_if<evm::EvmModel>(&result.agent.learner())) {
        model_path = options.out_dir / "model.owle";
        guard.track(model_path);
        evm::serialize_model(*m, model_path);
    } else {
        model_path = options.out_dir / "model.owlp";
        guard.track(model_path);
        mlp::serialize_model(std::get<mlp::PerceptronModel>(result.agent.learner()), model_path);
    }

    const auto config_path = options.out_dir / "config.json";
    guard.track(config_path);
    io::write_text(config_path, resolved.dump(2) + '\n');

    RunManifest manifest{config_hash(resolved), std::string(kEngineVersion), started, options.out_dir};
    const json mj = {{"config_hash", manifest.config_hash},
                     {"engine_version", manifest.engine_version},
                     {"started_at", manifest.started_at},
                     {"output_dir", manifest.output_dir.string()}};
    const auto manifest_file = options.out_dir / "run_manifest.json";
    guard.track(manifest_file);
    io::write_text(manifest_file, mj.dump(2) + '\n');
    guard.release();

    log << table;
    log << csv_path.string() << '\n' << model_path.string() << '\n';
    return manifest;
}

Dataset holdout_split(const Dataset& dataset, double holdout_fraction, std::uint64_t seed) {
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw UsageError("holdout fraction must lie in (0, 1)");
    std::vector<LabeledSample> samples;
    for (const auto& [cls, members] : dataset.by_class(Split::train)) {
        if (members.size() < 2) throw DataError("class " + std::to_string(cls) + " has too few train samples to hold out");
        std::vector<const LabeledSample*> order(members);
        Rng rng(derive_seed(seed, cls));
        shuffle(order, rng);
        auto n_val = static_cast<std::size_t>(std::ceil(holdout_fraction * static_cast<double>(order.size())));
        n_val = std::clamp<std::size_t>(n_val, 1, order.size() - 1);
        for (std::size_t i = 0; i < order.size(); ++i) {
            LabeledSample s = *order[i];
            s.split = i + n_val >= order.size() ? Split::val : Split::train;
            samples.push_back(std::move(s));
        }
    }
    return Dataset(dataset.dim(), std::move(samples));
}

std::vector<SweepRow> cmd_sweep(const SweepOptions& options, std::ostream& log) {
    if (options.dm.empty() || options.ct.empty()) throw UsageError("sweep: the dm and ct grids must not be empty");
    auto base = resolve_config(options.config);
    base.mode = protocol::Mode::incremental;
    base.learner = LearnerKind::evm;
    base.target_uda.reset();
    base.delta = 0.0;
    const auto dataset = holdout_split(read_features(base.features_path), options.holdout_fraction,
                                       derive_seed(base.seed, protocol::kStreamHoldout));

    const std::vector<std::size_t> tails =
        options.tailsize.empty() ? std::vector<std::size_t>{base.learner_config.evm.tailsize} : options.tailsize;
    std::vector<SweepRow> rows;
    for (double dm : options.dm)
        for (double ct : options.ct)
            for (std::size_t t : tails) rows.push_back({dm, ct, t, 0.0, false});
    for (const auto& r : rows) {
        auto probe = base;
        probe.learner_config.evm.distance_multiplier = r.dm;
        probe.learner_config.evm.cover_threshold = r.ct;
        probe.learner_config.evm.tailsize = r.tailsize;
        probe.validate();
    }

    parallel_for(rows.size(), std::max<std::size_t>(1, options.threads), [&](std::size_t i) {
        auto cell = base;
        cell.learner_config.evm.distance_multiplier = rows[i].dm;
        cell.learner_config.evm.cover_threshold = rows[i].ct;
        cell.learner_config.evm.tailsize = rows[i].tailsize;
        rows[i].average_top1 = protocol::run_full(cell, dataset).summary.average_top1;
    });

    std::size_t best = 0;
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].average_top1 > rows[best].average_top1) best = i;
    rows[best].best = true;

    const auto csv = sweep_csv(rows);
    if (!options.out.empty()) {
        if (options.out.has_parent_path()) fs::create_directories(options.out.parent_path());
        io::write_text(options.out, csv);
    }
    log << csv;
    return rows;
}

double cmd_calibrate(const CalibrateOptions& options, std::ostream& log) {
    if (!(options.target_uda >= 0.0 && options.target_uda <= 1.0))
        throw UsageError("calibrate: --target-uda must lie in [0, 1]");
    std::vector<double> scores;
    if (options.scores) {
        if (options.model || options.features) throw UsageError("calibrate: --scores excludes --model/--features");
        scores = read_scores(*options.scores);
    } else {
        if (!options.model || !options.features)
            throw UsageError("calibrate: give --model and --features, or --scores");
        const OwlAgent agent(load_learner(*options.model), LearnerConfig{}, 0.0);
        const auto dataset = read_features(*options.features);
        if (dataset.dim() != agent.dim())
            throw DataError("calibrate: feature dim " + std::to_string(dataset.dim()) + " differs from model dim " +
                            std::to_string(agent.dim()));
        const auto known = agent.known_classes();
        for (const auto& s : dataset.samples())
            if (s.split == Split::val && !known.contains(s.class_id)) scores.push_back(agent.score(s.features.values()).score);
    }
    if (scores.empty()) throw DataError("calibrate: no unknown samples to calibrate on");

    const double delta = calibrate_threshold(scores, options.target_uda);
    const json fragment = {{"delta", delta}};
    if (!options.out.empty()) {
        if (options.out.has_parent_path()) fs::create_directories(options.out.parent_path());
        io::write_text(options.out, fragment.dump() + '\n');
    }
    log << protocol::format_double(delta) << '\n';
    return delta;
}

void cmd_report(const std::vector<fs::path>& inputs, std::ostream& out) {
    if (inputs.empty()) throw UsageError("report: no input CSV given");
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        std::ifstream in(inputs[i]);
        if (!in) throw DataError("cannot open " + inputs[i].string());
        std::stringstream buf;
        buf << in.rdbuf();
        if (i) out << '\n';
        out << render_report(buf.str(), inputs[i]);
    }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"owl: open-world learning engine", "owl"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kEngineVersion));

    std::optional<std::uint64_t> seed;
    std::string out_path;
    std::optional<std::string> features;
    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("--seed", seed, "Root RNG seed");
    app.add_option("--out", out_path, "Output directory or file");
    app.add_option("--features", features, "Feature file (.owlf)");
    app.add_option("--config", config_path, "Protocol config (JSON)");
    app.add_option("--override", overrides, "key=value config override (repeatable)")->take_all()->allow_extra_args(false);
    app.fallthrough();

    SynthSpec spec;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic feature file");
    synth->add_option("--classes", spec.num_classes)->capture_default_str();
    synth->add_option("--dim", spec.dim)->capture_default_str();
    synth->add_option("--train", spec.train_per_class)->capture_default_str();
    synth->add_option("--val", spec.val_per_class)->capture_default_str();
    synth->add_option("--radius", spec.mean_radius)->capture_default_str();
    synth->add_option("--stddev", spec.within_class_stddev)->capture_default_str();

    auto* run = app.add_subcommand("run", "Run the protocol described by --config");

    std::string dm_grid, ct_grid, tail_grid;
    double holdout = 0.2;
    auto* sweep = app.add_subcommand("sweep", "Grid-search EVM dm/ct on held-out train data");
    sweep->add_option("--dm", dm_grid, "Comma-separated dm values")->required();
    sweep->add_option("--ct", ct_grid, "Comma-separated ct values")->required();
    sweep->add_option("--tailsize", tail_grid, "Comma-separated tailsize values");
    sweep->add_option("--holdout", holdout, "Fraction of each class's train split held out")->capture_default_str();

    CalibrateOptions cal;
    std::string model_path, scores_path;
    auto* calibrate = app.add_subcommand("calibrate", "Calibrate delta for a target UDA");
    calibrate->add_option("--model", model_path, "Model file (.owle / .owlp)");
    calibrate->add_option("--scores", scores_path, "File of unknown-sample scores");
    calibrate->add_option("--target-uda", cal.target_uda)->required();

    std::vector<std::string> report_inputs;
    auto* report = app.add_subcommand("report", "Render report CSVs as tables");
    report->add_option("inputs", report_inputs, "Report CSV files")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? 0 : static_cast<int>(ErrorKind::usage);
    }

    const auto config_options = [&] {
        if (config_path.empty()) throw UsageError("--config is required");
        ConfigOptions c{config_path, overrides, std::nullopt, seed};
        if (features) c.features = fs::path(*features);
        return c;
    };

    try {
        if (*synth) {
            if (seed) spec.rng_seed = *seed;
            cmd_synth({spec, out_path}, out);
        } else if (*run) {
            cmd_run({config_options(), out_path}, out);
        } else if (*sweep) {
            SweepOptions s;
            s.config = config_options();
            s.dm = parse_list<double>(dm_grid, "--dm");
            s.ct = parse_list<double>(ct_grid, "--ct");
            if (!tail_grid.empty()) s.tailsize = parse_list<std::size_t>(tail_grid, "--tailsize");
            s.holdout_fraction = holdout;
            s.out = out_path.empty() ? fs::path() : fs::path(out_path);
            s.threads = thread_budget();
            cmd_sweep(s, out);
        } else if (*calibrate) {
            if (!model_path.empty()) cal.model = model_path;
            if (!scores_path.empty()) cal.scores = scores_path;
            if (features) cal.features = fs::path(*features);
            if (!out_path.empty()) cal.out = out_path;
            cmd_calibrate(cal, out);
        } else if (*report) {
            std::vector<fs::path> paths(report_inputs.begin(), report_inputs.end());
            cmd_report(paths, out);
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return static_cast<int>(e.kind());
    } catch (const json::exception& e) {
        err << "error: " << e.what() << '\n';
        return static_cast<int>(ErrorKind::data);
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return static_cast<int>(ErrorKind::data);
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return static_cast<int>(ErrorKind::numeric);
    }
    return 0;
}

}  // namespace owl::cli
