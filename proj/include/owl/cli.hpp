#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "owl/feature_store.hpp"

namespace owl::cli {

inline constexpr std::string_view kEngineVersion = "0.1.0";

struct SynthOptions {
    SynthSpec spec;
    std::filesystem::path out_dir;
};

/// Writes <out>/features.owlf and <out>/manifest.csv; returns the feature path.
std::filesystem::path cmd_synth(const SynthOptions& options, std::ostream& log);

/// Shared by run and sweep: config file plus the global overrides.
struct ConfigOptions {
    std::filesystem::path config;
    std::vector<std::string> overrides;
    std::optional<std::filesystem::path> features;
    std::optional<std::uint64_t> seed;
};

struct RunOptions {
    ConfigOptions config;
    std::filesystem::path out_dir;
};

struct RunManifest {
    std::string config_hash;
    std::string engine_version;
    std::string started_at;
    std::filesystem::path output_dir;
};

/// Runs the protocol. Writes report.csv, report.txt, model.owle|owlp,
/// config.json (resolved) and run_manifest.json into out_dir. On failure the
/// files written so far are removed.
RunManifest cmd_run(const RunOptions& options, std::ostream& log);

struct SweepOptions {
    ConfigOptions config;
    std::vector<double> dm;
    std::vector<double> ct;
    std::vector<std::size_t> tailsize;  // empty = keep the config value
    double holdout_fraction = 0.2;
    std::filesystem::path out;  // sweep CSV path
    std::size_t threads = 1;
};

struct SweepRow {
    double dm;
    double ct;
    std::size_t tailsize;
    double average_top1;
    bool best;
};

/// Grid search over (dm, ct[, tailsize]) with the incremental EVM pipeline on
/// a held-out part of the train split. Rows follow grid order (dm outer);
/// the best row is the first with the highest average incremental Top-1.
std::vector<SweepRow> cmd_sweep(const SweepOptions& options, std::ostream& log);

/// Train split re-partitioned per class: a seeded holdout_fraction of each
/// class's train samples becomes the val split; the original val split is dropped.
Dataset holdout_split(const Dataset& dataset, double holdout_fraction, std::uint64_t seed);

struct CalibrateOptions {
    std::optional<std::filesystem::path> model;
    std::optional<std::filesystem::path> features;
    std::optional<std::filesystem::path> scores;  // newline/comma separated unknown scores
    double target_uda = 0.5;
    std::filesystem::path out = "calibration.json";
};

/// Calibrates delta on the unknown-class val scores (classes the model does
/// not know) or on a score list. Prints delta and writes {"delta": ...}.
double cmd_calibrate(const CalibrateOptions& options, std::ostream& log);

/// Renders report CSVs as text tables.
void cmd_report(const std::vector<std::filesystem::path>& inputs, std::ostream& out);

std::string config_hash(const nlohmann::json& resolved);

/// Parses argv and dispatches. Exit codes: 0 ok, 1 usage, 2 data/format, 3 numeric.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace owl::cli
