#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include <json.hpp>

#include "owl/protocol.hpp"

namespace owl::protocol {

/// Learner names: ffil / afil (incremental), ffowl / afowl (open world).
std::string learner_name(LearnerKind kind, Mode mode);

/// Keys: mode, learner, initial_classes, phases[].new_classes, preset
/// {initial, step, total, shuffle}, delta, target_uda, min_samples_per_class,
/// evm.{dm, ct, tailsize, exemplars}, mlp.{epochs, lr_phase0, lr_later, batch,
/// momentum}, seed, features_path. Relative features paths resolve against
/// base_dir. Unknown keys are rejected.
ProtocolConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});

/// Fully resolved document (defaults filled in); parse_config(config_to_json(c)) == c.
nlohmann::json config_to_json(const ProtocolConfig& config);

/// Applies "a.b=value". The value is parsed as JSON when possible, otherwise
/// taken as a string.
void apply_override(nlohmann::json& doc, std::string_view assignment);

nlohmann::json load_config_document(const std::filesystem::path& path, std::span<const std::string> overrides);

}  // namespace owl::protocol
