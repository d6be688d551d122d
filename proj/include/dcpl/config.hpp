#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcpl/harness.hpp"

// Experiment configuration as a JSON document with six sections:
// encoders, lsdm, learner, data, protocol, output (see README for the schema).
namespace dcpl::config {

using Json = nlohmann::json;

struct ExperimentConfig {
    std::uint64_t seed = 1;  // master seed: pretraining corpora, initialisation, datasets
    harness::WorldConfig world;
    prompt::LearnerConfig learner;
    harness::ProtocolConfig protocol;
    std::string output_dir = "out";
};

ExperimentConfig default_config();

// Canonical form: every field present, keys sorted.
Json to_json(const ExperimentConfig& config);
// Missing fields take their defaults; unknown keys and ill-typed values are
// config errors naming the offending path.
ExperimentConfig from_json(const Json& doc);

// "default" selects the built-in configuration; anything else is a path.
Json load_document(const std::string& name_or_path);
// Sets a dotted key, e.g. "protocol.epochs=3" or "data.shift_levels=[0,1]".
// The value is parsed as JSON when possible, else taken as a string.
void apply_override(Json& doc, const std::string& assignment);

// The canonical form minus invocation details that cannot change results
// (output directory, worker count); echoed into run records and hashed.
Json recorded_json(const ExperimentConfig& config);
// FNV-1a 64 of the recorded form's compact dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

}  // namespace dcpl::config
