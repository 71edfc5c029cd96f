#pragma once

// JSON mapping of every configuration struct. Parsing is strict: unknown keys
// and wrongly typed values are config errors, missing keys keep defaults.

#include <string>
#include <vector>

#include "bbe/corpus.hpp"
#include "bbe/error.hpp"
#include "bbe/encoder.hpp"
#include "bbe/expansion.hpp"
#include "bbe/params.hpp"
#include "bbe/trainer.hpp"
#include "json.hpp"

namespace bbe {

void to_json(nlohmann::json& j, const ConvLayerSpec& c);
void from_json(const nlohmann::json& j, ConvLayerSpec& c);
void to_json(nlohmann::json& j, const FrontendConfig& c);
void from_json(const nlohmann::json& j, FrontendConfig& c);
void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const AdamWConfig& c);
void from_json(const nlohmann::json& j, AdamWConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const SplitOptions& c);
void from_json(const nlohmann::json& j, SplitOptions& c);
void to_json(nlohmann::json& j, const SynthSpec& c);
void from_json(const nlohmann::json& j, SynthSpec& c);
void to_json(nlohmann::json& j, const ExpansionSpec& c);
void from_json(const nlohmann::json& j, ExpansionSpec& c);

// Applies "a.b.c=value" overrides. The value is read as JSON when it parses,
// otherwise as a plain string. Paths must name existing keys.
void apply_overrides(nlohmann::json& j, const std::vector<std::string>& overrides);

// Converts with config-error reporting.
template <typename T>
T config_from_json(const nlohmann::json& j, const std::string& what) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, what + ": " + e.what());
  }
}

}  // namespace bbe
