#pragma once

// JSON mapping of every configuration struct. Missing keys keep their
// defaults; unknown keys are config errors so typos do not pass silently.

#include <json.hpp>

#include "covdistill/data_forge.hpp"
#include "covdistill/surrogate.hpp"
#include "covdistill/trainer.hpp"

namespace covdistill {

void to_json(nlohmann::json& j, const SurrogateConfig& c);
void from_json(const nlohmann::json& j, SurrogateConfig& c);
void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);
void to_json(nlohmann::json& j, const TeacherTargets& c);
void from_json(const nlohmann::json& j, TeacherTargets& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Digest of the canonical (sorted-key) JSON dump.
std::uint64_t json_digest(const nlohmann::json& j);

template <typename T>
std::uint64_t config_digest(const T& c) {
  nlohmann::json j = c;
  return json_digest(j);
}

}  // namespace covdistill
