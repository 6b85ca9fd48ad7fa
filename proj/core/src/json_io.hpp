// SPDX-License-Identifier: Apache-2.0
// JSON forms shared by the model store, the search manifest and the service.
#pragma once

#include <nlohmann/json.hpp>

#include "somnus/nn.hpp"
#include "somnus/train.hpp"

namespace somnus::detail {

nlohmann::json spec_to_json(const nn::ModelSpec& s);
nn::ModelSpec spec_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const train::TrainConfig& c);
train::TrainConfig config_from_json(const nlohmann::json& j);
nlohmann::json trial_config_to_json(const train::TrialConfig& t);

}  // namespace somnus::detail
