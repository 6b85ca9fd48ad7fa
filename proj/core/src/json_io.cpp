// SPDX-License-Identifier: Apache-2.0
#include "json_io.hpp"

#include "somnus/error.hpp"

namespace somnus::detail {

using nlohmann::json;

json spec_to_json(const nn::ModelSpec& s) {
  return json{{"family", nn::family_name(s.family)},
              {"representation", nn::representation_name(s.representation)},
              {"input", {s.input.channels, s.input.height, s.input.width}},
              {"lookback", s.lookback},
              {"dense_units", s.dense_units},
              {"filters", s.filters},
              {"kernel", s.kernel},
              {"lstm_layers", s.lstm_layers},
              {"lstm_hidden", s.lstm_hidden},
              {"dropout_keep", s.dropout_keep},
              {"seed", s.seed}};
}

nn::ModelSpec spec_from_json(const json& j) {
  try {
    nn::ModelSpec s;
    s.family = nn::parse_family(j.at("family").get<std::string>());
    s.representation = nn::parse_representation(j.at("representation").get<std::string>());
    const auto in = j.at("input").get<std::vector<std::size_t>>();
    if (in.size() != 3) throw DataError("model spec: input shape must have three dimensions");
    s.input = {in[0], in[1], in[2]};
    s.lookback = j.at("lookback").get<std::size_t>();
    s.dense_units = j.at("dense_units").get<std::vector<std::size_t>>();
    s.filters = j.at("filters").get<std::vector<std::size_t>>();
    s.kernel = j.at("kernel").get<std::size_t>();
    s.lstm_layers = j.at("lstm_layers").get<std::size_t>();
    s.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
    s.dropout_keep = j.at("dropout_keep").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("model spec: ") + e.what());
  }
}

json config_to_json(const train::TrainConfig& c) {
  return json{{"learning_rate", c.learning_rate}, {"momentum", c.momentum},   {"batch_size", c.batch_size},
              {"max_epochs", c.max_epochs},       {"patience", c.patience},   {"clip_norm", c.clip_norm},
              {"class_weighting", c.class_weighting}, {"seed", c.seed}};
}

train::TrainConfig config_from_json(const json& j) {
  try {
    train::TrainConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.momentum = j.at("momentum").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.max_epochs = j.at("max_epochs").get<std::size_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.clip_norm = j.at("clip_norm").get<double>();
    c.class_weighting = j.at("class_weighting").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("training config: ") + e.what());
  }
}

json trial_config_to_json(const train::TrialConfig& t) {
  return json{{"learning_rate", t.learning_rate}, {"lookback", t.lookback},         {"dropout_rate", t.dropout_rate},
              {"hidden_units", t.hidden_units},   {"n_layers", t.n_layers},         {"filter_size", t.filter_size},
              {"seed", t.seed}};
}

}  // namespace somnus::detail
