#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "melu/meta_trainer.hpp"
#include "melu/model.hpp"

namespace melu {

// Everything needed to resume training or serve predictions.
struct Checkpoint {
  ModelConfig model;
  ContentSchema schema;
  TrainState state;
  nlohmann::json provenance = nlohmann::json::object();
};

// Parameter arrays keyed by canonical names: "theta1/user/<field>",
// "theta1/item/<field>", "theta2/W1".."theta2/Wn", "theta2/b1".., "theta2/Wo",
// "theta2/bo".
nlohmann::json parameters_to_json(const ParameterSet& params, const ContentSchema& schema);
ParameterSet parameters_from_json(const nlohmann::json& j, const ContentSchema& schema,
                                  const ModelConfig& model);

nlohmann::json checkpoint_to_json(const Checkpoint& checkpoint);
// Throws SchemaError when the stored schema digest does not match the schema
// or an array is missing or misshapen.
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace melu
