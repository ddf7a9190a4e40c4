#include "melu/checkpoint.hpp"

#include <string>

#include "melu/digest.hpp"
#include "melu/errors.hpp"
#include "melu/json_io.hpp"

namespace melu {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

std::string layer_suffix(std::size_t layer, std::size_t decision_layers) {
  return layer == decision_layers ? "o" : std::to_string(layer + 1);
}

Matrix take(const json& arrays, const std::string& key, std::size_t rows, std::size_t cols) {
  auto it = arrays.find(key);
  if (it == arrays.end()) throw SchemaError("checkpoint is missing array " + key);
  Matrix m = it->get<Matrix>();
  if (m.rows != rows || m.cols != cols) {
    throw SchemaError("array " + key + " has shape " + std::to_string(m.rows) + "x" +
                      std::to_string(m.cols) + ", expected " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  }
  return m;
}

}  // namespace

json parameters_to_json(const ParameterSet& params, const ContentSchema& schema) {
  if (params.user_embeddings.size() != schema.user_fields.size() ||
      params.item_embeddings.size() != schema.item_fields.size()) {
    throw SchemaError("parameters do not match the schema");
  }
  json arrays = json::object();
  for (std::size_t f = 0; f < schema.user_fields.size(); ++f) {
    arrays["theta1/user/" + schema.user_fields[f].name] = params.user_embeddings[f];
  }
  for (std::size_t f = 0; f < schema.item_fields.size(); ++f) {
    arrays["theta1/item/" + schema.item_fields[f].name] = params.item_embeddings[f];
  }
  const std::size_t n = params.decision_layers();
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    arrays["theta2/W" + layer_suffix(l, n)] = params.weights[l];
    arrays["theta2/b" + layer_suffix(l, n)] = params.biases[l];
  }
  return arrays;
}

ParameterSet parameters_from_json(const json& arrays, const ContentSchema& schema,
                                  const ModelConfig& model) {
  ParameterSet p;
  p.output_activation = model.output_activation;
  const std::size_t de = model.embedding_dim;
  for (const auto& f : schema.user_fields) {
    p.user_embeddings.push_back(take(arrays, "theta1/user/" + f.name, de, f.cardinality));
  }
  for (const auto& f : schema.item_fields) {
    p.item_embeddings.push_back(take(arrays, "theta1/item/" + f.name, de, f.cardinality));
  }
  std::size_t width = de * (schema.user_fields.size() + schema.item_fields.size()) +
                      schema.continuous_user_dims + schema.continuous_item_dims;
  const std::size_t n = model.layer_widths.size();
  for (std::size_t l = 0; l <= n; ++l) {
    const std::size_t out = l == n ? 1 : model.layer_widths[l];
    p.weights.push_back(take(arrays, "theta2/W" + layer_suffix(l, n), width, out));
    p.biases.push_back(take(arrays, "theta2/b" + layer_suffix(l, n), 1, out));
    width = out;
  }
  const std::size_t expected = schema.user_fields.size() + schema.item_fields.size() + 2 * (n + 1);
  if (arrays.size() != expected) throw SchemaError("checkpoint has unexpected arrays");
  p.validate_shapes();
  return p;
}

json checkpoint_to_json(const Checkpoint& c) {
  json j;
  j["format_version"] = kFormatVersion;
  j["model"] = c.model;
  j["schema"] = c.schema;
  j["schema_digest"] = to_hex(c.schema.digest());
  j["parameters"] = parameters_to_json(c.state.params, c.schema);
  j["epoch"] = c.state.epoch;
  j["rng_state"] = c.state.rng_state;
  j["loss_history"] = c.state.loss_history;
  j["skipped_episodes"] = c.state.skipped_episodes;
  j["warnings"] = c.state.warnings;
  j["provenance"] = c.provenance;
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.at("format_version").get<int>() != kFormatVersion) {
      throw SchemaError("unsupported checkpoint format version");
    }
    Checkpoint c;
    c.model = j.at("model").get<ModelConfig>();
    c.model.validate();
    c.schema = j.at("schema").get<ContentSchema>();
    c.schema.validate();
    if (j.at("schema_digest").get<std::string>() != to_hex(c.schema.digest())) {
      throw SchemaError("checkpoint schema digest mismatch");
    }
    c.state.params = parameters_from_json(j.at("parameters"), c.schema, c.model);
    c.state.epoch = j.value("epoch", std::size_t{0});
    c.state.rng_state = j.value("rng_state", std::string{});
    if (j.contains("loss_history")) {
      c.state.loss_history = j["loss_history"].get<std::vector<EpochRecord>>();
    }
    c.state.skipped_episodes = j.value("skipped_episodes", std::size_t{0});
    if (j.contains("warnings")) c.state.warnings = j["warnings"].get<std::vector<std::string>>();
    c.provenance = j.value("provenance", json::object());
    return c;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_json_file(path, checkpoint_to_json(checkpoint), -1);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(read_json_file(path));
}

}  // namespace melu
