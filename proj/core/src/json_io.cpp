#include "melu/json_io.hpp"

#include <fstream>

#include "melu/errors.hpp"

namespace melu {

using nlohmann::json;

void to_json(json& j, const Matrix& m) {
  j = json::array();
  for (std::size_t r = 0; r < m.rows; ++r) {
    const auto row = m.row(r);
    j.push_back(json(std::vector<double>(row.begin(), row.end())));
  }
}

void from_json(const json& j, Matrix& m) {
  if (!j.is_array() || j.empty()) throw ConfigError("matrix must be a non-empty list of rows");
  m = Matrix(j.size(), j.front().size());
  for (std::size_t r = 0; r < m.rows; ++r) {
    const auto& row = j[r];
    if (!row.is_array() || row.size() != m.cols) throw ConfigError("ragged matrix rows");
    for (std::size_t c = 0; c < m.cols; ++c) m(r, c) = row[c].get<double>();
  }
}

void to_json(json& j, const FieldSpec& f) {
  j = json{{"name", f.name},
           {"cardinality", f.cardinality},
           {"multi_valued", f.multi_valued},
           {"vocabulary", f.vocabulary}};
}

void from_json(const json& j, FieldSpec& f) {
  j.at("name").get_to(f.name);
  j.at("cardinality").get_to(f.cardinality);
  f.multi_valued = j.value("multi_valued", false);
  j.at("vocabulary").get_to(f.vocabulary);
}

void to_json(json& j, const ContentSchema& s) {
  j = json{{"user_fields", s.user_fields},
           {"item_fields", s.item_fields},
           {"continuous_user_dims", s.continuous_user_dims},
           {"continuous_item_dims", s.continuous_item_dims}};
}

void from_json(const json& j, ContentSchema& s) {
  j.at("user_fields").get_to(s.user_fields);
  j.at("item_fields").get_to(s.item_fields);
  s.continuous_user_dims = j.value("continuous_user_dims", std::size_t{0});
  s.continuous_item_dims = j.value("continuous_item_dims", std::size_t{0});
}

std::string side_name(Side side) { return side == Side::user ? "user" : "item"; }

Side parse_side(const std::string& text) {
  if (text == "user") return Side::user;
  if (text == "item") return Side::item;
  throw ConfigError("unknown side '" + text + "'");
}

void to_json(json& j, const Profile& p) {
  j = json{{"id", p.id},
           {"side", side_name(p.side)},
           {"categorical", p.categorical},
           {"continuous", p.continuous}};
}

void from_json(const json& j, Profile& p) {
  j.at("id").get_to(p.id);
  p.side = parse_side(j.at("side").get<std::string>());
  j.at("categorical").get_to(p.categorical);
  p.continuous = j.value("continuous", std::vector<double>{});
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"embedding_dim", c.embedding_dim},
           {"layer_widths", c.layer_widths},
           {"output_activation",
            c.output_activation == OutputActivation::linear ? "linear" : "sigmoid"},
           {"rating_range", {c.rating_min, c.rating_max}}};
}

void from_json(const json& j, ModelConfig& c) {
  c = ModelConfig{};
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.layer_widths = j.value("layer_widths", c.layer_widths);
  const auto act = j.value("output_activation", std::string("linear"));
  if (act == "linear") {
    c.output_activation = OutputActivation::linear;
  } else if (act == "sigmoid") {
    c.output_activation = OutputActivation::sigmoid;
  } else {
    throw ConfigError("unknown output activation '" + act + "'");
  }
  if (j.contains("rating_range")) {
    const auto& range = j.at("rating_range");
    c.rating_min = range.at(0).get<double>();
    c.rating_max = range.at(1).get<double>();
  }
  c.validate();
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"alpha", c.alpha},
           {"beta", c.beta},
           {"local_steps", c.local_steps},
           {"batch_size", c.batch_size},
           {"max_epochs", c.max_epochs},
           {"seed", c.seed},
           {"grad_mode", "first_order"},
           {"convergence_tolerance", c.convergence_tolerance},
           {"threads", c.threads}};
}

void from_json(const json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.local_steps = j.value("local_steps", c.local_steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.seed = j.value("seed", c.seed);
  const auto mode = j.value("grad_mode", std::string("first_order"));
  if (mode != "first_order") throw ConfigError("unsupported grad_mode '" + mode + "'");
  c.convergence_tolerance = j.value("convergence_tolerance", c.convergence_tolerance);
  c.threads = j.value("threads", c.threads);
  c.validate();
}

void to_json(json& j, const EpochRecord& r) {
  j = json{{"epoch", r.epoch},
           {"support_loss", r.support_loss},
           {"query_loss", r.query_loss},
           {"seconds", r.seconds}};
}

void from_json(const json& j, EpochRecord& r) {
  j.at("epoch").get_to(r.epoch);
  j.at("support_loss").get_to(r.support_loss);
  j.at("query_loss").get_to(r.query_loss);
  r.seconds = j.value("seconds", 0.0);
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j, int indent) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(indent) << '\n';
}

}  // namespace melu
