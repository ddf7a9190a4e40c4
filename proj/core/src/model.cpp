#include "melu/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "melu/digest.hpp"
#include "melu/errors.hpp"

namespace melu {

std::uint32_t FieldSpec::index_of(std::string_view label) const {
  auto it = vocabulary.find(std::string(label));
  return it == vocabulary.end() ? 0U : it->second;
}

std::uint32_t FieldSpec::add_label(const std::string& label) {
  auto [it, inserted] =
      vocabulary.emplace(label, static_cast<std::uint32_t>(cardinality));
  if (inserted) ++cardinality;
  return it->second;
}

void ContentSchema::validate() const {
  if (user_fields.empty()) throw SchemaError("schema needs at least one user field");
  if (item_fields.empty()) throw SchemaError("schema needs at least one item field");
  for (const auto* side : {&user_fields, &item_fields}) {
    std::set<std::string> names;
    for (const auto& field : *side) {
      if (field.cardinality < 1) {
        throw SchemaError("field '" + field.name + "' has zero cardinality");
      }
      if (!names.insert(field.name).second) {
        throw SchemaError("duplicate field name '" + field.name + "'");
      }
      if (field.vocabulary.size() != field.cardinality - 1) {
        throw SchemaError("vocabulary of '" + field.name +
                          "' does not cover [1, cardinality)");
      }
      std::vector<bool> seen(field.cardinality, false);
      for (const auto& [label, index] : field.vocabulary) {
        if (index == 0 || index >= field.cardinality || seen[index]) {
          throw SchemaError("vocabulary of '" + field.name + "' is not a bijection");
        }
        seen[index] = true;
      }
    }
  }
}

std::uint64_t ContentSchema::digest() const {
  Digest d;
  for (const auto* side : {&user_fields, &item_fields}) {
    d.update(static_cast<std::uint64_t>(side->size()));
    for (const auto& field : *side) {
      d.update(field.name);
      d.update(static_cast<std::uint64_t>(field.cardinality));
      d.update(static_cast<std::uint64_t>(field.multi_valued));
      for (const auto& [label, index] : field.vocabulary) {
        d.update(label);
        d.update(static_cast<std::uint64_t>(index));
      }
    }
  }
  d.update(static_cast<std::uint64_t>(continuous_user_dims));
  d.update(static_cast<std::uint64_t>(continuous_item_dims));
  return d.value();
}

void validate_profile(const Profile& profile, const ContentSchema& schema) {
  const auto& fields = schema.fields(profile.side);
  if (profile.categorical.size() != fields.size()) {
    throw SchemaError("profile " + std::to_string(profile.id) + " has " +
                      std::to_string(profile.categorical.size()) +
                      " categorical fields, schema expects " +
                      std::to_string(fields.size()));
  }
  for (std::size_t f = 0; f < fields.size(); ++f) {
    const auto& indices = profile.categorical[f];
    if (indices.empty()) {
      throw SchemaError("field '" + fields[f].name + "' has no index");
    }
    if (!fields[f].multi_valued && indices.size() != 1) {
      throw SchemaError("single-valued field '" + fields[f].name +
                        "' carries several indices");
    }
    for (auto index : indices) {
      if (index >= fields[f].cardinality) {
        throw SchemaError("index " + std::to_string(index) + " out of range for '" +
                          fields[f].name + "'");
      }
    }
  }
  if (profile.continuous.size() != schema.continuous_dims(profile.side)) {
    throw SchemaError("profile " + std::to_string(profile.id) +
                      " has the wrong number of continuous values");
  }
}

void ModelConfig::validate() const {
  if (embedding_dim == 0) throw ConfigError("embedding_dim must be positive");
  if (layer_widths.empty()) throw ConfigError("at least one decision layer is required");
  for (auto w : layer_widths) {
    if (w == 0) throw ConfigError("decision layer widths must be positive");
  }
  if (!(rating_min < rating_max)) throw ConfigError("rating range is empty");
}

double ModelConfig::clamp(double prediction) const {
  return std::clamp(prediction, rating_min, rating_max);
}

// ---------------------------------------------------------------------------
// Parameter containers

namespace {

template <typename Ptr, typename Vec>
void collect(std::vector<Ptr>& out, Vec& v) {
  for (auto& m : v) out.push_back(&m);
}

}  // namespace

std::vector<Matrix*> ParameterArrays::theta1() {
  std::vector<Matrix*> out;
  collect(out, user_embeddings);
  collect(out, item_embeddings);
  return out;
}

std::vector<const Matrix*> ParameterArrays::theta1() const {
  std::vector<const Matrix*> out;
  collect(out, user_embeddings);
  collect(out, item_embeddings);
  return out;
}

std::vector<Matrix*> ParameterArrays::theta2() {
  std::vector<Matrix*> out;
  for (std::size_t n = 0; n < std::max(weights.size(), biases.size()); ++n) {
    if (n < weights.size()) out.push_back(&weights[n]);
    if (n < biases.size()) out.push_back(&biases[n]);
  }
  return out;
}

std::vector<const Matrix*> ParameterArrays::theta2() const {
  std::vector<const Matrix*> out;
  for (std::size_t n = 0; n < std::max(weights.size(), biases.size()); ++n) {
    if (n < weights.size()) out.push_back(&weights[n]);
    if (n < biases.size()) out.push_back(&biases[n]);
  }
  return out;
}

std::vector<Matrix*> ParameterArrays::all() {
  auto out = theta1();
  auto t2 = theta2();
  out.insert(out.end(), t2.begin(), t2.end());
  return out;
}

std::vector<const Matrix*> ParameterArrays::all() const {
  auto out = theta1();
  auto t2 = theta2();
  out.insert(out.end(), t2.begin(), t2.end());
  return out;
}

bool ParameterArrays::congruent(const ParameterArrays& other) const {
  auto mine = all();
  auto theirs = other.all();
  if (mine.size() != theirs.size() ||
      user_embeddings.size() != other.user_embeddings.size() ||
      weights.size() != other.weights.size() || biases.size() != other.biases.size()) {
    return false;
  }
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (!mine[i]->same_shape(*theirs[i])) return false;
  }
  return true;
}

GradientSet GradientSet::zeros_like(const ParameterArrays& shape) {
  GradientSet g;
  auto zeros = [](const std::vector<Matrix>& src) {
    std::vector<Matrix> out;
    out.reserve(src.size());
    for (const auto& m : src) out.emplace_back(m.rows, m.cols, 0.0);
    return out;
  };
  g.user_embeddings = zeros(shape.user_embeddings);
  g.item_embeddings = zeros(shape.item_embeddings);
  g.weights = zeros(shape.weights);
  g.biases = zeros(shape.biases);
  return g;
}

void GradientSet::add(const GradientSet& other) {
  if (!congruent(other)) throw ConfigError("gradient shapes differ");
  auto dst = all();
  auto src = other.all();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto& d = dst[i]->data;
    const auto& s = src[i]->data;
    for (std::size_t k = 0; k < d.size(); ++k) d[k] += s[k];
  }
}

void GradientSet::scale(double factor) {
  for (auto* m : all()) {
    for (auto& v : m->data) v *= factor;
  }
}

std::size_t ParameterSet::embedding_dim() const {
  if (!user_embeddings.empty()) return user_embeddings.front().rows;
  if (!item_embeddings.empty()) return item_embeddings.front().rows;
  return 0;
}

std::size_t ParameterSet::input_width() const {
  return weights.empty() ? 0 : weights.front().rows;
}

void ParameterSet::validate_shapes() const {
  if (weights.size() < 2 || weights.size() != biases.size()) {
    throw ConfigError("parameter set needs decision layers plus an output layer");
  }
  const std::size_t de = embedding_dim();
  for (const auto* m : theta1()) {
    if (m->rows != de || m->cols == 0) {
      throw ConfigError("embedding matrices must be d_e x cardinality");
    }
  }
  for (std::size_t n = 0; n < weights.size(); ++n) {
    if (biases[n].rows != 1 || biases[n].cols != weights[n].cols) {
      throw ConfigError("bias " + std::to_string(n + 1) + " does not match its layer");
    }
    if (n > 0 && weights[n].rows != weights[n - 1].cols) {
      throw ConfigError("layer " + std::to_string(n + 1) +
                        " input width does not chain with the previous layer");
    }
  }
  if (weights.back().cols != 1) throw ConfigError("output layer width must be 1");
  const std::size_t embedded = de * (user_embeddings.size() + item_embeddings.size());
  if (weights.front().rows < embedded) {
    throw ConfigError("first layer is narrower than the embedded input");
  }
}

ParameterSet init_parameters(const ContentSchema& schema, const ModelConfig& config,
                             std::mt19937_64& rng) {
  schema.validate();
  config.validate();
  ParameterSet p;
  p.output_activation = config.output_activation;
  const std::size_t de = config.embedding_dim;

  std::uniform_real_distribution<double> embed_dist(-0.1, 0.1);
  auto make_embeddings = [&](const std::vector<FieldSpec>& fields) {
    std::vector<Matrix> out;
    for (const auto& field : fields) {
      Matrix m(de, field.cardinality);
      for (auto& v : m.data) v = embed_dist(rng);
      out.push_back(std::move(m));
    }
    return out;
  };
  p.user_embeddings = make_embeddings(schema.user_fields);
  p.item_embeddings = make_embeddings(schema.item_fields);

  std::size_t fan_in = de * (schema.user_fields.size() + schema.item_fields.size()) +
                       schema.continuous_user_dims + schema.continuous_item_dims;
  auto widths = config.layer_widths;
  widths.push_back(1);
  for (auto fan_out : widths) {
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-s, s);
    Matrix w(fan_in, fan_out);
    for (auto& v : w.data) v = dist(rng);
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(1, fan_out, 0.0);
    fan_in = fan_out;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

void append_embedding(std::vector<double>& out, const Profile& profile,
                      const std::vector<Matrix>& embeddings) {
  if (profile.categorical.size() != embeddings.size()) {
    throw SchemaError("profile " + std::to_string(profile.id) + " has " +
                      std::to_string(profile.categorical.size()) +
                      " categorical fields, parameters expect " +
                      std::to_string(embeddings.size()));
  }
  for (std::size_t f = 0; f < embeddings.size(); ++f) {
    const Matrix& e = embeddings[f];
    const auto& indices = profile.categorical[f];
    if (indices.empty()) {
      throw SchemaError("profile " + std::to_string(profile.id) + " field " +
                        std::to_string(f) + " has no index");
    }
    for (auto index : indices) {
      if (index >= e.cols) {
        throw SchemaError("index " + std::to_string(index) + " out of range for field " +
                          std::to_string(f) + " (cardinality " +
                          std::to_string(e.cols) + ")");
      }
    }
    const double inv = 1.0 / static_cast<double>(indices.size());
    for (std::size_t r = 0; r < e.rows; ++r) {
      double sum = 0.0;
      for (auto index : indices) sum += e(r, index);
      out.push_back(indices.size() == 1 ? sum : sum * inv);
    }
  }
  out.insert(out.end(), profile.continuous.begin(), profile.continuous.end());
}

std::vector<double> embed(const Profile& profile, const std::vector<Matrix>& embeddings) {
  std::vector<double> out;
  out.reserve(embeddings.size() * (embeddings.empty() ? 0 : embeddings[0].rows) +
              profile.continuous.size());
  append_embedding(out, profile, embeddings);
  return out;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Activations of one pass: layers[0] = x_0, layers[n] = x_n.
struct ForwardTrace {
  std::vector<std::vector<double>> layers;
  double prediction = 0.0;
};

void dense(std::span<const double> x, const Matrix& w, const Matrix& b,
           std::vector<double>& out) {
  out.assign(b.data.begin(), b.data.end());
  for (std::size_t i = 0; i < w.rows; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const auto row = w.row(i);
    for (std::size_t j = 0; j < w.cols; ++j) out[j] += xi * row[j];
  }
}

void run_layers(ForwardTrace& trace, const ParameterSet& params) {
  const std::size_t n_layers = params.weights.size();
  if (trace.layers[0].size() != params.weights.front().rows) {
    throw ConfigError("input width " + std::to_string(trace.layers[0].size()) +
                      " does not match first layer (" +
                      std::to_string(params.weights.front().rows) + ")");
  }
  trace.layers.resize(n_layers);
  for (std::size_t n = 0; n + 1 < n_layers; ++n) {
    if (params.weights[n + 1].rows != params.weights[n].cols ||
        params.biases[n].data.size() != params.weights[n].cols) {
      throw ConfigError("layer " + std::to_string(n + 2) +
                        " does not chain with the previous layer");
    }
    dense(trace.layers[n], params.weights[n], params.biases[n], trace.layers[n + 1]);
    for (auto& v : trace.layers[n + 1]) v = v > 0.0 ? v : 0.0;
  }
  if (params.weights.back().cols != 1 || params.biases.back().data.size() != 1) {
    throw ConfigError("output layer width must be 1");
  }
  std::vector<double> out;
  dense(trace.layers[n_layers - 1], params.weights.back(), params.biases.back(), out);
  trace.prediction =
      params.output_activation == OutputActivation::sigmoid ? sigmoid(out[0]) : out[0];
}

void check_layers(const ParameterSet& params) {
  if (params.weights.size() < 2 || params.biases.size() != params.weights.size()) {
    throw ConfigError("parameter set needs decision layers plus an output layer");
  }
}

ForwardTrace trace_pair(std::span<const double> user_embedding, const Profile& item,
                        const ParameterSet& params) {
  ForwardTrace trace;
  trace.layers.resize(1);
  auto& x0 = trace.layers[0];
  x0.reserve(params.input_width());
  x0.assign(user_embedding.begin(), user_embedding.end());
  append_embedding(x0, item, params.item_embeddings);
  run_layers(trace, params);
  return trace;
}

void check_side(const Profile& profile, Side expected) {
  if (profile.side != expected) {
    throw SchemaError(expected == Side::user ? "expected a user profile"
                                             : "expected an item profile");
  }
}

}  // namespace

std::vector<double> embed_user(const Profile& profile, const ParameterSet& params) {
  check_side(profile, Side::user);
  return embed(profile, params.user_embeddings);
}

std::vector<double> embed_item(const Profile& profile, const ParameterSet& params) {
  check_side(profile, Side::item);
  return embed(profile, params.item_embeddings);
}

double forward(const Profile& user, const Profile& item, const ParameterSet& params) {
  check_layers(params);
  const auto u = embed_user(user, params);
  check_side(item, Side::item);
  return trace_pair(u, item, params).prediction;
}

std::vector<std::vector<double>> hidden_activations(const Profile& user,
                                                    const Profile& item,
                                                    const ParameterSet& params) {
  check_layers(params);
  const auto u = embed_user(user, params);
  check_side(item, Side::item);
  auto trace = trace_pair(u, item, params);
  return {trace.layers.begin() + 1, trace.layers.end()};
}

double episode_loss(std::span<const RatedItem> items, const Profile& user,
                    const ParameterSet& params) {
  if (items.empty()) throw ArgumentError("episode is empty");
  check_layers(params);
  const auto u = embed_user(user, params);
  double sum = 0.0;
  for (const auto& rated : items) {
    check_side(*rated.item, Side::item);
    const double err = rated.rating - trace_pair(u, *rated.item, params).prediction;
    sum += err * err;
  }
  return sum / static_cast<double>(items.size());
}

// ---------------------------------------------------------------------------
// Backward pass

namespace {

void scatter_embedding_grad(std::span<const double> grad_x0, std::size_t offset,
                            const Profile& profile, std::vector<Matrix>& grads) {
  for (std::size_t f = 0; f < grads.size(); ++f) {
    Matrix& g = grads[f];
    const auto& indices = profile.categorical[f];
    const double share = 1.0 / static_cast<double>(indices.size());
    for (std::size_t r = 0; r < g.rows; ++r) {
      const double v = grad_x0[offset + f * g.rows + r] * share;
      for (auto index : indices) g(r, index) += v;
    }
  }
}

}  // namespace

double accumulate_loss_gradient(const Profile& user, std::span<const RatedItem> items,
                                const ParameterSet& params, GradientScope scope,
                                GradientSet& grad, double weight) {
  if (items.empty()) throw ArgumentError("episode is empty");
  check_layers(params);
  if (!grad.congruent(params)) throw ConfigError("gradient shape does not match parameters");

  const auto u = embed_user(user, params);
  const std::size_t n_layers = params.weights.size();
  const double inv_n = 1.0 / static_cast<double>(items.size());
  const double out_scale = weight * inv_n;
  const bool need_input_grad = scope == GradientScope::all;

  std::vector<double> delta;
  std::vector<double> upstream;
  double loss_sum = 0.0;

  for (const auto& rated : items) {
    check_side(*rated.item, Side::item);
    const ForwardTrace trace = trace_pair(u, *rated.item, params);
    const double err = trace.prediction - rated.rating;
    loss_sum += err * err;

    double d_out = 2.0 * err * out_scale;
    if (params.output_activation == OutputActivation::sigmoid) {
      d_out *= trace.prediction * (1.0 - trace.prediction);
    }

    // Output layer.
    delta.assign(1, d_out);
    for (std::size_t layer = n_layers; layer-- > 0;) {
      const Matrix& w = params.weights[layer];
      Matrix& gw = grad.weights[layer];
      Matrix& gb = grad.biases[layer];
      const auto& x_in = trace.layers[layer];
      for (std::size_t j = 0; j < w.cols; ++j) gb.data[j] += delta[j];
      for (std::size_t i = 0; i < w.rows; ++i) {
        const double xi = x_in[i];
        if (xi == 0.0) continue;
        auto grow = gw.row(i);
        for (std::size_t j = 0; j < w.cols; ++j) grow[j] += xi * delta[j];
      }
      if (layer == 0 && !need_input_grad) break;

      upstream.assign(w.rows, 0.0);
      for (std::size_t i = 0; i < w.rows; ++i) {
        const auto wrow = w.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < w.cols; ++j) s += wrow[j] * delta[j];
        upstream[i] = s;
      }
      if (layer > 0) {
        // ReLU derivative of x_layer.
        for (std::size_t i = 0; i < upstream.size(); ++i) {
          if (!(x_in[i] > 0.0)) upstream[i] = 0.0;
        }
      }
      delta.swap(upstream);
    }

    if (need_input_grad) {
      // delta now holds dL/dx_0.
      const std::size_t user_width = u.size();
      scatter_embedding_grad(delta, 0, user, grad.user_embeddings);
      scatter_embedding_grad(delta, user_width, *rated.item, grad.item_embeddings);
    }
  }
  return loss_sum / static_cast<double>(items.size());
}

LossAndGradient loss_and_gradient(const Profile& user,
                                  std::span<const RatedItem> items,
                                  const ParameterSet& params, GradientScope scope) {
  if (items.empty()) throw ArgumentError("episode is empty");
  check_layers(params);
  LossAndGradient result;
  result.gradient = GradientSet::zeros_like(params);
  result.loss = accumulate_loss_gradient(user, items, params, scope, result.gradient);
  return result;
}

GradientSet backward(const Profile& user, std::span<const RatedItem> items,
                     const ParameterSet& params, GradientScope scope) {
  return loss_and_gradient(user, items, params, scope).gradient;
}

ParameterSet apply_step(const ParameterSet& params, const GradientSet& grads,
                        double step) {
  if (!params.congruent(grads)) {
    throw ConfigError("gradient shape does not match parameters");
  }
  ParameterSet out = params;
  auto dst = out.all();
  auto src = grads.all();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto& d = dst[i]->data;
    const auto& g = src[i]->data;
    for (std::size_t k = 0; k < d.size(); ++k) d[k] -= step * g[k];
  }
  return out;
}

double theta2_frobenius_norm(const GradientSet& grads) {
  double sum = 0.0;
  for (const auto* m : grads.theta2()) {
    for (double v : m->data) sum += v * v;
  }
  return std::sqrt(sum);
}

}  // namespace melu
