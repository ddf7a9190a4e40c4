#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "melu/matrix.hpp"

namespace melu {

enum class Side { user, item };

// One categorical content field. Index 0 is reserved for unknown labels; the
// vocabulary maps every known label onto [1, cardinality).
struct FieldSpec {
  std::string name;
  std::size_t cardinality = 1;
  std::map<std::string, std::uint32_t> vocabulary;
  bool multi_valued = false;

  // Returns 0 for labels that are not in the vocabulary.
  std::uint32_t index_of(std::string_view label) const;

  // Appends a label if absent and returns its index.
  std::uint32_t add_label(const std::string& label);

  friend bool operator==(const FieldSpec&, const FieldSpec&) = default;
};

struct ContentSchema {
  std::vector<FieldSpec> user_fields;
  std::vector<FieldSpec> item_fields;
  std::size_t continuous_user_dims = 0;
  std::size_t continuous_item_dims = 0;

  const std::vector<FieldSpec>& fields(Side side) const {
    return side == Side::user ? user_fields : item_fields;
  }
  std::size_t continuous_dims(Side side) const {
    return side == Side::user ? continuous_user_dims : continuous_item_dims;
  }

  // Throws SchemaError when a side is empty, a cardinality is zero, names
  // repeat or a vocabulary is not a bijection onto [1, cardinality).
  void validate() const;

  // Stable 64-bit digest of field names, vocabularies and dimensions.
  std::uint64_t digest() const;

  friend bool operator==(const ContentSchema&, const ContentSchema&) = default;
};

// Content of one user or item. `categorical[f]` is the index set of field f:
// a singleton for single-valued fields, non-empty for multi-valued ones.
struct Profile {
  std::int64_t id = 0;
  Side side = Side::user;
  std::vector<std::vector<std::uint32_t>> categorical;
  std::vector<double> continuous;

  friend bool operator==(const Profile&, const Profile&) = default;
};

// Checks a profile against the schema, throwing SchemaError on violation.
void validate_profile(const Profile& profile, const ContentSchema& schema);

using ProfileRef = std::shared_ptr<const Profile>;

struct RatedItem {
  ProfileRef item;
  double rating = 0.0;
};

enum class OutputActivation { linear, sigmoid };

struct ModelConfig {
  std::size_t embedding_dim = 32;
  std::vector<std::size_t> layer_widths{64, 64};
  OutputActivation output_activation = OutputActivation::linear;
  double rating_min = 1.0;
  double rating_max = 5.0;

  // Throws ConfigError on zero dims or an inverted rating range.
  void validate() const;
  double clamp(double prediction) const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Arrays shared by parameters and gradients.
//
// theta1 holds one d_e x cardinality embedding matrix per content field.
// theta2 holds the decision layers followed by the output layer: weights[n]
// is (input width x output width) so a layer computes W^T x + b, and
// biases[n] is a 1 x width row. weights.back() / biases.back() are W_o / b_o.
struct ParameterArrays {
  std::vector<Matrix> user_embeddings;
  std::vector<Matrix> item_embeddings;
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;

  std::size_t decision_layers() const {
    return weights.empty() ? 0 : weights.size() - 1;
  }

  std::vector<Matrix*> theta1();
  std::vector<const Matrix*> theta1() const;
  std::vector<Matrix*> theta2();
  std::vector<const Matrix*> theta2() const;
  std::vector<Matrix*> all();
  std::vector<const Matrix*> all() const;

  bool congruent(const ParameterArrays& other) const;

  friend bool operator==(const ParameterArrays&, const ParameterArrays&) = default;
};

struct GradientSet : ParameterArrays {
  static GradientSet zeros_like(const ParameterArrays& shape);
  void add(const GradientSet& other);
  void scale(double factor);
};

struct ParameterSet : ParameterArrays {
  OutputActivation output_activation = OutputActivation::linear;

  std::size_t embedding_dim() const;
  // Width of x_0 implied by the first decision layer.
  std::size_t input_width() const;

  // Throws ConfigError if consecutive layer shapes do not chain or the
  // output width is not one.
  void validate_shapes() const;

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;
};

// Glorot-uniform weights, zero biases and U(-0.1, 0.1) embeddings.
ParameterSet init_parameters(const ContentSchema& schema, const ModelConfig& config,
                             std::mt19937_64& rng);

std::vector<double> embed_user(const Profile& profile, const ParameterSet& params);
std::vector<double> embed_item(const Profile& profile, const ParameterSet& params);

// Estimated preference for one user-item pair.
double forward(const Profile& user, const Profile& item, const ParameterSet& params);

// Hidden activations x_1..x_N for a pair; exposed for inspection and tests.
std::vector<std::vector<double>> hidden_activations(const Profile& user,
                                                    const Profile& item,
                                                    const ParameterSet& params);

// Mean squared error over an episode's (item, rating) pairs.
double episode_loss(std::span<const RatedItem> items, const Profile& user,
                    const ParameterSet& params);

enum class GradientScope { theta2_only, all };

struct LossAndGradient {
  double loss = 0.0;
  GradientSet gradient;
};

// Exact gradient of episode_loss. With theta2_only the embedding blocks are
// left at zero.
GradientSet backward(const Profile& user, std::span<const RatedItem> items,
                     const ParameterSet& params, GradientScope scope);

LossAndGradient loss_and_gradient(const Profile& user,
                                  std::span<const RatedItem> items,
                                  const ParameterSet& params, GradientScope scope);

// Adds the gradient of `weight * episode_loss` into `grad` (which must be
// congruent with `params`) and returns the unweighted episode loss.
double accumulate_loss_gradient(const Profile& user, std::span<const RatedItem> items,
                                const ParameterSet& params, GradientScope scope,
                                GradientSet& grad, double weight = 1.0);

// Returns params - step * grads without touching the inputs.
ParameterSet apply_step(const ParameterSet& params, const GradientSet& grads,
                        double step);

// Frobenius norm over the theta2 arrays of a gradient.
double theta2_frobenius_norm(const GradientSet& grads);

}  // namespace melu
