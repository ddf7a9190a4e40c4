#include "doctest.h"

#include <cmath>

#include "instances.hpp"
#include "melu/errors.hpp"
#include "melu/model.hpp"
#include "oracles.hpp"

using namespace melu;
using melu::testing::naive_forward;
using melu::testing::naive_loss;
using melu::testing::random_instance;

namespace {

FieldSpec field(const std::string& name, std::size_t labels, bool multi = false) {
  FieldSpec f;
  f.name = name;
  f.multi_valued = multi;
  for (std::size_t i = 1; i < labels; ++i) f.add_label("l" + std::to_string(i));
  return f;
}

// One user field and one item field, both with two columns.
struct Tiny {
  ContentSchema schema;
  ParameterSet params;
  Profile user;
  Profile item;
};

Tiny tiny(std::size_t de, std::vector<std::size_t> widths) {
  Tiny t;
  t.schema.user_fields = {field("u", 2)};
  t.schema.item_fields = {field("i", 2, true)};
  ModelConfig config;
  config.embedding_dim = de;
  config.layer_widths = widths;
  std::mt19937_64 rng(3);
  t.params = init_parameters(t.schema, config, rng);
  t.user = Profile{1, Side::user, {{1}}, {}};
  t.item = Profile{2, Side::item, {{0}}, {}};
  return t;
}

void zero(ParameterSet& p) {
  for (auto* m : p.all()) std::fill(m->data.begin(), m->data.end(), 0.0);
}

}  // namespace

TEST_CASE("embedding selects one column") {
  auto t = tiny(2, {3});
  // columns col0 = [1,3], col1 = [2,4]
  t.params.user_embeddings[0].data = {1, 2, 3, 4};
  const auto u = embed_user(t.user, t.params);
  CHECK(u == std::vector<double>{2, 4});
}

TEST_CASE("multi-valued field embeds as the mean of its columns") {
  auto t = tiny(2, {3});
  t.params.item_embeddings[0].data = {1, 2, 3, 4};
  Profile item{5, Side::item, {{0, 1}}, {}};
  CHECK(embed_item(item, t.params) == std::vector<double>{1.5, 3.5});
}

TEST_CASE("zero column embeds to zeros") {
  auto t = tiny(2, {3});
  t.params.item_embeddings[0].data = {0, 7, 0, 8};
  CHECK(embed_item(t.item, t.params) == std::vector<double>{0, 0});
}

TEST_CASE("embedding length follows d_e times fields plus continuous dims") {
  ContentSchema s;
  s.user_fields = {field("a", 3), field("b", 4)};
  s.item_fields = {field("year", 2), field("rate", 2), field("genre", 3, true),
                   field("director", 2), field("actor", 2, true)};
  ModelConfig c;
  std::mt19937_64 rng(1);
  const auto p = init_parameters(s, c, rng);
  Profile u{1, Side::user, {{1}, {2}}, {}};
  Profile i{2, Side::item, {{1}, {0}, {1, 2}, {1}, {0}}, {}};
  CHECK(embed_user(u, p).size() == 64);
  CHECK(embed_item(i, p).size() == 160);
  CHECK(p.input_width() == 224);
}

TEST_CASE("continuous values pass through after the embedding") {
  ContentSchema s;
  s.user_fields = {field("a", 2)};
  s.item_fields = {field("b", 2)};
  s.continuous_item_dims = 1;
  ModelConfig c;
  c.embedding_dim = 4;
  c.layer_widths = {2};
  std::mt19937_64 rng(1);
  const auto p = init_parameters(s, c, rng);
  Profile i{2, Side::item, {{1}}, {0.5}};
  const auto e = embed_item(i, p);
  REQUIRE(e.size() == 5);
  CHECK(e.back() == 0.5);
}

TEST_CASE("out-of-range index is a schema error") {
  auto t = tiny(2, {3});
  Profile bad{1, Side::user, {{2}}, {}};
  CHECK_THROWS_AS(embed_user(bad, t.params), SchemaError);
  CHECK_THROWS_AS(validate_profile(bad, t.schema), SchemaError);
  Profile two{1, Side::user, {{0, 1}}, {}};
  CHECK_THROWS_AS(validate_profile(two, t.schema), SchemaError);
}

TEST_CASE("zero network predicts zero and bias passes through") {
  auto t = tiny(2, {3, 3});
  zero(t.params);
  CHECK(forward(t.user, t.item, t.params) == 0.0);
  t.params.biases.back().data[0] = 3.7;
  CHECK(forward(t.user, t.item, t.params) == 3.7);
}

TEST_CASE("forward matches the straight-line oracle") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto inst = random_instance(seed);
    for (const auto& e : inst.episodes) {
      for (const auto& r : e.support) {
        const double y = forward(e.user, *r.item, inst.params);
        CHECK(y == doctest::Approx(naive_forward(e.user, *r.item, inst.params)).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("forward on a two-layer 3-wide net with d_e 2 matches the oracle to 1e-10") {
  auto t = tiny(2, {3, 3});
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto* m : t.params.all()) {
    for (auto& v : m->data) v = u(rng);
  }
  CHECK(std::abs(forward(t.user, t.item, t.params) - naive_forward(t.user, t.item, t.params)) <
        1e-10);
}

TEST_CASE("forward is deterministic and hidden activations are non-negative") {
  auto inst = random_instance(5);
  const auto& e = inst.episodes[0];
  const auto& item = *e.support[0].item;
  CHECK(forward(e.user, item, inst.params) == forward(e.user, item, inst.params));
  for (const auto& layer : hidden_activations(e.user, item, inst.params)) {
    for (double v : layer) CHECK(v >= 0.0);
  }
}

TEST_CASE("mismatched layer shapes are a configuration error") {
  auto t = tiny(2, {3, 3});
  t.params.weights[1] = Matrix(2, 3);
  CHECK_THROWS_AS(t.params.validate_shapes(), ConfigError);
  CHECK_THROWS_AS(forward(t.user, t.item, t.params), ConfigError);
}

TEST_CASE("episode loss") {
  auto t = tiny(2, {3});
  zero(t.params);
  auto item = std::make_shared<const Profile>(t.item);

  SUBCASE("perfect fit is zero") {
    t.params.biases.back().data[0] = 2.0;
    std::vector<RatedItem> items{{item, 2.0}, {item, 2.0}};
    CHECK(episode_loss(items, t.user, t.params) == 0.0);
  }
  SUBCASE("y = [1,3], yhat = [2,5] gives 2.5") {
    Profile other{3, Side::item, {{1}}, {}};
    t.params.item_embeddings[0].data = {0, 1, 0, 0};
    t.params.weights[0].data = {0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0};
    t.params.weights[1].data = {3, 0, 0};
    t.params.biases.back().data[0] = 2.0;
    auto second = std::make_shared<const Profile>(other);
    REQUIRE(forward(t.user, *second, t.params) == 5.0);
    std::vector<RatedItem> items{{item, 1.0}, {second, 3.0}};
    CHECK(episode_loss(items, t.user, t.params) == 2.5);
  }
  SUBCASE("empty episode is an argument error") {
    CHECK_THROWS_AS(episode_loss({}, t.user, t.params), ArgumentError);
  }
}

TEST_CASE("episode loss over 7 items matches the summation oracle") {
  testing::InstanceLimits lim;
  lim.items = 12;
  lim.min_support = 7;
  lim.max_support = 7;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto inst = random_instance(seed, lim);
    const auto& e = inst.episodes[0];
    REQUIRE(e.support.size() == 7);
    CHECK(std::abs(episode_loss(e.support, e.user, inst.params) -
                   naive_loss(e.support, e.user, inst.params)) < 1e-12);
  }
}

TEST_CASE("apply_step") {
  auto inst = random_instance(9);
  auto g = GradientSet::zeros_like(inst.params);
  for (auto* m : g.all()) std::fill(m->data.begin(), m->data.end(), 0.5);

  CHECK(apply_step(inst.params, g, 0.0) == inst.params);

  ParameterSet ones = inst.params;
  for (auto* m : ones.all()) std::fill(m->data.begin(), m->data.end(), 1.0);
  const auto stepped = apply_step(ones, g, 0.1);
  for (const auto* m : stepped.all()) {
    for (double v : m->data) CHECK(v == 0.95);
  }

  const auto there = apply_step(inst.params, g, 0.3);
  const auto back = apply_step(there, g, -0.3);
  CHECK_FALSE(testing::first_mismatch(back, inst.params, 0.0, 1e-12).has_value());

  auto wrong = g;
  wrong.weights.pop_back();
  CHECK_THROWS_AS(apply_step(inst.params, wrong, 0.1), ConfigError);
}

TEST_CASE("initialization bounds") {
  ContentSchema s;
  s.user_fields = {field("a", 5)};
  s.item_fields = {field("b", 7)};
  ModelConfig c;
  c.embedding_dim = 6;
  c.layer_widths = {10, 4};
  std::mt19937_64 rng(2);
  const auto p = init_parameters(s, c, rng);
  for (const auto* m : p.theta1()) {
    CHECK(m->rows == 6);
    for (double v : m->data) CHECK(std::abs(v) <= 0.1);
  }
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const auto& w = p.weights[l];
    const double s_bound = std::sqrt(6.0 / static_cast<double>(w.rows + w.cols));
    for (double v : w.data) CHECK(std::abs(v) <= s_bound);
    for (double v : p.biases[l].data) CHECK(v == 0.0);
  }
  CHECK(p.weights.back().cols == 1);
}

TEST_CASE("schema validation") {
  ContentSchema s;
  s.item_fields = {field("b", 2)};
  CHECK_THROWS_AS(s.validate(), SchemaError);
  s.user_fields = {field("a", 2), field("a", 3)};
  CHECK_THROWS_AS(s.validate(), SchemaError);
  s.user_fields = {field("a", 2)};
  CHECK_NOTHROW(s.validate());
  CHECK(s.user_fields[0].index_of("missing") == 0);
  CHECK(s.user_fields[0].index_of("l1") == 1);
}
