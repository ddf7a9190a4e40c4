#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "melu/data.hpp"
#include "melu/errors.hpp"
#include "melu/synthetic.hpp"

using namespace melu;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("melu_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

std::vector<ItemRating> history_of(std::size_t n) {
  std::vector<ItemRating> h;
  for (std::size_t i = 0; i < n; ++i) {
    h.push_back({static_cast<std::int64_t>(100 + i), 1.0 + static_cast<double>(i % 5)});
  }
  return h;
}

SyntheticSpec small_world() {
  SyntheticSpec s;
  s.users = 60;
  s.items = 120;
  s.min_history = 30;
  s.max_history = 80;
  s.seed = 4;
  return s;
}

}  // namespace

TEST_CASE("split_line") {
  CHECK(split_line("1::Toy Story (1995)::Animation|Comedy", "::") ==
        std::vector<std::string>{"1", "Toy Story (1995)", "Animation|Comedy"});
  CHECK(split_line("\"a\";\"b\";c\r", ";") == std::vector<std::string>{"a", "b", "c"});
  CHECK(split_line("a,,b", ",") == std::vector<std::string>{"a", "", "b"});
  CHECK(split_line("x", "") == std::vector<std::string>{"x"});
}

TEST_CASE("year parsing and age bins") {
  CHECK(year_from_title("Toy Story (1995)") == 1995);
  CHECK(year_from_title("  Heat (1995) ") == 1995);
  CHECK_FALSE(year_from_title("No Year").has_value());
  CHECK_FALSE(year_from_title("Bad (19x5)").has_value());
  CHECK(age_bin("17") == "<18");
  CHECK(age_bin("18") == "18-24");
  CHECK(age_bin("34") == "25-34");
  CHECK(age_bin("44") == "35-44");
  CHECK(age_bin("54") == "45-54");
  CHECK(age_bin("64") == "55-64");
  CHECK(age_bin("65") == "65+");
  CHECK(age_bin("").empty());
  CHECK(age_bin("NULL").empty());
}

TEST_CASE("field labels and profiles") {
  FieldConfig zip{"zip", "zip", FieldKind::categorical, "|", FieldTransform::first_char};
  CHECK(field_labels("48067", zip) == std::vector<std::string>{"4"});
  FieldConfig genre{"genre", "genres", FieldKind::multi_categorical, "|", FieldTransform::none};
  CHECK(field_labels("Action|NULL|Drama", genre) == std::vector<std::string>{"Action", "Drama"});
  FieldConfig year{"year", "title", FieldKind::categorical, "|", FieldTransform::title_year};
  CHECK(field_labels("Heat (1995)", year) == std::vector<std::string>{"1995"});

  ContentSchema schema;
  FieldSpec occ;
  occ.name = "occupation";
  occ.add_label("4");
  occ.add_label("7");
  FieldSpec g;
  g.name = "genre";
  g.multi_valued = true;
  g.add_label("Action");
  schema.user_fields = {occ};
  schema.item_fields = {g};
  FieldConfig occ_cfg{"occupation", "occupation"};
  const auto p = make_profile(5, Side::user, {"99"}, {occ_cfg}, schema);
  CHECK(p.categorical == std::vector<std::vector<std::uint32_t>>{{0}});
  CHECK(make_profile(5, Side::user, {"7"}, {occ_cfg}, schema).categorical[0] ==
        std::vector<std::uint32_t>{2});
  CHECK(make_profile(6, Side::item, {""}, {genre}, schema).categorical[0] ==
        std::vector<std::uint32_t>{0});
  CHECK_THROWS_AS(make_profile(5, Side::user, {}, {occ_cfg}, schema), ArgumentError);
}

TEST_CASE("deduplication keeps the latest rating") {
  std::vector<RatingRecord> r{{1, 10, 3.0, 5}, {1, 10, 4.0, 9}, {1, 10, 2.0, 7},
                              {2, 10, 1.0, {}}, {2, 10, 5.0, {}}, {1, 5, 2.0, 1}};
  const auto out = deduplicate_ratings(r);
  REQUIRE(out.size() == 3);
  CHECK(out[0].item_id == 5);
  CHECK(out[1].rating == 4.0);
  CHECK(out[2].rating == 5.0);
}

TEST_CASE("support/query split bounds") {
  auto [s13, q13] = split_support_query(history_of(13), 1);
  CHECK(s13.size() == 3);
  CHECK(q13.size() == 10);
  auto [s100, q100] = split_support_query(history_of(100), 1);
  CHECK(s100.size() == 90);
  CHECK(q100.size() == 10);
  CHECK_THROWS_AS(split_support_query(history_of(12), 1), ArgumentError);
  CHECK_THROWS_AS(split_support_query(history_of(101), 1), ArgumentError);

  const auto h = history_of(40);
  auto a = split_support_query(h, 77);
  auto shuffled = h;
  std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(3));
  auto b = split_support_query(shuffled, 77);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  std::set<std::int64_t> ids;
  for (const auto& r : a.first) ids.insert(r.item_id);
  for (const auto& r : a.second) ids.insert(r.item_id);
  CHECK(ids.size() == 40);
}

TEST_CASE("existing-user draw") {
  std::vector<std::int64_t> users{10, 9, 8, 7, 6, 5, 4, 3, 2, 1};
  const auto a = draw_existing_users(users, 0.8, 42);
  CHECK(a.size() == 8);
  CHECK(a == draw_existing_users(users, 0.8, 42));
  CHECK(std::is_sorted(a.begin(), a.end()));
}

TEST_CASE("partition cells are disjoint, exhaustive and well-formed") {
  std::mt19937_64 rng(2);
  std::vector<RatingRecord> records;
  std::map<std::int64_t, int> years;
  for (std::int64_t i = 1; i <= 150; ++i) years[i] = 1990 + static_cast<int>(i % 11);
  years[151] = 0;
  std::uniform_int_distribution<int> count(5, 140);
  std::uniform_int_distribution<int> rating(1, 5);
  for (std::int64_t u = 1; u <= 80; ++u) {
    std::vector<std::int64_t> items(150);
    std::iota(items.begin(), items.end(), 1);
    std::shuffle(items.begin(), items.end(), rng);
    items.resize(count(rng));
    for (auto i : items) records.push_back({u, i, double(rating(rng)), {}});
  }
  PartitionSpec spec;
  spec.seed = 9;
  const auto p = partition(records, years, spec);

  std::set<std::int64_t> eu(p.existing_users.begin(), p.existing_users.end());
  std::set<std::int64_t> nu(p.new_users.begin(), p.new_users.end());
  CHECK(eu.size() == 64);
  CHECK(eu.size() + nu.size() == 80);
  for (auto u : eu) CHECK_FALSE(nu.contains(u));
  std::set<std::int64_t> ei(p.existing_items.begin(), p.existing_items.end());
  std::set<std::int64_t> ni(p.new_items.begin(), p.new_items.end());
  for (auto i : ei) CHECK(years.at(i) <= 1997);
  for (auto i : ni) CHECK(years.at(i) >= 1998);

  std::size_t routed = 0;
  for (auto n : p.routed_ratings) routed += n;
  CHECK(routed + p.unrouted_ratings == records.size());

  std::set<std::pair<std::int64_t, std::int64_t>> seen;
  for (std::size_t c = 0; c < kCellCount; ++c) {
    const auto key = CellKey::from_index(c);
    for (const auto& e : p.cells[c]) {
      CHECK((key.users == Group::existing ? eu : nu).contains(e.user_id));
      CHECK(e.query.size() == 10);
      CHECK(e.support.size() >= 3);
      CHECK(e.support.size() <= 90);
      for (const auto* set : {&e.support, &e.query}) {
        for (const auto& r : *set) {
          CHECK((key.items == Group::existing ? ei : ni).contains(r.item_id));
          CHECK(seen.emplace(e.user_id, r.item_id).second);
        }
      }
    }
  }
  const auto q = partition(records, years, spec);
  for (std::size_t c = 0; c < kCellCount; ++c) {
    REQUIRE(q.cells[c].size() == p.cells[c].size());
    for (std::size_t i = 0; i < p.cells[c].size(); ++i) {
      CHECK(q.cells[c][i].support == p.cells[c][i].support);
      CHECK(q.cells[c][i].query == p.cells[c][i].query);
    }
  }
}

TEST_CASE("year boundary") {
  std::vector<RatingRecord> records{{1, 1, 3.0, {}}, {1, 2, 3.0, {}}};
  const std::map<std::int64_t, int> years{{1, 1997}, {2, 1998}};
  const auto p = partition(records, years, {});
  CHECK(p.existing_items == std::vector<std::int64_t>{1});
  CHECK(p.new_items == std::vector<std::int64_t>{2});
}

TEST_CASE("partition settings validation") {
  PartitionSpec s;
  s.user_split_fraction = 1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.new_min_year = 1997;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.min_history = 10;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("loading tables") {
  const auto dir = scratch("load");
  write_file(dir / "ratings.dat", "1::1::5::10\n1::2::9::11\nbroken\n2::1::3::12\n");
  write_file(dir / "users.dat", "1::F::25::4::48067\n2::M::56::99::\n");
  write_file(dir / "movies.dat", "1::A (1995)::Action\n2::B (1999)::Drama|Action\n");
  const auto fmt = FormatConfig::movielens_1m(dir);
  const auto t = load_tables(fmt);
  CHECK(t.ratings.size() == 2);
  CHECK(t.report.rating_lines == 4);
  CHECK(t.report.malformed_ratings == 2);
  CHECK(t.users.rows.size() == 2);
  CHECK(item_years(t.items, fmt) == std::map<std::int64_t, int>{{1, 1995}, {2, 1999}});

  const auto schema = build_schema(t.users, t.items, fmt);
  CHECK(schema.user_fields.size() == 4);
  CHECK(schema.item_fields.size() == 2);
  CHECK(schema.user_fields[3].cardinality <= 11);
  const auto users = build_profiles(t.users, Side::user, schema, fmt);
  CHECK(users.at(2)->categorical[3] == std::vector<std::uint32_t>{0});

  write_file(dir / "ratings.dat", "");
  CHECK_THROWS_WITH_AS(load_tables(fmt), "no ratings", DataError);
  auto missing = fmt;
  missing.ratings.path = dir / "absent.dat";
  CHECK_THROWS_AS(load_tables(missing), DataError);
  auto bad_column = fmt;
  bad_column.rating_column = "score";
  CHECK_THROWS_AS(load_tables(bad_column), DataError);
}

TEST_CASE("string ids are interned") {
  IdInterner ids;
  CHECK(ids.intern("42") == 42);
  const auto isbn = ids.intern("034545104X");
  CHECK(isbn == kInternedIdBase);
  CHECK(ids.intern("034545104X") == isbn);
  CHECK(ids.intern("X2") == kInternedIdBase + 1);
}

TEST_CASE("format config json round trip") {
  const auto fmt = FormatConfig::movielens_1m("/data/ml");
  const auto back = FormatConfig::from_json(fmt.to_json());
  CHECK(back.to_json() == fmt.to_json());
  const auto preset = FormatConfig::from_json({{"preset", "movielens-1m"}, {"data_dir", "ml"}}, "/base");
  CHECK(preset.ratings.path == fs::path("/base/ml/ratings.dat"));
  CHECK_THROWS_AS(FormatConfig::from_json({{"preset", "other"}}), ConfigError);
}

TEST_CASE("prepared synthetic data satisfies the pipeline invariants") {
  const auto dir = scratch("prepare");
  write_synthetic_movielens(dir, small_world());
  PartitionSpec spec;
  spec.seed = 5;
  PrepareSummary summary;
  const auto ds = prepare_dataset(FormatConfig::movielens_1m(dir), spec, &summary);
  CHECK(summary.load.malformed_ratings == 0);
  std::size_t episodes = 0;
  for (std::size_t c = 0; c < kCellCount; ++c) {
    episodes += ds.cells[c].size();
    for (const auto& e : ds.cells[c]) {
      CHECK(e.query.size() == 10);
      CHECK(e.support.size() >= 3);
      CHECK(e.support.size() <= 90);
    }
  }
  CHECK(episodes > 0);
  CHECK_FALSE(ds.training_cell().empty());
  CHECK(ds.item_info.at(1).title.find("Synthetic") != std::string::npos);

  const auto again = prepare_dataset(FormatConfig::movielens_1m(dir), spec);
  CHECK(again.digest() == ds.digest());
  spec.seed = 6;
  CHECK(prepare_dataset(FormatConfig::movielens_1m(dir), spec).digest() != ds.digest());

  const auto out = scratch("roundtrip");
  write_dataset(out, ds, {{"seed", 5}});
  const auto back = read_dataset(out);
  CHECK(back.digest() == ds.digest());
  CHECK(back.schema == ds.schema);
  CHECK(back.item_info.size() == ds.item_info.size());
}
