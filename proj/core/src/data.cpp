#include "melu/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <unordered_map>

#include "melu/digest.hpp"
#include "melu/errors.hpp"
#include "melu/json_io.hpp"

namespace melu {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(begin, end - begin + 1));
}

template <typename T>
std::optional<T> parse_number(std::string_view text) {
  const std::string t = trim(text);
  T value{};
  const char* first = t.data();
  const char* last = t.data() + t.size();
  if (t.empty()) return std::nullopt;
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return value;
}

// splitmix64 finalizer; derives independent per-user seeds.
std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

const char* kind_name(FieldKind kind) {
  switch (kind) {
    case FieldKind::categorical: return "categorical";
    case FieldKind::multi_categorical: return "multi_categorical";
    case FieldKind::continuous: return "continuous";
  }
  return "categorical";
}

FieldKind parse_kind(const std::string& s) {
  if (s == "categorical") return FieldKind::categorical;
  if (s == "multi_categorical") return FieldKind::multi_categorical;
  if (s == "continuous") return FieldKind::continuous;
  throw ConfigError("unknown field kind '" + s + "'");
}

const char* transform_name(FieldTransform t) {
  switch (t) {
    case FieldTransform::none: return "none";
    case FieldTransform::first_char: return "first_char";
    case FieldTransform::age_bin: return "age_bin";
    case FieldTransform::title_year: return "title_year";
  }
  return "none";
}

FieldTransform parse_transform(const std::string& s) {
  if (s == "none") return FieldTransform::none;
  if (s == "first_char") return FieldTransform::first_char;
  if (s == "age_bin") return FieldTransform::age_bin;
  if (s == "title_year") return FieldTransform::title_year;
  throw ConfigError("unknown field transform '" + s + "'");
}

json table_to_json(const TableFormat& t) {
  return json{{"path", t.path.string()},
              {"delimiter", t.delimiter},
              {"columns", t.columns},
              {"header", t.header}};
}

TableFormat table_from_json(const json& j, const std::filesystem::path& base) {
  TableFormat t;
  t.path = j.at("path").get<std::string>();
  if (t.path.is_relative() && !base.empty()) t.path = base / t.path;
  t.delimiter = j.value("delimiter", std::string(","));
  j.at("columns").get_to(t.columns);
  t.header = j.value("header", false);
  return t;
}

json fields_to_json(const std::vector<FieldConfig>& fields) {
  json out = json::array();
  for (const auto& f : fields) {
    out.push_back(json{{"name", f.name},
                       {"column", f.column},
                       {"kind", kind_name(f.kind)},
                       {"separator", f.separator},
                       {"transform", transform_name(f.transform)}});
  }
  return out;
}

std::vector<FieldConfig> fields_from_json(const json& j) {
  std::vector<FieldConfig> out;
  for (const auto& e : j) {
    FieldConfig f;
    e.at("name").get_to(f.name);
    f.column = e.value("column", f.name);
    f.kind = parse_kind(e.value("kind", std::string("categorical")));
    f.separator = e.value("separator", std::string("|"));
    f.transform = parse_transform(e.value("transform", std::string("none")));
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// FormatConfig

FormatConfig FormatConfig::movielens_1m(const std::filesystem::path& dir) {
  FormatConfig f;
  f.ratings = {dir / "ratings.dat", "::", {"user_id", "item_id", "rating", "timestamp"}, false};
  f.users = {dir / "users.dat", "::", {"user_id", "gender", "age", "occupation", "zip"}, false};
  f.items = {dir / "movies.dat", "::", {"item_id", "title", "genres"}, false};
  f.timestamp_column = "timestamp";
  f.title_column = "title";
  f.year_from_title = true;
  f.user_fields = {
      {"gender", "gender", FieldKind::categorical, "|", FieldTransform::none},
      {"age", "age", FieldKind::categorical, "|", FieldTransform::none},
      {"occupation", "occupation", FieldKind::categorical, "|", FieldTransform::none},
      {"zip", "zip", FieldKind::categorical, "|", FieldTransform::first_char},
  };
  f.item_fields = {
      {"year", "title", FieldKind::categorical, "|", FieldTransform::title_year},
      {"genre", "genres", FieldKind::multi_categorical, "|", FieldTransform::none},
  };
  f.rating_min = 1.0;
  f.rating_max = 5.0;
  return f;
}

FormatConfig FormatConfig::from_json(const json& j, const std::filesystem::path& base) {
  if (j.contains("preset")) {
    const auto preset = j.at("preset").get<std::string>();
    if (preset != "movielens-1m") throw ConfigError("unknown format preset '" + preset + "'");
    std::filesystem::path dir = j.value("data_dir", std::string("."));
    if (dir.is_relative() && !base.empty()) dir = base / dir;
    return movielens_1m(dir);
  }
  FormatConfig f;
  f.ratings = table_from_json(j.at("ratings"), base);
  f.users = table_from_json(j.at("users"), base);
  f.items = table_from_json(j.at("items"), base);
  f.user_id_column = j.value("user_id_column", f.user_id_column);
  f.item_id_column = j.value("item_id_column", f.item_id_column);
  f.rating_column = j.value("rating_column", f.rating_column);
  f.timestamp_column = j.value("timestamp_column", std::string());
  f.title_column = j.value("title_column", std::string());
  f.year_column = j.value("year_column", std::string());
  f.year_from_title = j.value("year_from_title", false);
  f.user_fields = fields_from_json(j.at("user_fields"));
  f.item_fields = fields_from_json(j.at("item_fields"));
  if (j.contains("rating_range")) {
    f.rating_min = j.at("rating_range").at(0).get<double>();
    f.rating_max = j.at("rating_range").at(1).get<double>();
  }
  if (!(f.rating_min < f.rating_max)) throw ConfigError("rating range is empty");
  return f;
}

json FormatConfig::to_json() const {
  return json{{"ratings", table_to_json(ratings)},
              {"users", table_to_json(users)},
              {"items", table_to_json(items)},
              {"user_id_column", user_id_column},
              {"item_id_column", item_id_column},
              {"rating_column", rating_column},
              {"timestamp_column", timestamp_column},
              {"title_column", title_column},
              {"year_column", year_column},
              {"year_from_title", year_from_title},
              {"user_fields", fields_to_json(user_fields)},
              {"item_fields", fields_to_json(item_fields)},
              {"rating_range", {rating_min, rating_max}}};
}

// ---------------------------------------------------------------------------
// Loading

std::int64_t IdInterner::intern(const std::string& raw) {
  if (auto numeric = parse_number<std::int64_t>(raw)) return *numeric;
  auto it = ids_.find(raw);
  if (it != ids_.end()) return it->second;
  const auto id = kInternedIdBase + static_cast<std::int64_t>(ids_.size());
  ids_.emplace(raw, id);
  return id;
}

std::vector<std::string> split_line(const std::string& line, const std::string& delimiter) {
  std::vector<std::string> out;
  std::string_view rest(line);
  if (!rest.empty() && rest.back() == '\r') rest.remove_suffix(1);
  auto push = [&](std::string_view field) {
    if (field.size() >= 2 && field.front() == '"' && field.back() == '"') {
      field = field.substr(1, field.size() - 2);
    }
    out.emplace_back(field);
  };
  if (delimiter.empty()) {
    push(rest);
    return out;
  }
  while (true) {
    const auto pos = rest.find(delimiter);
    if (pos == std::string_view::npos) {
      push(rest);
      break;
    }
    push(rest.substr(0, pos));
    rest.remove_prefix(pos + delimiter.size());
  }
  return out;
}

std::size_t RawTable::column_index(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw DataError("declared column '" + name + "' is missing");
  return static_cast<std::size_t>(it - columns.begin());
}

namespace {

std::ifstream open_table(const TableFormat& table) {
  std::ifstream in(table.path);
  if (!in) throw DataError("cannot read " + table.path.string());
  return in;
}

RawTable load_profile_table(const TableFormat& format, const std::string& id_column,
                            IdInterner& interner, std::size_t& malformed) {
  RawTable table;
  table.columns = format.columns;
  const std::size_t id_index = table.column_index(id_column);
  auto in = open_table(format);
  std::string line;
  bool first = true;
  std::set<std::int64_t> seen;
  while (std::getline(in, line)) {
    if (first && format.header) {
      first = false;
      continue;
    }
    first = false;
    if (trim(line).empty()) continue;
    auto fields = split_line(line, format.delimiter);
    if (fields.size() != table.columns.size() || trim(fields[id_index]).empty()) {
      ++malformed;
      continue;
    }
    const auto id = interner.intern(trim(fields[id_index]));
    if (!seen.insert(id).second) {
      ++malformed;
      continue;
    }
    table.ids.push_back(id);
    table.rows.push_back(std::move(fields));
  }
  return table;
}

}  // namespace

RawTables load_tables(const FormatConfig& format) {
  RawTables out;
  IdInterner user_ids;
  IdInterner item_ids;

  {
    RawTable layout;
    layout.columns = format.ratings.columns;
    const auto ui = layout.column_index(format.user_id_column);
    const auto ii = layout.column_index(format.item_id_column);
    const auto ri = layout.column_index(format.rating_column);
    const std::optional<std::size_t> ti =
        format.timestamp_column.empty()
            ? std::nullopt
            : std::optional<std::size_t>(layout.column_index(format.timestamp_column));

    auto in = open_table(format.ratings);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (first && format.ratings.header) {
        first = false;
        continue;
      }
      first = false;
      if (trim(line).empty()) continue;
      ++out.report.rating_lines;
      const auto fields = split_line(line, format.ratings.delimiter);
      if (fields.size() != layout.columns.size()) {
        ++out.report.malformed_ratings;
        continue;
      }
      const auto rating = parse_number<double>(fields[ri]);
      if (!rating || !(*rating >= format.rating_min && *rating <= format.rating_max) ||
          trim(fields[ui]).empty() || trim(fields[ii]).empty()) {
        ++out.report.malformed_ratings;
        continue;
      }
      RatingRecord r;
      r.user_id = user_ids.intern(trim(fields[ui]));
      r.item_id = item_ids.intern(trim(fields[ii]));
      r.rating = *rating;
      if (ti) {
        r.timestamp = parse_number<std::int64_t>(fields[*ti]);
        if (!r.timestamp) {
          ++out.report.malformed_ratings;
          continue;
        }
      }
      out.ratings.push_back(r);
    }
  }
  if (out.ratings.empty()) throw DataError("no ratings");

  out.users = load_profile_table(format.users, format.user_id_column, user_ids,
                                 out.report.malformed_users);
  out.items = load_profile_table(format.items, format.item_id_column, item_ids,
                                 out.report.malformed_items);
  return out;
}

std::vector<RatingRecord> deduplicate_ratings(std::vector<RatingRecord> records) {
  // Stable sort keeps file order among equal keys, so "latest" falls back
  // to the later line when timestamps tie or are absent.
  std::stable_sort(records.begin(), records.end(),
                   [](const RatingRecord& a, const RatingRecord& b) {
                     if (a.user_id != b.user_id) return a.user_id < b.user_id;
                     return a.item_id < b.item_id;
                   });
  std::vector<RatingRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (!out.empty() && out.back().user_id == r.user_id && out.back().item_id == r.item_id) {
      if (r.timestamp.value_or(0) >= out.back().timestamp.value_or(0)) out.back() = r;
      continue;
    }
    out.push_back(r);
  }
  return out;
}

std::optional<int> year_from_title(const std::string& title) {
  const std::string t = trim(title);
  if (t.size() < 6 || t.back() != ')') return std::nullopt;
  const auto open = t.rfind('(');
  if (open == std::string::npos || t.size() - open != 6) return std::nullopt;
  return parse_number<int>(std::string_view(t).substr(open + 1, 4));
}

std::string age_bin(const std::string& raw_age) {
  const auto age = parse_number<double>(raw_age);
  if (!age || *age <= 0) return {};
  if (*age < 18) return "<18";
  if (*age < 25) return "18-24";
  if (*age < 35) return "25-34";
  if (*age < 45) return "35-44";
  if (*age < 55) return "45-54";
  if (*age < 65) return "55-64";
  return "65+";
}

std::map<std::int64_t, int> item_years(const RawTable& items, const FormatConfig& format) {
  std::map<std::int64_t, int> out;
  std::optional<std::size_t> col;
  if (!format.year_column.empty()) {
    col = items.column_index(format.year_column);
  } else if (format.year_from_title) {
    col = items.column_index(format.title_column);
  } else {
    throw ConfigError("format declares neither a year column nor year_from_title");
  }
  for (std::size_t r = 0; r < items.rows.size(); ++r) {
    const auto& raw = items.rows[r][*col];
    const auto year =
        format.year_column.empty() ? year_from_title(raw) : parse_number<int>(raw);
    if (year && *year > 0) out[items.ids[r]] = *year;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Schema and profiles

namespace {

std::string apply_transform(const std::string& raw, FieldTransform t) {
  const std::string v = trim(raw);
  switch (t) {
    case FieldTransform::none: return v;
    case FieldTransform::first_char: return v.empty() ? v : v.substr(0, 1);
    case FieldTransform::age_bin: return age_bin(v);
    case FieldTransform::title_year: {
      const auto y = year_from_title(v);
      return y ? std::to_string(*y) : std::string();
    }
  }
  return v;
}

bool is_missing(const std::string& v) {
  return v.empty() || v == "NULL" || v == "null" || v == "NA" || v == "N/A";
}

}  // namespace

std::vector<std::string> field_labels(const std::string& raw, const FieldConfig& field) {
  std::vector<std::string> out;
  if (field.kind == FieldKind::multi_categorical) {
    for (auto& part : split_line(raw, field.separator)) {
      auto label = apply_transform(part, field.transform);
      if (!is_missing(label)) out.push_back(std::move(label));
    }
  } else {
    auto label = apply_transform(raw, field.transform);
    if (!is_missing(label)) out.push_back(std::move(label));
  }
  return out;
}

namespace {

std::vector<FieldSpec> build_side(const RawTable& table,
                                  const std::vector<FieldConfig>& fields,
                                  const std::vector<std::int64_t>& allowed,
                                  std::size_t& continuous_dims) {
  const std::set<std::int64_t> keep(allowed.begin(), allowed.end());
  std::vector<FieldSpec> specs;
  continuous_dims = 0;
  for (const auto& field : fields) {
    const auto col = table.column_index(field.column);
    if (field.kind == FieldKind::continuous) {
      ++continuous_dims;
      continue;
    }
    std::set<std::string> labels;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      if (!keep.empty() && !keep.contains(table.ids[r])) continue;
      for (auto& label : field_labels(table.rows[r][col], field)) labels.insert(label);
    }
    FieldSpec spec;
    spec.name = field.name;
    spec.multi_valued = field.kind == FieldKind::multi_categorical;
    for (const auto& label : labels) spec.add_label(label);
    specs.push_back(std::move(spec));
  }
  return specs;
}

}  // namespace

ContentSchema build_schema(const RawTable& users, const RawTable& items,
                           const FormatConfig& format,
                           const std::vector<std::int64_t>& user_ids,
                           const std::vector<std::int64_t>& item_ids) {
  ContentSchema schema;
  schema.user_fields =
      build_side(users, format.user_fields, user_ids, schema.continuous_user_dims);
  schema.item_fields =
      build_side(items, format.item_fields, item_ids, schema.continuous_item_dims);
  schema.validate();
  return schema;
}

Profile make_profile(std::int64_t id, Side side, const std::vector<std::string>& raw_values,
                     const std::vector<FieldConfig>& fields, const ContentSchema& schema) {
  if (raw_values.size() != fields.size()) throw ArgumentError("one raw value per field expected");
  const auto& specs = schema.fields(side);
  Profile p;
  p.id = id;
  p.side = side;
  std::size_t spec_index = 0;
  for (std::size_t f = 0; f < fields.size(); ++f) {
    const auto& raw = raw_values[f];
    if (fields[f].kind == FieldKind::continuous) {
      p.continuous.push_back(parse_number<double>(raw).value_or(0.0));
      continue;
    }
    const auto& spec = specs.at(spec_index++);
    std::set<std::uint32_t> indices;
    for (const auto& label : field_labels(raw, fields[f])) {
      indices.insert(spec.index_of(label));
    }
    if (indices.empty()) indices.insert(0);
    if (!spec.multi_valued && indices.size() > 1) indices = {*indices.begin()};
    p.categorical.emplace_back(indices.begin(), indices.end());
  }
  return p;
}

std::map<std::int64_t, ProfileRef> build_profiles(const RawTable& table, Side side,
                                                  const ContentSchema& schema,
                                                  const FormatConfig& format) {
  const auto& fields = side == Side::user ? format.user_fields : format.item_fields;
  std::vector<std::size_t> cols;
  for (const auto& f : fields) cols.push_back(table.column_index(f.column));

  std::map<std::int64_t, ProfileRef> out;
  std::vector<std::string> raw(fields.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    for (std::size_t f = 0; f < fields.size(); ++f) raw[f] = table.rows[r][cols[f]];
    out.emplace(table.ids[r],
                std::make_shared<const Profile>(make_profile(table.ids[r], side, raw, fields, schema)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Partitioning

std::string CellKey::name() const {
  return std::string(users == Group::existing ? "existing" : "new") + "_users__" +
         (items == Group::existing ? "existing" : "new") + "_items";
}

void PartitionSpec::validate() const {
  if (!(user_split_fraction > 0.0 && user_split_fraction < 1.0)) {
    throw ConfigError("user_split_fraction must be in (0, 1)");
  }
  if (new_min_year <= existing_max_year) {
    throw ConfigError("new_min_year must exceed existing_max_year");
  }
  if (query_size < 1 || min_history <= query_size || max_history < min_history) {
    throw ConfigError("history bounds must satisfy query_size < min_history <= max_history");
  }
}

std::vector<std::int64_t> draw_existing_users(std::vector<std::int64_t> user_ids,
                                              double fraction, std::uint64_t seed) {
  std::sort(user_ids.begin(), user_ids.end());
  user_ids.erase(std::unique(user_ids.begin(), user_ids.end()), user_ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(user_ids.begin(), user_ids.end(), rng);
  const auto count = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(user_ids.size())));
  user_ids.resize(std::min(count, user_ids.size()));
  std::sort(user_ids.begin(), user_ids.end());
  return user_ids;
}

std::pair<std::vector<ItemRating>, std::vector<ItemRating>> split_support_query(
    const std::vector<ItemRating>& history, std::uint64_t seed, std::size_t query_size,
    std::size_t min_history, std::size_t max_history) {
  if (history.size() < min_history || history.size() > max_history) {
    throw ArgumentError("history length " + std::to_string(history.size()) +
                        " outside [" + std::to_string(min_history) + ", " +
                        std::to_string(max_history) + "]");
  }
  if (query_size >= history.size()) throw ArgumentError("query would leave no support");
  std::vector<ItemRating> shuffled = history;
  std::sort(shuffled.begin(), shuffled.end(),
            [](const ItemRating& a, const ItemRating& b) { return a.item_id < b.item_id; });
  std::mt19937_64 rng(seed);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);

  std::vector<ItemRating> query(shuffled.begin(), shuffled.begin() + query_size);
  std::vector<ItemRating> support(shuffled.begin() + query_size, shuffled.end());
  auto by_id = [](const ItemRating& a, const ItemRating& b) { return a.item_id < b.item_id; };
  std::sort(query.begin(), query.end(), by_id);
  std::sort(support.begin(), support.end(), by_id);
  return {std::move(support), std::move(query)};
}

Partition partition(const std::vector<RatingRecord>& records,
                    const std::map<std::int64_t, int>& item_years,
                    const PartitionSpec& spec) {
  spec.validate();
  Partition out;

  std::unordered_map<std::int64_t, Group> item_group;
  for (const auto& [item, year] : item_years) {
    if (year <= spec.existing_max_year) {
      item_group[item] = Group::existing;
      out.existing_items.push_back(item);
    } else if (year >= spec.new_min_year) {
      item_group[item] = Group::fresh;
      out.new_items.push_back(item);
    }
  }

  std::vector<std::int64_t> users;
  users.reserve(records.size());
  for (const auto& r : records) users.push_back(r.user_id);
  std::sort(users.begin(), users.end());
  users.erase(std::unique(users.begin(), users.end()), users.end());

  out.existing_users = draw_existing_users(users, spec.user_split_fraction, spec.seed);
  const std::set<std::int64_t> existing(out.existing_users.begin(), out.existing_users.end());
  for (auto u : users) {
    if (!existing.contains(u)) out.new_users.push_back(u);
  }

  std::array<std::map<std::int64_t, std::vector<ItemRating>>, kCellCount> histories;
  for (const auto& r : records) {
    auto it = item_group.find(r.item_id);
    if (it == item_group.end()) {
      ++out.unrouted_ratings;
      continue;
    }
    const CellKey key{existing.contains(r.user_id) ? Group::existing : Group::fresh,
                      it->second};
    histories[key.index()][r.user_id].push_back({r.item_id, r.rating});
    ++out.routed_ratings[key.index()];
  }

  for (std::size_t c = 0; c < kCellCount; ++c) {
    for (auto& [user, history] : histories[c]) {
      if (history.size() < spec.min_history || history.size() > spec.max_history) {
        ++out.dropped_histories;
        continue;
      }
      const std::uint64_t seed =
          mix(spec.seed ^ mix(static_cast<std::uint64_t>(user) ^ mix(c + 1)));
      auto [support, query] = split_support_query(history, seed, spec.query_size,
                                                  spec.min_history, spec.max_history);
      out.cells[c].push_back({user, std::move(support), std::move(query)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset assembly and persistence

std::uint64_t PartitionedDataset::digest() const {
  Digest d;
  d.update(schema.digest());
  for (const auto* ids : {&existing_users, &new_users, &existing_items, &new_items}) {
    d.update(static_cast<std::uint64_t>(ids->size()));
    for (auto id : *ids) d.update(id);
  }
  for (const auto& cell : cells) {
    d.update(static_cast<std::uint64_t>(cell.size()));
    for (const auto& e : cell) {
      d.update(e.user_id());
      for (const auto* set : {&e.support, &e.query}) {
        d.update(static_cast<std::uint64_t>(set->size()));
        for (const auto& r : *set) {
          d.update(r.item->id);
          d.update(r.rating);
        }
      }
    }
  }
  return d.value();
}

PartitionedDataset assemble_dataset(const Partition& partition, ContentSchema schema,
                                    const std::map<std::int64_t, ProfileRef>& users,
                                    const std::map<std::int64_t, ProfileRef>& items,
                                    std::map<std::int64_t, ItemInfo> item_info) {
  PartitionedDataset ds;
  ds.schema = std::move(schema);
  ds.users = users;
  ds.items = items;
  ds.item_info = std::move(item_info);
  ds.existing_users = partition.existing_users;
  ds.new_users = partition.new_users;
  ds.existing_items = partition.existing_items;
  ds.new_items = partition.new_items;

  auto lookup = [](const std::map<std::int64_t, ProfileRef>& m, std::int64_t id,
                   const char* what) -> const ProfileRef& {
    auto it = m.find(id);
    if (it == m.end()) {
      throw DataError(std::string("no ") + what + " profile for id " + std::to_string(id));
    }
    return it->second;
  };

  for (std::size_t c = 0; c < kCellCount; ++c) {
    for (const auto& e : partition.cells[c]) {
      UserEpisode episode;
      episode.user = *lookup(users, e.user_id, "user");
      for (const auto& r : e.support) {
        episode.support.push_back({lookup(items, r.item_id, "item"), r.rating});
      }
      for (const auto& r : e.query) {
        episode.query.push_back({lookup(items, r.item_id, "item"), r.rating});
      }
      ds.cells[c].push_back(std::move(episode));
    }
  }
  return ds;
}

PartitionedDataset prepare_dataset(const FormatConfig& format, const PartitionSpec& spec,
                                   PrepareSummary* summary) {
  RawTables tables = load_tables(format);

  const std::set<std::int64_t> known_users(tables.users.ids.begin(), tables.users.ids.end());
  const std::set<std::int64_t> known_items(tables.items.ids.begin(), tables.items.ids.end());
  auto records = deduplicate_ratings(std::move(tables.ratings));
  std::erase_if(records, [&](const RatingRecord& r) {
    return !known_users.contains(r.user_id) || !known_items.contains(r.item_id);
  });
  const auto years = item_years(tables.items, format);

  Partition part = partition(records, years, spec);

  ContentSchema schema = build_schema(tables.users, tables.items, format,
                                      part.existing_users, part.existing_items);
  auto users = build_profiles(tables.users, Side::user, schema, format);
  auto items = build_profiles(tables.items, Side::item, schema, format);

  std::map<std::int64_t, ItemInfo> info;
  {
    const std::optional<std::size_t> title_col =
        format.title_column.empty()
            ? std::nullopt
            : std::optional<std::size_t>(tables.items.column_index(format.title_column));
    const FieldConfig* genre_field = nullptr;
    for (const auto& f : format.item_fields) {
      if (f.kind == FieldKind::multi_categorical) {
        genre_field = &f;
        break;
      }
    }
    const std::optional<std::size_t> genre_col =
        genre_field ? std::optional<std::size_t>(tables.items.column_index(genre_field->column))
                    : std::nullopt;
    for (std::size_t r = 0; r < tables.items.rows.size(); ++r) {
      ItemInfo i;
      i.id = tables.items.ids[r];
      if (title_col) i.title = trim(tables.items.rows[r][*title_col]);
      if (auto y = years.find(i.id); y != years.end()) i.year = y->second;
      if (genre_col) i.genres = field_labels(tables.items.rows[r][*genre_col], *genre_field);
      info.emplace(i.id, std::move(i));
    }
  }

  if (summary != nullptr) {
    summary->load = tables.report;
    summary->ratings_after_dedup = records.size();
    summary->items_without_year = tables.items.rows.size() - years.size();
    summary->dropped_histories = part.dropped_histories;
    summary->routed_ratings = part.routed_ratings;
  }
  return assemble_dataset(part, std::move(schema), users, items, std::move(info));
}

namespace {

json episode_to_json(const UserEpisode& e) {
  auto pairs = [](const std::vector<RatedItem>& v) {
    json out = json::array();
    for (const auto& r : v) out.push_back(json::array({r.item->id, r.rating}));
    return out;
  };
  return json{{"user_id", e.user_id()}, {"support", pairs(e.support)}, {"query", pairs(e.query)}};
}

void write_lines(const std::filesystem::path& path, const std::vector<json>& lines) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& l : lines) out << l.dump() << '\n';
}

std::vector<json> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    out.push_back(json::parse(line));
  }
  return out;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const PartitionedDataset& ds,
                   const json& provenance) {
  std::filesystem::create_directories(dir / "cells");
  write_json_file(dir / "schema.json", json(ds.schema));

  std::vector<json> users;
  for (const auto& [id, p] : ds.users) users.push_back(json(*p));
  write_lines(dir / "users.jsonl", users);

  std::vector<json> items;
  for (const auto& [id, p] : ds.items) {
    json line{{"profile", json(*p)}};
    if (auto it = ds.item_info.find(id); it != ds.item_info.end()) {
      line["title"] = it->second.title;
      line["year"] = it->second.year;
      line["genres"] = it->second.genres;
    }
    items.push_back(std::move(line));
  }
  write_lines(dir / "items.jsonl", items);

  write_json_file(dir / "groups.json", json{{"existing_users", ds.existing_users},
                                            {"new_users", ds.new_users},
                                            {"existing_items", ds.existing_items},
                                            {"new_items", ds.new_items}});

  json counts = json::object();
  for (std::size_t c = 0; c < kCellCount; ++c) {
    std::vector<json> lines;
    for (const auto& e : ds.cells[c]) lines.push_back(episode_to_json(e));
    const auto name = CellKey::from_index(c).name();
    write_lines(dir / "cells" / (name + ".jsonl"), lines);
    counts[name] = ds.cells[c].size();
  }

  json prov = provenance;
  prov["episode_counts"] = counts;
  prov["dataset_digest"] = to_hex(ds.digest());
  prov["schema_digest"] = to_hex(ds.schema.digest());
  write_json_file(dir / "provenance.json", prov);
}

PartitionedDataset read_dataset(const std::filesystem::path& dir) {
  PartitionedDataset ds;
  ds.schema = read_json_file(dir / "schema.json").get<ContentSchema>();
  ds.schema.validate();
  for (const auto& line : read_lines(dir / "users.jsonl")) {
    auto p = line.get<Profile>();
    validate_profile(p, ds.schema);
    ds.users.emplace(p.id, std::make_shared<const Profile>(std::move(p)));
  }
  for (const auto& line : read_lines(dir / "items.jsonl")) {
    auto p = line.at("profile").get<Profile>();
    validate_profile(p, ds.schema);
    ItemInfo info;
    info.id = p.id;
    info.title = line.value("title", std::string());
    info.year = line.value("year", 0);
    info.genres = line.value("genres", std::vector<std::string>{});
    ds.item_info.emplace(p.id, std::move(info));
    ds.items.emplace(p.id, std::make_shared<const Profile>(std::move(p)));
  }
  const auto groups = read_json_file(dir / "groups.json");
  groups.at("existing_users").get_to(ds.existing_users);
  groups.at("new_users").get_to(ds.new_users);
  groups.at("existing_items").get_to(ds.existing_items);
  groups.at("new_items").get_to(ds.new_items);

  auto find = [](const std::map<std::int64_t, ProfileRef>& m, std::int64_t id) {
    auto it = m.find(id);
    if (it == m.end()) throw DataError("episode references unknown id " + std::to_string(id));
    return it->second;
  };
  for (std::size_t c = 0; c < kCellCount; ++c) {
    const auto path = dir / "cells" / (CellKey::from_index(c).name() + ".jsonl");
    for (const auto& line : read_lines(path)) {
      UserEpisode e;
      e.user = *find(ds.users, line.at("user_id").get<std::int64_t>());
      for (const auto& pair : line.at("support")) {
        e.support.push_back({find(ds.items, pair.at(0).get<std::int64_t>()),
                             pair.at(1).get<double>()});
      }
      for (const auto& pair : line.at("query")) {
        e.query.push_back({find(ds.items, pair.at(0).get<std::int64_t>()),
                           pair.at(1).get<double>()});
      }
      ds.cells[c].push_back(std::move(e));
    }
  }
  return ds;
}

}  // namespace melu
