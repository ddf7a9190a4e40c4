#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "melu/meta_trainer.hpp"
#include "melu/model.hpp"

namespace melu {

// ---------------------------------------------------------------------------
// Input format description

struct TableFormat {
  std::filesystem::path path;
  std::string delimiter = ",";
  std::vector<std::string> columns;  // column names in file order
  bool header = false;               // skip the first line
};

enum class FieldKind { categorical, multi_categorical, continuous };

// Preprocessing applied to a raw column value before vocabulary lookup.
enum class FieldTransform {
  none,
  first_char,  // keep the first character (coarse zip-code region)
  age_bin,     // numeric age -> <18, 18-24, 25-34, 35-44, 45-54, 55-64, 65+
  title_year,  // "Title (1995)" -> "1995"
};

struct FieldConfig {
  std::string name;
  std::string column;
  FieldKind kind = FieldKind::categorical;
  std::string separator = "|";  // multi_categorical only
  FieldTransform transform = FieldTransform::none;
};

struct FormatConfig {
  TableFormat ratings;
  TableFormat users;
  TableFormat items;

  std::string user_id_column = "user_id";
  std::string item_id_column = "item_id";
  std::string rating_column = "rating";
  std::string timestamp_column;  // optional
  std::string title_column;      // optional, display only

  // Release year: read from `year_column`, or parsed from a trailing
  // "(YYYY)" in the title when `year_from_title` is set.
  std::string year_column;
  bool year_from_title = false;

  std::vector<FieldConfig> user_fields;
  std::vector<FieldConfig> item_fields;

  double rating_min = 1.0;
  double rating_max = 5.0;

  // Layout of the MovieLens 1M distribution (ratings.dat, users.dat,
  // movies.dat) rooted at `dir`.
  static FormatConfig movielens_1m(const std::filesystem::path& dir);

  // Relative table paths are resolved against `base_dir`.
  static FormatConfig from_json(const nlohmann::json& j,
                                const std::filesystem::path& base_dir = {});
  nlohmann::json to_json() const;
};

// ---------------------------------------------------------------------------
// Raw tables

struct RatingRecord {
  std::int64_t user_id = 0;
  std::int64_t item_id = 0;
  double rating = 0.0;
  std::optional<std::int64_t> timestamp;
};

struct RawTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::int64_t> ids;  // parsed id of each row

  // Throws DataError when the column is missing.
  std::size_t column_index(const std::string& name) const;
};

struct LoadReport {
  std::size_t rating_lines = 0;
  std::size_t malformed_ratings = 0;
  std::size_t malformed_users = 0;
  std::size_t malformed_items = 0;
};

struct RawTables {
  std::vector<RatingRecord> ratings;
  RawTable users;
  RawTable items;
  LoadReport report;
};

// Numeric ids are used as-is; any other id string (e.g. an ISBN) is mapped
// to a stable integer in order of first appearance, starting at kInternedIdBase.
inline constexpr std::int64_t kInternedIdBase = 1'000'000'000'000;

class IdInterner {
 public:
  std::int64_t intern(const std::string& raw);

 private:
  std::map<std::string, std::int64_t> ids_;
};

// Splits on a (possibly multi-character) delimiter and strips one pair of
// surrounding double quotes from each field.
std::vector<std::string> split_line(const std::string& line, const std::string& delimiter);

// Parses all three tables. Malformed lines are skipped and tallied; an
// unreadable file or an empty ratings table throws DataError.
RawTables load_tables(const FormatConfig& format);

// Keeps the latest-timestamp rating for each (user, item); later lines win
// ties. Output is ordered by (user, item).
std::vector<RatingRecord> deduplicate_ratings(std::vector<RatingRecord> records);

// Release year per item id; items without a parseable year are omitted.
std::map<std::int64_t, int> item_years(const RawTable& items, const FormatConfig& format);

std::optional<int> year_from_title(const std::string& title);

std::string age_bin(const std::string& raw_age);

// Builds vocabularies from the rows whose ids are in the given sets (all rows
// when a set is empty). Index 0 stays reserved for unknown labels.
ContentSchema build_schema(const RawTable& users, const RawTable& items,
                           const FormatConfig& format,
                           const std::vector<std::int64_t>& user_ids = {},
                           const std::vector<std::int64_t>& item_ids = {});

// Labels of one raw value after the field's transform; missing markers
// (empty, NULL, NA) are dropped.
std::vector<std::string> field_labels(const std::string& raw, const FieldConfig& field);

// Profile from one raw value per configured field. Unknown labels map to 0.
Profile make_profile(std::int64_t id, Side side, const std::vector<std::string>& raw_values,
                     const std::vector<FieldConfig>& fields, const ContentSchema& schema);

// Profiles for every row of a table, keyed by id.
std::map<std::int64_t, ProfileRef> build_profiles(const RawTable& table, Side side,
                                                  const ContentSchema& schema,
                                                  const FormatConfig& format);

// ---------------------------------------------------------------------------
// Partitioning

enum class Group { existing = 0, fresh = 1 };

struct CellKey {
  Group users = Group::existing;
  Group items = Group::existing;

  std::size_t index() const {
    return static_cast<std::size_t>(users) * 2 + static_cast<std::size_t>(items);
  }
  static CellKey from_index(std::size_t i) {
    return {static_cast<Group>(i / 2), static_cast<Group>(i % 2)};
  }
  // "existing_users__new_items" style name.
  std::string name() const;
};

inline constexpr std::size_t kCellCount = 4;

struct PartitionSpec {
  int existing_max_year = 1997;
  int new_min_year = 1998;
  double user_split_fraction = 0.8;
  std::uint64_t seed = 0;
  std::size_t min_history = 13;
  std::size_t max_history = 100;
  std::size_t query_size = 10;

  void validate() const;
};

struct ItemRating {
  std::int64_t item_id = 0;
  double rating = 0.0;

  friend bool operator==(const ItemRating&, const ItemRating&) = default;
};

struct EpisodeIds {
  std::int64_t user_id = 0;
  std::vector<ItemRating> support;
  std::vector<ItemRating> query;
};

struct Partition {
  std::vector<std::int64_t> existing_users;
  std::vector<std::int64_t> new_users;
  std::vector<std::int64_t> existing_items;
  std::vector<std::int64_t> new_items;
  std::array<std::vector<EpisodeIds>, kCellCount> cells;
  // Ratings routed to each cell before the history-length filter.
  std::array<std::size_t, kCellCount> routed_ratings{};
  std::size_t dropped_histories = 0;
  // Ratings of items whose year falls in neither group.
  std::size_t unrouted_ratings = 0;
};

// Randomly selects round(n * fraction) existing users from the sorted ids.
std::vector<std::int64_t> draw_existing_users(std::vector<std::int64_t> user_ids,
                                              double fraction, std::uint64_t seed);

// Picks `query_size` query items uniformly with a seeded shuffle; the rest
// become the support set. History length must be in [min, max].
std::pair<std::vector<ItemRating>, std::vector<ItemRating>> split_support_query(
    const std::vector<ItemRating>& history, std::uint64_t seed,
    std::size_t query_size = 10, std::size_t min_history = 13,
    std::size_t max_history = 100);

// Item years decide the item group (unassigned years are excluded); users
// are drawn at the configured fraction. Each rating lands in the cell of its
// user and item group; each cell then keeps users with a history length in
// [min_history, max_history] and splits them into support/query.
Partition partition(const std::vector<RatingRecord>& records,
                    const std::map<std::int64_t, int>& item_years,
                    const PartitionSpec& spec);

// ---------------------------------------------------------------------------
// Materialized dataset

struct ItemInfo {
  std::int64_t id = 0;
  std::string title;
  int year = 0;
  std::vector<std::string> genres;
};

struct PartitionedDataset {
  ContentSchema schema;
  std::array<std::vector<UserEpisode>, kCellCount> cells;
  std::map<std::int64_t, ProfileRef> users;
  std::map<std::int64_t, ProfileRef> items;
  std::map<std::int64_t, ItemInfo> item_info;
  std::vector<std::int64_t> existing_users;
  std::vector<std::int64_t> new_users;
  std::vector<std::int64_t> existing_items;
  std::vector<std::int64_t> new_items;

  const std::vector<UserEpisode>& cell(CellKey key) const { return cells[key.index()]; }
  const std::vector<UserEpisode>& training_cell() const {
    return cell({Group::existing, Group::existing});
  }

  // Digest over schema, group membership and every episode.
  std::uint64_t digest() const;
};

// Turns id-level episodes into profile-backed ones; users or items without a
// profile are dropped from the episodes that reference them.
PartitionedDataset assemble_dataset(const Partition& partition, ContentSchema schema,
                                    const std::map<std::int64_t, ProfileRef>& users,
                                    const std::map<std::int64_t, ProfileRef>& items,
                                    std::map<std::int64_t, ItemInfo> item_info = {});

struct PrepareSummary {
  LoadReport load;
  std::size_t ratings_after_dedup = 0;
  std::size_t items_without_year = 0;
  std::size_t dropped_histories = 0;
  std::array<std::size_t, kCellCount> routed_ratings{};
};

// load_tables -> dedup -> partition -> schema from existing users/items ->
// profiles -> assemble.
PartitionedDataset prepare_dataset(const FormatConfig& format, const PartitionSpec& spec,
                                   PrepareSummary* summary = nullptr);

// Directory layout: schema.json, users.jsonl, items.jsonl,
// cells/<cell name>.jsonl (one episode per line), provenance.json.
void write_dataset(const std::filesystem::path& dir, const PartitionedDataset& dataset,
                   const nlohmann::json& provenance);
PartitionedDataset read_dataset(const std::filesystem::path& dir);

}  // namespace melu
