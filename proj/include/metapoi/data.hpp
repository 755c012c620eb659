#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace metapoi {

struct Coordinate {
  double latitude = 0.0;
  double longitude = 0.0;
};

/// One user visit. Timestamps are UTC seconds; the offset shifts them to
/// local wall-clock time for day grouping and time slots.
struct CheckinRecord {
  std::string user_id;
  std::string poi_id;
  int category_id = 0;
  Coordinate coordinate;
  std::int64_t timestamp = 0;
  int tz_offset_minutes = 0;
};

struct CategoryStep {
  int category_id = 0;
  int time_slot = 0;
  bool operator==(const CategoryStep&) const = default;
};

struct PoiStep {
  int poi_id = 0;
  int distance_bucket = 0;
  int time_slot = 0;
  bool operator==(const PoiStep&) const = default;
};

/// One user's check-ins on one local calendar day, seen at category level and
/// at POI level. Both sequences have the same length (>= 2).
struct DaySequencePair {
  std::string user_id;
  std::int64_t date = 0;  // local days since 1970-01-01
  std::int64_t first_timestamp = 0;
  std::vector<CategoryStep> category_seq;
  std::vector<PoiStep> poi_seq;

  std::size_t size() const { return category_seq.size(); }
  bool operator==(const DaySequencePair&) const = default;
};

enum class Split { kTrain, kValidation, kTest };
std::string_view split_name(Split s);

/// Sorted entity ids; the position in `ids` is the index.
struct Vocabulary {
  std::vector<std::string> ids;
  std::unordered_map<std::string, int> index;

  static Vocabulary from_ids(std::vector<std::string> ids);
  int size() const { return static_cast<int>(ids.size()); }
  int at(const std::string& id) const;
};

struct CityStats {
  std::size_t users = 0;
  std::size_t pois = 0;
  std::size_t checkins = 0;
  double density = 0.0;  // checkins / (users * pois)
};

/// A city's filtered, sequenced, and split data. Sequences are stored in
/// chronological order, so each split is a contiguous range.
struct CityDataset {
  std::string city_id;
  Vocabulary users;
  Vocabulary pois;
  std::vector<int> poi_category;  // majority category per POI
  std::vector<Coordinate> poi_coordinate;
  std::vector<DaySequencePair> sequences;
  std::vector<Split> split;
  CityStats stats;

  std::span<const DaySequencePair> part(Split s) const;
  std::span<const DaySequencePair> train() const { return part(Split::kTrain); }
  std::span<const DaySequencePair> validation() const { return part(Split::kValidation); }
  std::span<const DaySequencePair> test() const { return part(Split::kTest); }
  int num_pois() const { return pois.size(); }
};

/// Column mapping for delimited check-in logs.
struct CsvSchema {
  std::string user = "user_id";
  std::string poi = "poi_id";
  std::string category = "category";
  std::string latitude = "latitude";
  std::string longitude = "longitude";
  std::string timestamp = "timestamp";
  std::string tz_offset = "tz_offset_minutes";  // optional column
  char delimiter = '\0';                          // '\0' = auto-detect
  std::map<std::string, int> category_aliases;
  bool skip_unknown_categories = false;
};

struct ParseResult {
  std::vector<CheckinRecord> records;
  std::vector<std::string> diagnostics;
};

ParseResult parse_checkins(const std::filesystem::path& path, const CsvSchema& schema = {});
ParseResult parse_checkins_text(std::string_view text, const CsvSchema& schema = {});

/// Epoch seconds, ISO-8601, or the "Tue Apr 03 18:00:09 +0000 2012" dump format.
std::int64_t parse_timestamp(std::string_view text);

std::vector<CheckinRecord> filter_sparse(std::vector<CheckinRecord> records, int min_user = 5,
                                         int min_poi = 3);

double haversine_km(Coordinate a, Coordinate b);

/// hour-of-day + 24 on Saturday/Sunday, in local time.
int discretize_time(std::int64_t timestamp, int tz_offset_minutes = 0);

/// Bucket 0 is reserved for the first step of a day.
int discretize_distance(double km, bool first_step = false);

std::int64_t local_day(std::int64_t timestamp, int tz_offset_minutes);

Vocabulary build_user_vocab(std::span<const CheckinRecord> records);
Vocabulary build_poi_vocab(std::span<const CheckinRecord> records);

std::vector<DaySequencePair> build_day_sequences(std::span<const CheckinRecord> records,
                                                 const Vocabulary& pois);

/// Sorts by (date, first timestamp, user) and tags floor(0.8n) / floor(0.1n) /
/// remainder. Throws DataError when n < 3.
std::vector<Split> chronological_split(std::vector<DaySequencePair>& pairs,
                                       double train_ratio = 0.8, double val_ratio = 0.1);

CityStats compute_stats(std::span<const CheckinRecord> records);

/// parse-free part of ingestion: filter, vocabularies, sequences, split.
CityDataset build_city_dataset(std::string city_id, std::vector<CheckinRecord> records,
                               int min_user = 5, int min_poi = 3);

void save_dataset(const CityDataset& city, const std::filesystem::path& dir);
CityDataset load_dataset(const std::filesystem::path& dir);

}  // namespace metapoi
