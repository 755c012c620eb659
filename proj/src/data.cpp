#include "metapoi/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <tuple>

#include "metapoi/categories.hpp"
#include "metapoi/errors.hpp"

namespace metapoi {

namespace {

constexpr double kEarthRadiusKm = 6371.0;
constexpr std::int64_t kSecondsPerDay = 86400;

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r' || s.front() == '\n')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_fields(std::string_view line, char delim) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"' && cur.empty()) {
      quoted = true;
    } else if (ch == delim) {
      fields.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  fields.emplace_back(trim(cur));
  return fields;
}

bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

template <class Int>
bool parse_int(std::string_view s, Int& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::int64_t epoch_seconds(int y, unsigned mo, unsigned d, int hh, int mm, int ss) {
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{mo}, day{d}};
  if (!ymd.ok()) throw DataError("invalid calendar date");
  const auto days = sys_days{ymd}.time_since_epoch().count();
  if (hh < 0 || hh > 23 || mm < 0 || mm > 59 || ss < 0 || ss > 60) {
    throw DataError("invalid time of day");
  }
  return static_cast<std::int64_t>(days) * kSecondsPerDay + hh * 3600 + mm * 60 + ss;
}

// "+0000", "+05:30", "Z"; returns offset seconds east of UTC.
std::int64_t parse_zone(std::string_view z) {
  if (z.empty() || z == "Z" || z == "z") return 0;
  const int sign = z.front() == '-' ? -1 : 1;
  if (z.front() != '+' && z.front() != '-') throw DataError("bad zone designator");
  z.remove_prefix(1);
  std::string digits;
  for (char c : z) {
    if (c != ':') digits.push_back(c);
  }
  if (digits.size() != 4 && digits.size() != 2) throw DataError("bad zone designator");
  int hh = 0, mm = 0;
  if (!parse_int(std::string_view(digits).substr(0, 2), hh)) throw DataError("bad zone designator");
  if (digits.size() == 4 && !parse_int(std::string_view(digits).substr(2, 2), mm)) {
    throw DataError("bad zone designator");
  }
  return sign * (hh * 3600 + mm * 60);
}

int month_from_abbrev(std::string_view m) {
  static constexpr std::array<std::string_view, 12> names = {
      "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == m) return static_cast<int>(i) + 1;
  }
  throw DataError("bad month name '" + std::string(m) + "'");
}

int majority(const std::array<int, kNumCategories>& counts) {
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

}  // namespace

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kValidation:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "?";
}

Vocabulary Vocabulary::from_ids(std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  Vocabulary v;
  v.ids = std::move(ids);
  for (std::size_t i = 0; i < v.ids.size(); ++i) v.index.emplace(v.ids[i], static_cast<int>(i));
  return v;
}

int Vocabulary::at(const std::string& id) const {
  auto it = index.find(id);
  if (it == index.end()) throw DataError("unknown vocabulary entry '" + id + "'");
  return it->second;
}

std::span<const DaySequencePair> CityDataset::part(Split s) const {
  auto first = std::find(split.begin(), split.end(), s);
  auto last = std::find_if(first, split.end(), [s](Split t) { return t != s; });
  const auto b = static_cast<std::size_t>(first - split.begin());
  const auto e = static_cast<std::size_t>(last - split.begin());
  return std::span<const DaySequencePair>(sequences).subspan(b, e - b);
}

std::int64_t parse_timestamp(std::string_view text) {
  text = trim(text);
  if (text.empty()) throw DataError("empty timestamp");

  std::int64_t epoch = 0;
  if (parse_int(text, epoch)) return epoch;

  // Foursquare dump style: "Tue Apr 03 18:00:09 +0000 2012"
  if (text.size() >= 24 && std::isalpha(static_cast<unsigned char>(text[0]))) {
    std::istringstream in{std::string(text)};
    std::string wday, mon, clock, zone;
    int dd = 0, yyyy = 0;
    if (!(in >> wday >> mon >> dd >> clock >> zone >> yyyy)) {
      throw DataError("unparseable timestamp '" + std::string(text) + "'");
    }
    int hh = 0, mi = 0, ss = 0;
    if (clock.size() != 8 || !parse_int(std::string_view(clock).substr(0, 2), hh) ||
        !parse_int(std::string_view(clock).substr(3, 2), mi) ||
        !parse_int(std::string_view(clock).substr(6, 2), ss)) {
      throw DataError("unparseable timestamp '" + std::string(text) + "'");
    }
    return epoch_seconds(yyyy, static_cast<unsigned>(month_from_abbrev(mon)),
                         static_cast<unsigned>(dd), hh, mi, ss) -
           parse_zone(zone);
  }

  // ISO-8601: YYYY-MM-DD[T ]HH:MM[:SS[.fff]][zone]
  int y = 0, mo = 0, d = 0, hh = 0, mi = 0, ss = 0;
  if (text.size() < 10 || text[4] != '-' || text[7] != '-' || !parse_int(text.substr(0, 4), y) ||
      !parse_int(text.substr(5, 2), mo) || !parse_int(text.substr(8, 2), d)) {
    throw DataError("unparseable timestamp '" + std::string(text) + "'");
  }
  std::string_view rest = text.substr(10);
  if (!rest.empty()) {
    if (rest.front() != 'T' && rest.front() != ' ') {
      throw DataError("unparseable timestamp '" + std::string(text) + "'");
    }
    rest.remove_prefix(1);
    if (rest.size() < 5 || rest[2] != ':' || !parse_int(rest.substr(0, 2), hh) ||
        !parse_int(rest.substr(3, 2), mi)) {
      throw DataError("unparseable timestamp '" + std::string(text) + "'");
    }
    rest.remove_prefix(5);
    if (!rest.empty() && rest.front() == ':') {
      if (rest.size() < 3 || !parse_int(rest.substr(1, 2), ss)) {
        throw DataError("unparseable timestamp '" + std::string(text) + "'");
      }
      rest.remove_prefix(3);
      if (!rest.empty() && rest.front() == '.') {
        rest.remove_prefix(1);
        while (!rest.empty() && std::isdigit(static_cast<unsigned char>(rest.front()))) rest.remove_prefix(1);
      }
    }
  }
  return epoch_seconds(y, static_cast<unsigned>(mo), static_cast<unsigned>(d), hh, mi, ss) -
         parse_zone(rest);
}

ParseResult parse_checkins_text(std::string_view text, const CsvSchema& schema) {
  ParseResult result;
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    line = text.substr(pos, end - pos);
    pos = end + 1;
    return true;
  };

  std::string_view header;
  if (!next_line(header)) throw DataError("empty check-in file");
  const char delim = schema.delimiter != '\0'
                         ? schema.delimiter
                         : (header.find('\t') != std::string_view::npos ? '\t' : ',');
  const auto columns = split_fields(header, delim);
  auto column = [&](const std::string& name, bool required) -> int {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) {
      if (required) throw DataError("missing column '" + name + "' in header");
      return -1;
    }
    return static_cast<int>(it - columns.begin());
  };
  const int c_user = column(schema.user, true);
  const int c_poi = column(schema.poi, true);
  const int c_cat = column(schema.category, true);
  const int c_lat = column(schema.latitude, true);
  const int c_lon = column(schema.longitude, true);
  const int c_ts = column(schema.timestamp, true);
  const int c_tz = schema.tz_offset.empty() ? -1 : column(schema.tz_offset, false);
  const int needed = std::max({c_user, c_poi, c_cat, c_lat, c_lon, c_ts, c_tz}) + 1;

  std::string_view line;
  std::size_t line_no = 1;
  while (next_line(line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_fields(line, delim);
    auto reject = [&](const std::string& why) {
      result.diagnostics.push_back("line " + std::to_string(line_no) + ": " + why);
    };
    if (static_cast<int>(f.size()) < needed) {
      reject("expected at least " + std::to_string(needed) + " fields, got " + std::to_string(f.size()));
      continue;
    }
    CheckinRecord r;
    r.user_id = f[c_user];
    r.poi_id = f[c_poi];
    if (r.user_id.empty() || r.poi_id.empty()) {
      reject("empty user or POI id");
      continue;
    }
    const auto cat = category_index(f[c_cat], schema.category_aliases);
    if (!cat) {
      if (schema.skip_unknown_categories) {
        reject("unknown category '" + f[c_cat] + "'");
        continue;
      }
      throw DataError("unknown category '" + f[c_cat] + "' at line " + std::to_string(line_no));
    }
    r.category_id = *cat;
    if (!parse_double(f[c_lat], r.coordinate.latitude) ||
        !parse_double(f[c_lon], r.coordinate.longitude)) {
      reject("non-numeric coordinate");
      continue;
    }
    if (r.coordinate.latitude < -90.0 || r.coordinate.latitude > 90.0) {
      reject("latitude " + f[c_lat] + " outside [-90, 90]");
      continue;
    }
    if (r.coordinate.longitude < -180.0 || r.coordinate.longitude > 180.0) {
      reject("longitude " + f[c_lon] + " outside [-180, 180]");
      continue;
    }
    try {
      r.timestamp = parse_timestamp(f[c_ts]);
    } catch (const DataError& e) {
      reject(e.what());
      continue;
    }
    if (c_tz >= 0 && !f[c_tz].empty() && !parse_int(f[c_tz], r.tz_offset_minutes)) {
      reject("non-integer tz offset '" + f[c_tz] + "'");
      continue;
    }
    result.records.push_back(std::move(r));
  }
  return result;
}

ParseResult parse_checkins(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open check-in file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkins_text(buf.str(), schema);
}

std::vector<CheckinRecord> filter_sparse(std::vector<CheckinRecord> records, int min_user,
                                         int min_poi) {
  if (min_user < 1 || min_poi < 1) throw ConfigError("sparsity thresholds must be >= 1");
  while (true) {
    std::unordered_map<std::string, int> user_count, poi_count;
    for (const auto& r : records) {
      ++user_count[r.user_id];
      ++poi_count[r.poi_id];
    }
    const auto before = records.size();
    std::erase_if(records, [&](const CheckinRecord& r) {
      return user_count[r.user_id] < min_user || poi_count[r.poi_id] < min_poi;
    });
    if (records.size() == before) return records;
  }
}

double haversine_km(Coordinate a, Coordinate b) {
  constexpr double rad = std::numbers::pi / 180.0;
  const double phi1 = a.latitude * rad, phi2 = b.latitude * rad;
  const double dphi = (b.latitude - a.latitude) * rad;
  const double dlambda = (b.longitude - a.longitude) * rad;
  const double s1 = std::sin(dphi / 2), s2 = std::sin(dlambda / 2);
  // Symmetric in (a, b): squares and the cos product commute.
  const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

std::int64_t local_day(std::int64_t timestamp, int tz_offset_minutes) {
  return floor_div(timestamp + std::int64_t{tz_offset_minutes} * 60, kSecondsPerDay);
}

int discretize_time(std::int64_t timestamp, int tz_offset_minutes) {
  const std::int64_t local = timestamp + std::int64_t{tz_offset_minutes} * 60;
  const std::int64_t day = floor_div(local, kSecondsPerDay);
  const auto hour = static_cast<int>((local - day * kSecondsPerDay) / 3600);
  const auto weekday = static_cast<int>(((day + 4) % 7 + 7) % 7);  // 0 = Sunday
  const bool weekend = weekday == 0 || weekday == 6;
  return hour + (weekend ? 24 : 0);
}

int discretize_distance(double km, bool first_step) {
  if (first_step) return 0;
  if (!(km >= 0.0)) throw std::invalid_argument("negative or NaN distance");
  if (km <= 0.5) return 1;
  if (km <= 1.0) return 2;
  if (km <= 2.0) return 3;
  if (km <= 5.0) return 4;
  if (km <= 10.0) return 5;
  if (km <= 20.0) return 6;
  return 7;
}

Vocabulary build_user_vocab(std::span<const CheckinRecord> records) {
  std::vector<std::string> ids;
  ids.reserve(records.size());
  for (const auto& r : records) ids.push_back(r.user_id);
  return Vocabulary::from_ids(std::move(ids));
}

Vocabulary build_poi_vocab(std::span<const CheckinRecord> records) {
  std::vector<std::string> ids;
  ids.reserve(records.size());
  for (const auto& r : records) ids.push_back(r.poi_id);
  return Vocabulary::from_ids(std::move(ids));
}

std::vector<DaySequencePair> build_day_sequences(std::span<const CheckinRecord> records,
                                                 const Vocabulary& pois) {
  std::map<std::pair<std::string, std::int64_t>, std::vector<const CheckinRecord*>> groups;
  for (const auto& r : records) {
    groups[{r.user_id, local_day(r.timestamp, r.tz_offset_minutes)}].push_back(&r);
  }

  std::vector<DaySequencePair> out;
  for (auto& [key, group] : groups) {
    if (group.size() < 2) continue;
    std::sort(group.begin(), group.end(), [](const CheckinRecord* a, const CheckinRecord* b) {
      return std::tie(a->timestamp, a->poi_id, a->category_id) <
             std::tie(b->timestamp, b->poi_id, b->category_id);
    });
    DaySequencePair pair;
    pair.user_id = key.first;
    pair.date = key.second;
    pair.first_timestamp = group.front()->timestamp;
    for (std::size_t k = 0; k < group.size(); ++k) {
      const CheckinRecord& r = *group[k];
      const int slot = discretize_time(r.timestamp, r.tz_offset_minutes);
      const int bucket =
          k == 0 ? discretize_distance(0.0, true)
                 : discretize_distance(haversine_km(group[k - 1]->coordinate, r.coordinate));
      pair.category_seq.push_back({r.category_id, slot});
      pair.poi_seq.push_back({pois.at(r.poi_id), bucket, slot});
    }
    out.push_back(std::move(pair));
  }
  std::sort(out.begin(), out.end(), [](const DaySequencePair& a, const DaySequencePair& b) {
    return std::tie(a.date, a.first_timestamp, a.user_id) <
           std::tie(b.date, b.first_timestamp, b.user_id);
  });
  return out;
}

std::vector<Split> chronological_split(std::vector<DaySequencePair>& pairs, double train_ratio,
                                       double val_ratio) {
  const std::size_t n = pairs.size();
  if (n < 3) throw DataError("need at least 3 day sequences to split, got " + std::to_string(n));
  std::stable_sort(pairs.begin(), pairs.end(), [](const DaySequencePair& a, const DaySequencePair& b) {
    return std::tie(a.date, a.first_timestamp, a.user_id) <
           std::tie(b.date, b.first_timestamp, b.user_id);
  });
  const auto n_train = static_cast<std::size_t>(std::floor(train_ratio * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::floor(val_ratio * static_cast<double>(n)));
  std::vector<Split> tags(n, Split::kTest);
  for (std::size_t i = 0; i < n_train; ++i) tags[i] = Split::kTrain;
  for (std::size_t i = n_train; i < n_train + n_val && i < n; ++i) tags[i] = Split::kValidation;
  return tags;
}

CityStats compute_stats(std::span<const CheckinRecord> records) {
  CityStats s;
  s.checkins = records.size();
  s.users = build_user_vocab(records).ids.size();
  s.pois = build_poi_vocab(records).ids.size();
  if (s.users > 0 && s.pois > 0) {
    s.density = static_cast<double>(s.checkins) / (static_cast<double>(s.users) * static_cast<double>(s.pois));
  }
  return s;
}

CityDataset build_city_dataset(std::string city_id, std::vector<CheckinRecord> records, int min_user,
                               int min_poi) {
  records = filter_sparse(std::move(records), min_user, min_poi);
  if (records.empty()) throw DataError("city '" + city_id + "' is empty after sparsity filtering");

  CityDataset city;
  city.city_id = std::move(city_id);
  city.users = build_user_vocab(records);
  city.pois = build_poi_vocab(records);
  city.stats = compute_stats(records);

  std::vector<std::array<int, kNumCategories>> votes(city.pois.ids.size());
  std::vector<std::array<double, 3>> coord_sum(city.pois.ids.size());
  for (const auto& r : records) {
    const auto p = static_cast<std::size_t>(city.pois.at(r.poi_id));
    ++votes[p][static_cast<std::size_t>(r.category_id)];
    coord_sum[p][0] += r.coordinate.latitude;
    coord_sum[p][1] += r.coordinate.longitude;
    coord_sum[p][2] += 1.0;
  }
  for (std::size_t p = 0; p < votes.size(); ++p) {
    city.poi_category.push_back(majority(votes[p]));
    city.poi_coordinate.push_back({coord_sum[p][0] / coord_sum[p][2], coord_sum[p][1] / coord_sum[p][2]});
  }

  city.sequences = build_day_sequences(records, city.pois);
  city.split = chronological_split(city.sequences);
  return city;
}

void save_dataset(const CityDataset& city, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / name).string());
    out.precision(17);
    return out;
  };
  {
    auto out = open("city.txt");
    out << city.city_id << '\n'
        << city.stats.users << ' ' << city.stats.pois << ' ' << city.stats.checkins << '\n';
  }
  {
    auto out = open("users.txt");
    for (const auto& u : city.users.ids) out << u << '\n';
  }
  {
    auto out = open("pois.txt");
    for (const auto& p : city.pois.ids) out << p << '\n';
  }
  {
    auto out = open("poi_meta.tsv");
    for (std::size_t p = 0; p < city.poi_category.size(); ++p) {
      out << category_code(city.poi_category[p]) << '\t' << city.poi_coordinate[p].latitude << '\t'
          << city.poi_coordinate[p].longitude << '\n';
    }
  }
  {
    // user \t date \t first_ts \t c:p:d:t ...
    auto out = open("sequences.tsv");
    for (const auto& s : city.sequences) {
      out << s.user_id << '\t' << s.date << '\t' << s.first_timestamp << '\t';
      for (std::size_t k = 0; k < s.size(); ++k) {
        if (k) out << ' ';
        out << s.category_seq[k].category_id << ':' << s.poi_seq[k].poi_id << ':'
            << s.poi_seq[k].distance_bucket << ':' << s.poi_seq[k].time_slot;
      }
      out << '\n';
    }
  }
  {
    auto out = open("split.txt");
    for (Split t : city.split) out << split_name(t) << '\n';
  }
}

CityDataset load_dataset(const std::filesystem::path& dir) {
  auto open = [&](const char* name) {
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) throw DataError("cannot read " + (dir / name).string());
    return in;
  };
  auto read_lines = [&](const char* name) {
    auto in = open(name);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
      if (!line.empty()) lines.push_back(line);
    }
    return lines;
  };

  CityDataset city;
  {
    auto in = open("city.txt");
    std::getline(in, city.city_id);
    in >> city.stats.users >> city.stats.pois >> city.stats.checkins;
    if (city.stats.users && city.stats.pois) {
      city.stats.density = static_cast<double>(city.stats.checkins) /
                           (static_cast<double>(city.stats.users) * static_cast<double>(city.stats.pois));
    }
  }
  city.users = Vocabulary::from_ids(read_lines("users.txt"));
  city.pois = Vocabulary::from_ids(read_lines("pois.txt"));
  for (const auto& line : read_lines("poi_meta.tsv")) {
    const auto f = split_fields(line, '\t');
    const auto cat = f.size() == 3 ? category_index(f[0]) : std::nullopt;
    Coordinate g;
    if (!cat || !parse_double(f[1], g.latitude) || !parse_double(f[2], g.longitude)) {
      throw DataError("bad poi_meta line '" + line + "'");
    }
    city.poi_category.push_back(*cat);
    city.poi_coordinate.push_back(g);
  }
  if (city.poi_category.size() != city.pois.ids.size()) throw DataError("poi_meta/pois size mismatch");

  for (const auto& line : read_lines("sequences.tsv")) {
    const auto f = split_fields(line, '\t');
    DaySequencePair s;
    if (f.size() != 4 || !parse_int(f[1], s.date) || !parse_int(f[2], s.first_timestamp)) {
      throw DataError("bad sequence line '" + line + "'");
    }
    s.user_id = f[0];
    std::istringstream steps(f[3]);
    for (std::string tok; steps >> tok;) {
      int c = 0, p = 0, d = 0, t = 0;
      char sep[3];
      std::istringstream ts(tok);
      if (!(ts >> c >> sep[0] >> p >> sep[1] >> d >> sep[2] >> t) || c < 0 || c >= kNumCategories ||
          p < 0 || p >= city.pois.size() || d < 0 || d >= kNumDistanceBuckets || t < 0 ||
          t >= kNumTimeSlots) {
        throw DataError("bad step '" + tok + "'");
      }
      s.category_seq.push_back({c, t});
      s.poi_seq.push_back({p, d, t});
    }
    if (s.size() < 2) throw DataError("sequence shorter than 2 steps");
    city.sequences.push_back(std::move(s));
  }
  for (const auto& line : read_lines("split.txt")) {
    if (line == "train") city.split.push_back(Split::kTrain);
    else if (line == "val") city.split.push_back(Split::kValidation);
    else if (line == "test") city.split.push_back(Split::kTest);
    else throw DataError("bad split tag '" + line + "'");
  }
  if (city.split.size() != city.sequences.size()) throw DataError("split manifest size mismatch");
  return city;
}

}  // namespace metapoi
