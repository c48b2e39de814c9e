#include "energen/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "energen/blob.hpp"
#include "energen/rng.hpp"

namespace energen {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr int kDatasetSchemaVersion = 1;

const char* kMeterTypeNames[kNumMeterTypes] = {"electricity", "chilledwater", "gas", "hotwater",
                                               "steam"};
const char* kBuildingTypeNames[kNumBuildingTypes] = {"Office", "Education", "Public services",
                                                     "Entertainment", "Lodging/residential"};
}  // namespace

const char* to_string(MeterType t) { return kMeterTypeNames[static_cast<int>(t)]; }
const char* to_string(BuildingType t) { return kBuildingTypeNames[static_cast<int>(t)]; }

MeterType meter_type_from_string(const std::string& s) {
    for (int i = 0; i < kNumMeterTypes; ++i)
        if (s == kMeterTypeNames[i]) return static_cast<MeterType>(i);
    throw parse_error("unknown meter type: '" + s + "'");
}

BuildingType building_type_from_string(const std::string& s) {
    for (int i = 0; i < kNumBuildingTypes; ++i)
        if (s == kBuildingTypeNames[i]) return static_cast<BuildingType>(i);
    throw parse_error("unknown building type: '" + s + "'");
}

size_t MeterSeries::missing_count() const {
    size_t n = 0;
    for (uint8_t m : missing_mask) n += m != 0;
    return n;
}

double MeterSeries::missing_fraction() const {
    if (missing_mask.empty()) return 0.0;
    return static_cast<double>(missing_count()) / static_cast<double>(missing_mask.size());
}

std::vector<int> ProcessedDataset::indices_of(SplitLabel label) const {
    std::vector<int> out;
    for (int i = 0; i < count(); ++i)
        if (split_labels[static_cast<size_t>(i)] == label) out.push_back(i);
    return out;
}

std::optional<int> ProcessedDataset::index_of_meter(const std::string& id) const {
    for (int i = 0; i < count(); ++i)
        if (meter_ids[static_cast<size_t>(i)] == id) return i;
    return std::nullopt;
}

ConditionVector ProcessedDataset::condition(int i) const {
    ConditionVector c;
    for (int j = 0; j < kConditionDims; ++j) c.values[static_cast<size_t>(j)] = conditions.at(i, j);
    return c;
}

void ProcessedDataset::check_consistent() const {
    size_t n = static_cast<size_t>(count());
    if (conditions.ndim() != 2 || static_cast<size_t>(conditions.dim(0)) != n ||
        conditions.dim(1) != kConditionDims)
        throw format_error("dataset: conditions tensor shape disagrees with image count");
    if (!images.empty() &&
        (images.ndim() != 3 || images.dim(1) != kImageWeeks || images.dim(2) != kImageHoursPerWeek))
        throw format_error("dataset: images tensor is not [N,52,168]");
    if (meter_ids.size() != n || split_labels.size() != n || norm_min.size() != n ||
        norm_max.size() != n || years.size() != n || meter_types.size() != n ||
        building_types.size() != n)
        throw format_error("dataset: per-meter field counts disagree with image count");
}

int hours_in_year(int year) {
    bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
    return leap ? 8784 : 8760;
}

namespace {

int day_of_year(int year, int month, int day) {
    static const int cum[12] = {0, 31, 59, 90, 120, 151, 181, 212, 243, 273, 304, 334};
    bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
    int d = cum[month - 1] + day;
    if (leap && month > 2) d += 1;
    return d;
}

int days_in_month(int year, int month) {
    static const int len[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
    if (month == 2 && leap) return 29;
    return len[month - 1];
}

bool all_digits(const std::string& s, size_t from, size_t to) {
    for (size_t i = from; i < to; ++i)
        if (s[i] < '0' || s[i] > '9') return false;
    return true;
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    size_t start = 0;
    while (true) {
        size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            cells.push_back(trim(line.substr(start)));
            break;
        }
        cells.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
    return cells;
}

// Empty or non-numeric (including "NaN") cells count as missing.
bool parse_reading(const std::string& cell, double* out) {
    if (cell.empty()) return false;
    const char* begin = cell.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end != begin + cell.size()) return false;
    if (!std::isfinite(v)) return false;
    *out = v;
    return true;
}

struct SeriesKey {
    std::string meter_id;
    int year;
    bool operator<(const SeriesKey& o) const {
        if (meter_id != o.meter_id) return meter_id < o.meter_id;
        return year < o.year;
    }
};

class SeriesBuilder {
  public:
    void add(const std::string& meter_id, int year, int hour, double value, bool present,
             size_t line_no) {
        auto key = std::make_pair(meter_id, year);
        auto it = series_.find(key);
        if (it == series_.end()) {
            MeterSeries s;
            s.meter_id = meter_id;
            s.year = year;
            int hours = hours_in_year(year);
            s.readings.assign(static_cast<size_t>(hours), kNaN);
            s.missing_mask.assign(static_cast<size_t>(hours), 1);
            order_.push_back(key);
            it = series_.emplace(key, std::move(s)).first;
        }
        MeterSeries& s = it->second;
        auto h = static_cast<size_t>(hour);
        if (!s.missing_mask[h] || seen_[key].count(hour))
            throw parse_error("line " + std::to_string(line_no) + ": duplicate reading for meter '" +
                              meter_id + "'");
        seen_[key].insert(hour);
        if (present) {
            s.readings[h] = value;
            s.missing_mask[h] = 0;
        }
    }

    std::vector<MeterSeries> take() {
        std::vector<MeterSeries> out;
        out.reserve(order_.size());
        // meter appearance order, then year ascending
        std::vector<std::pair<std::string, int>> keys = order_;
        std::map<std::string, size_t> first_seen;
        for (size_t i = 0; i < keys.size(); ++i)
            if (!first_seen.count(keys[i].first)) first_seen[keys[i].first] = i;
        std::stable_sort(keys.begin(), keys.end(), [&](const auto& a, const auto& b) {
            if (a.first != b.first) return first_seen[a.first] < first_seen[b.first];
            return a.second < b.second;
        });
        for (const auto& k : keys) out.push_back(std::move(series_[k]));
        return out;
    }

  private:
    std::map<std::pair<std::string, int>, MeterSeries> series_;
    std::map<std::pair<std::string, int>, std::unordered_set<int>> seen_;
    std::vector<std::pair<std::string, int>> order_;
};

}  // namespace

std::pair<int, int> parse_hour_timestamp(const std::string& ts) {
    // YYYY-MM-DD HH:MM[:SS], 'T' also accepted as the date/time separator
    const std::string& s = ts;
    if (s.size() != 16 && s.size() != 19) throw parse_error("malformed timestamp '" + s + "'");
    bool ok = all_digits(s, 0, 4) && s[4] == '-' && all_digits(s, 5, 7) && s[7] == '-' &&
              all_digits(s, 8, 10) && (s[10] == ' ' || s[10] == 'T') && all_digits(s, 11, 13) &&
              s[13] == ':' && all_digits(s, 14, 16);
    if (ok && s.size() == 19) ok = s[16] == ':' && all_digits(s, 17, 19);
    if (!ok) throw parse_error("malformed timestamp '" + s + "'");

    int year = std::stoi(s.substr(0, 4));
    int month = std::stoi(s.substr(5, 2));
    int day = std::stoi(s.substr(8, 2));
    int hour = std::stoi(s.substr(11, 2));
    int minute = std::stoi(s.substr(14, 2));
    int second = s.size() == 19 ? std::stoi(s.substr(17, 2)) : 0;

    if (month < 1 || month > 12 || day < 1 || day > days_in_month(year, month) || hour > 23)
        throw parse_error("malformed timestamp '" + s + "'");
    if (minute != 0 || second != 0)
        throw parse_error("timestamp '" + s + "' is not on the hourly grid");

    return {year, (day_of_year(year, month, day) - 1) * 24 + hour};
}

std::vector<MeterSeries> load_meter_csv(const std::string& path, CsvSchema schema) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open meter CSV: " + path);

    std::string line;
    if (!std::getline(is, line)) throw format_error("empty meter CSV: " + path);
    std::vector<std::string> header = split_csv_line(line);

    SeriesBuilder builder;
    size_t line_no = 1;

    auto checked_timestamp = [&](const std::string& cell) {
        try {
            auto [year, hour] = parse_hour_timestamp(cell);
            if (year != 2016 && year != 2017)
                throw parse_error("unsupported year " + std::to_string(year));
            return std::make_pair(year, hour);
        } catch (const Error& e) {
            throw parse_error("line " + std::to_string(line_no) + ": " + e.what());
        }
    };

    if (schema == CsvSchema::wide) {
        if (header.size() < 2 || header[0] != "timestamp")
            throw format_error(path + ": wide schema needs header 'timestamp,<meter_id>,...'");
        std::vector<std::string> meter_ids(header.begin() + 1, header.end());
        while (std::getline(is, line)) {
            ++line_no;
            if (trim(line).empty()) continue;
            std::vector<std::string> cells = split_csv_line(line);
            if (cells.size() != header.size())
                throw format_error("line " + std::to_string(line_no) + ": expected " +
                                   std::to_string(header.size()) + " cells, got " +
                                   std::to_string(cells.size()));
            auto [year, hour] = checked_timestamp(cells[0]);
            for (size_t c = 0; c < meter_ids.size(); ++c) {
                double v = 0.0;
                bool present = parse_reading(cells[c + 1], &v);
                builder.add(meter_ids[c], year, hour, v, present, line_no);
            }
        }
    } else {
        if (header.size() != 3 || header[0] != "meter_id" || header[1] != "timestamp" ||
            header[2] != "reading")
            throw format_error(path + ": long schema needs header 'meter_id,timestamp,reading'");
        while (std::getline(is, line)) {
            ++line_no;
            if (trim(line).empty()) continue;
            std::vector<std::string> cells = split_csv_line(line);
            if (cells.size() != 3)
                throw format_error("line " + std::to_string(line_no) + ": expected 3 cells");
            auto [year, hour] = checked_timestamp(cells[1]);
            double v = 0.0;
            bool present = parse_reading(cells[2], &v);
            builder.add(cells[0], year, hour, v, present, line_no);
        }
    }
    return builder.take();
}

std::vector<MeterMetadata> load_metadata_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open metadata CSV: " + path);

    std::string line;
    if (!std::getline(is, line)) throw format_error("empty metadata CSV: " + path);
    std::vector<std::string> header = split_csv_line(line);
    const std::vector<std::string> expected = {"meter_id", "building_id", "meter_type",
                                              "building_type", "lat", "lng"};
    if (header != expected)
        throw format_error(path + ": metadata header must be 'meter_id,building_id,meter_type," +
                           "building_type,lat,lng'");

    std::vector<MeterMetadata> out;
    std::unordered_set<std::string> seen;
    size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != 6)
            throw format_error("line " + std::to_string(line_no) + ": expected 6 cells");
        MeterMetadata m;
        m.meter_id = cells[0];
        m.building_id = cells[1];
        try {
            m.meter_type = meter_type_from_string(cells[2]);
            m.building_type = building_type_from_string(cells[3]);
        } catch (const Error& e) {
            throw parse_error("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!parse_reading(cells[4], &m.latitude) || !parse_reading(cells[5], &m.longitude))
            throw parse_error("line " + std::to_string(line_no) + ": malformed lat/lng");
        if (m.latitude < -90.0 || m.latitude > 90.0 || m.longitude < -180.0 || m.longitude > 180.0)
            throw parse_error("line " + std::to_string(line_no) + ": lat/lng out of range");
        if (!seen.insert(m.meter_id).second)
            throw parse_error("line " + std::to_string(line_no) + ": duplicate metadata for '" +
                              m.meter_id + "'");
        out.push_back(std::move(m));
    }
    return out;
}

namespace {

// Linear interpolation between order statistics, q in [0,1].
double quantile_sorted(const std::vector<double>& sorted, double q) {
    double pos = q * static_cast<double>(sorted.size() - 1);
    size_t lo = static_cast<size_t>(std::floor(pos));
    size_t hi = static_cast<size_t>(std::ceil(pos));
    double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

MeterSeries clean_series(const MeterSeries& s, double iqr_multiplier) {
    std::vector<double> present;
    present.reserve(s.readings.size());
    for (size_t i = 0; i < s.readings.size(); ++i)
        if (!s.missing_mask[i]) present.push_back(s.readings[i]);

    if (present.empty()) throw data_error("unrecoverable series '" + s.meter_id + "': all missing");
    if (present.size() < 4)
        throw data_error("unrecoverable series '" + s.meter_id +
                         "': fewer than 4 non-missing points");

    std::sort(present.begin(), present.end());
    double q1 = quantile_sorted(present, 0.25);
    double q3 = quantile_sorted(present, 0.75);
    double iqr = q3 - q1;
    double lo = q1 - iqr_multiplier * iqr;
    double hi = q3 + iqr_multiplier * iqr;

    MeterSeries out = s;
    std::vector<uint8_t> gap = s.missing_mask;
    for (size_t i = 0; i < out.readings.size(); ++i)
        if (!gap[i] && (out.readings[i] < lo || out.readings[i] > hi)) gap[i] = 1;

    // forward fill, then backward fill for leading gaps
    double carry = kNaN;
    bool have_carry = false;
    for (size_t i = 0; i < out.readings.size(); ++i) {
        if (!gap[i]) {
            carry = out.readings[i];
            have_carry = true;
        } else if (have_carry) {
            out.readings[i] = carry;
            gap[i] = 0;
        }
    }
    double back = kNaN;
    for (size_t i = out.readings.size(); i-- > 0;) {
        if (!gap[i])
            back = out.readings[i];
        else {
            out.readings[i] = back;
            gap[i] = 0;
        }
    }

    out.missing_mask.assign(out.readings.size(), 0);
    out.cleaned = true;
    return out;
}

std::vector<MeterSeries> filter_missing(const std::vector<MeterSeries>& series,
                                        double max_missing_frac) {
    std::vector<MeterSeries> out;
    for (const auto& s : series) {
        if (s.cleaned)
            throw contract_error("filter_missing: series '" + s.meter_id +
                                 "' was already filled; the raw mask is gone");
        if (s.missing_fraction() <= max_missing_frac) out.push_back(s);
    }
    return out;
}

NormalizedSeries normalize(const MeterSeries& s) {
    if (s.missing_count() != 0)
        throw contract_error("normalize: series '" + s.meter_id + "' still has missing values");
    NormalizedSeries out;
    double mn = s.readings[0], mx = s.readings[0];
    for (double v : s.readings) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    out.norm_min = mn;
    out.norm_max = mx;
    out.values.resize(s.readings.size());
    if (mn == mx) {
        out.constant = true;
        std::fill(out.values.begin(), out.values.end(), 0.0f);
        return out;
    }
    double scale = 2.0 / (mx - mn);
    for (size_t i = 0; i < s.readings.size(); ++i)
        out.values[i] = static_cast<float>((s.readings[i] - mn) * scale - 1.0);
    return out;
}

std::vector<double> denormalize(const std::vector<float>& values, double norm_min,
                                double norm_max) {
    std::vector<double> out(values.size());
    double half_range = (norm_max - norm_min) / 2.0;
    for (size_t i = 0; i < values.size(); ++i)
        out[i] = (static_cast<double>(values[i]) + 1.0) * half_range + norm_min;
    return out;
}

TensorF reshape_to_image(const std::vector<float>& normalized) {
    if (normalized.size() < static_cast<size_t>(kImageHours))
        throw data_error("insufficient data: need " + std::to_string(kImageHours) +
                         " hours, got " + std::to_string(normalized.size()));
    TensorF grid({kImageWeeks, kImageHoursPerWeek});
    std::copy(normalized.begin(), normalized.begin() + kImageHours, grid.data());
    return grid;
}

std::vector<float> flatten_image(const TensorF& grid) {
    return std::vector<float>(grid.data(), grid.data() + grid.size());
}

ConditionVector encode_conditions(const MeterMetadata& m, int year, const LatLonBounds& bounds) {
    if (year != 2016 && year != 2017)
        throw data_error("cannot encode year " + std::to_string(year));
    if (bounds.lat_min >= bounds.lat_max || bounds.lon_min >= bounds.lon_max)
        throw config_error("degenerate lat/lon bounds");

    auto scale = [](double v, double lo, double hi) {
        double x = 2.0 * (v - lo) / (hi - lo) - 1.0;
        return static_cast<float>(std::clamp(x, -1.0, 1.0));
    };

    ConditionVector c;
    c.values[0] = year == 2016 ? -1.0f : 1.0f;
    c.values[1] = scale(m.latitude, bounds.lat_min, bounds.lat_max);
    c.values[2] = scale(m.longitude, bounds.lon_min, bounds.lon_max);
    c.values[static_cast<size_t>(3 + static_cast<int>(m.meter_type))] = 1.0f;
    c.values[static_cast<size_t>(8 + static_cast<int>(m.building_type))] = 1.0f;
    return c;
}

MeterType condition_meter_type(const ConditionVector& c) {
    int best = 0;
    for (int i = 1; i < kNumMeterTypes; ++i)
        if (c.values[static_cast<size_t>(3 + i)] > c.values[static_cast<size_t>(3 + best)]) best = i;
    return static_cast<MeterType>(best);
}

BuildingType condition_building_type(const ConditionVector& c) {
    int best = 0;
    for (int i = 1; i < kNumBuildingTypes; ++i)
        if (c.values[static_cast<size_t>(8 + i)] > c.values[static_cast<size_t>(8 + best)]) best = i;
    return static_cast<BuildingType>(best);
}

ProcessedDataset split_train_test(ProcessedDataset dataset, double train_frac, uint64_t seed) {
    int n = dataset.count();
    if (n < 2) throw contract_error("split_train_test: need at least 2 meters");
    if (train_frac <= 0.0 || train_frac >= 1.0)
        throw config_error("train_frac must be in (0,1)");

    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    Rng rng(seed);
    for (int i = n - 1; i > 0; --i) {
        int j = static_cast<int>(rng.below(static_cast<uint64_t>(i) + 1));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }

    int n_train = static_cast<int>(std::floor(train_frac * n));
    n_train = std::clamp(n_train, 1, n - 1);
    dataset.split_labels.assign(static_cast<size_t>(n), SplitLabel::test);
    for (int i = 0; i < n_train; ++i)
        dataset.split_labels[static_cast<size_t>(idx[static_cast<size_t>(i)])] = SplitLabel::train;
    dataset.split_seed = seed;
    return dataset;
}

void save_dataset(const ProcessedDataset& ds, const std::string& dir) {
    ds.check_consistent();
    fs::create_directories(dir);

    json meters = json::array();
    for (int i = 0; i < ds.count(); ++i) {
        auto u = static_cast<size_t>(i);
        meters.push_back({{"meter_id", ds.meter_ids[u]},
                          {"year", ds.years[u]},
                          {"meter_type", to_string(ds.meter_types[u])},
                          {"building_type", to_string(ds.building_types[u])},
                          {"split", ds.split_labels[u] == SplitLabel::train ? "train" : "test"},
                          {"norm_min", ds.norm_min[u]},
                          {"norm_max", ds.norm_max[u]}});
    }

    json layout;
    layout["dims"] = kConditionDims;
    layout["scalar_fields"] = {"year_code", "lat_scaled", "lon_scaled"};
    layout["meter_types"] = json::array();
    for (auto* name : kMeterTypeNames) layout["meter_types"].push_back(name);
    layout["building_types"] = json::array();
    for (auto* name : kBuildingTypeNames) layout["building_types"].push_back(name);
    layout["year_codes"] = {{"2016", -1.0}, {"2017", 1.0}};

    json manifest;
    manifest["schema_version"] = kDatasetSchemaVersion;
    manifest["count"] = ds.count();
    manifest["split_seed"] = ds.split_seed;
    manifest["condition_layout"] = layout;
    manifest["lat_lon_bounds"] = {{"lat_min", ds.bounds.lat_min},
                                  {"lat_max", ds.bounds.lat_max},
                                  {"lon_min", ds.bounds.lon_min},
                                  {"lon_max", ds.bounds.lon_max}};
    manifest["meters"] = std::move(meters);
    manifest["tensors"] = {{"images", "images.etb"}, {"conditions", "conditions.etb"}};

    std::ofstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw io_error("cannot write manifest in " + dir);
    mf << manifest.dump(2) << "\n";

    save_tensor_blob((fs::path(dir) / "images.etb").string(), "images", ds.images);
    save_tensor_blob((fs::path(dir) / "conditions.etb").string(), "conditions", ds.conditions);
}

ProcessedDataset load_dataset(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw io_error("cannot open dataset manifest in " + dir);
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        throw format_error("corrupt dataset manifest in " + dir + ": " + e.what());
    }

    ProcessedDataset ds;
    try {
        if (manifest.at("schema_version").get<int>() != kDatasetSchemaVersion)
            throw format_error("unsupported dataset schema version in " + dir);
        int count = manifest.at("count").get<int>();
        ds.split_seed = manifest.at("split_seed").get<uint64_t>();
        const json& b = manifest.at("lat_lon_bounds");
        ds.bounds = {b.at("lat_min").get<double>(), b.at("lat_max").get<double>(),
                     b.at("lon_min").get<double>(), b.at("lon_max").get<double>()};

        for (const json& m : manifest.at("meters")) {
            ds.meter_ids.push_back(m.at("meter_id").get<std::string>());
            ds.years.push_back(m.at("year").get<int>());
            ds.meter_types.push_back(meter_type_from_string(m.at("meter_type").get<std::string>()));
            ds.building_types.push_back(
                building_type_from_string(m.at("building_type").get<std::string>()));
            std::string split = m.at("split").get<std::string>();
            if (split != "train" && split != "test")
                throw format_error("bad split label '" + split + "' in " + dir);
            ds.split_labels.push_back(split == "train" ? SplitLabel::train : SplitLabel::test);
            ds.norm_min.push_back(m.at("norm_min").get<double>());
            ds.norm_max.push_back(m.at("norm_max").get<double>());
        }

        auto [iname, images] = load_tensor_blob((fs::path(dir) / "images.etb").string());
        auto [cname, conditions] = load_tensor_blob((fs::path(dir) / "conditions.etb").string());
        if (iname != "images" || cname != "conditions")
            throw format_error("blob names disagree with manifest in " + dir);
        ds.images = std::move(images);
        ds.conditions = std::move(conditions);

        if (ds.images.ndim() != 3 || ds.images.dim(0) != count)
            throw format_error("manifest count disagrees with images tensor in " + dir);
        ds.check_consistent();
    } catch (const json::exception& e) {
        throw format_error("corrupt dataset manifest in " + dir + ": " + e.what());
    }
    return ds;
}

ProcessedDataset build_processed_dataset(const std::vector<MeterSeries>& raw,
                                         const std::vector<MeterMetadata>& metadata,
                                         const PipelineOptions& opts, PipelineStats* stats) {
    PipelineStats local;
    local.meter_years_loaded = static_cast<int>(raw.size());

    std::unordered_map<std::string, const MeterMetadata*> meta_by_id;
    for (const auto& m : metadata) meta_by_id[m.meter_id] = &m;

    // One sample per meter: keep the year with the lower raw missing fraction,
    // ties resolved toward 2016.
    std::map<std::string, const MeterSeries*> chosen;
    for (const auto& s : raw) {
        if (!meta_by_id.count(s.meter_id)) continue;
        auto it = chosen.find(s.meter_id);
        if (it == chosen.end()) {
            chosen[s.meter_id] = &s;
            continue;
        }
        const MeterSeries* cur = it->second;
        double f_new = s.missing_fraction(), f_cur = cur->missing_fraction();
        if (f_new < f_cur || (f_new == f_cur && s.year < cur->year)) it->second = &s;
    }
    local.meters_with_metadata = static_cast<int>(chosen.size());

    std::vector<MeterSeries> candidates;
    candidates.reserve(chosen.size());
    for (const auto& [id, s] : chosen) candidates.push_back(*s);  // sorted by meter_id

    std::vector<MeterSeries> kept = filter_missing(candidates, opts.max_missing_frac);
    local.meters_after_missing_filter = static_cast<int>(kept.size());

    if (opts.subsample_meters > 0 && static_cast<int>(kept.size()) > opts.subsample_meters)
        kept.resize(static_cast<size_t>(opts.subsample_meters));
    local.meters_retained = static_cast<int>(kept.size());

    if (kept.size() < 2) throw data_error("fewer than 2 usable meters after filtering");

    ProcessedDataset ds;
    int n = static_cast<int>(kept.size());
    ds.images = TensorF({n, kImageWeeks, kImageHoursPerWeek});
    ds.conditions = TensorF({n, kConditionDims});

    LatLonBounds bounds;
    bool first = true;
    for (const auto& s : kept) {
        const MeterMetadata& m = *meta_by_id[s.meter_id];
        if (first) {
            bounds = {m.latitude, m.latitude, m.longitude, m.longitude};
            first = false;
        }
        bounds.lat_min = std::min(bounds.lat_min, m.latitude);
        bounds.lat_max = std::max(bounds.lat_max, m.latitude);
        bounds.lon_min = std::min(bounds.lon_min, m.longitude);
        bounds.lon_max = std::max(bounds.lon_max, m.longitude);
    }
    ds.bounds = bounds;

    for (int i = 0; i < n; ++i) {
        const MeterSeries& s = kept[static_cast<size_t>(i)];
        const MeterMetadata& m = *meta_by_id[s.meter_id];
        MeterSeries cleaned = clean_series(s, opts.iqr_multiplier);
        NormalizedSeries norm = normalize(cleaned);
        TensorF grid = reshape_to_image(norm.values);
        std::copy(grid.data(), grid.data() + grid.size(),
                  ds.images.data() + static_cast<size_t>(i) * grid.size());

        ConditionVector c = encode_conditions(m, s.year, bounds);
        for (int j = 0; j < kConditionDims; ++j)
            ds.conditions.at(i, j) = c.values[static_cast<size_t>(j)];

        ds.meter_ids.push_back(s.meter_id);
        ds.years.push_back(s.year);
        ds.meter_types.push_back(m.meter_type);
        ds.building_types.push_back(m.building_type);
        ds.norm_min.push_back(norm.norm_min);
        ds.norm_max.push_back(norm.norm_max);
    }

    ds.split_labels.assign(static_cast<size_t>(n), SplitLabel::train);
    ds = split_train_test(std::move(ds), opts.train_frac, opts.split_seed);

    if (stats) *stats = local;
    return ds;
}

}  // namespace energen
