#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "energen/tensor.hpp"

namespace energen {

enum class MeterType { electricity, chilledwater, gas, hotwater, steam };
enum class BuildingType { office, education, public_services, entertainment, lodging_residential };
constexpr int kNumMeterTypes = 5;
constexpr int kNumBuildingTypes = 5;

const char* to_string(MeterType t);
const char* to_string(BuildingType t);
MeterType meter_type_from_string(const std::string& s);       // throws on unknown value
BuildingType building_type_from_string(const std::string& s); // throws on unknown value

// One meter-year of hourly readings. readings[i] is NaN wherever
// missing_mask[i] is set; the mask reflects the raw file until clean_series
// runs (cleaned == true afterwards, mask all clear).
struct MeterSeries {
    std::string meter_id;
    std::string building_id;
    int year = 0;
    std::vector<double> readings;
    std::vector<uint8_t> missing_mask;
    bool cleaned = false;

    size_t missing_count() const;
    double missing_fraction() const;
};

struct MeterMetadata {
    std::string meter_id;
    std::string building_id;
    MeterType meter_type = MeterType::electricity;
    BuildingType building_type = BuildingType::office;
    double latitude = 0.0;
    double longitude = 0.0;
};

// Encoded metadata: [year_code, lat_scaled, lon_scaled, meter one-hot x5, building one-hot x5].
struct ConditionVector {
    std::array<float, kConditionDims> values{};
};

struct LatLonBounds {
    double lat_min = 0.0, lat_max = 0.0;
    double lon_min = 0.0, lon_max = 0.0;
};

// Per-meter normalized annual sequence plus the raw-unit range it maps back to.
struct NormalizedSeries {
    std::vector<float> values;  // in [-1, 1]
    double norm_min = 0.0;
    double norm_max = 0.0;
    bool constant = false;
};

enum class SplitLabel : uint8_t { train = 0, test = 1 };

struct ProcessedDataset {
    TensorF images;      // [N, 52, 168]
    TensorF conditions;  // [N, 13]
    std::vector<std::string> meter_ids;
    std::vector<SplitLabel> split_labels;
    std::vector<double> norm_min;
    std::vector<double> norm_max;
    std::vector<int> years;
    std::vector<MeterType> meter_types;
    std::vector<BuildingType> building_types;
    LatLonBounds bounds;
    uint64_t split_seed = 0;

    int count() const { return images.empty() ? 0 : images.dim(0); }
    std::vector<int> indices_of(SplitLabel label) const;
    std::optional<int> index_of_meter(const std::string& meter_id) const;
    ConditionVector condition(int i) const;
    void check_consistent() const;  // throws format_error when field sizes disagree
};

enum class CsvSchema { wide, long_form };

int hours_in_year(int year);

// Parses "YYYY-MM-DD HH:MM[:SS]" (or with 'T'); returns (year, hour index in year).
std::pair<int, int> parse_hour_timestamp(const std::string& s);

// Raw meter CSV -> one MeterSeries per meter-year present in the file.
// wide: header "timestamp,<id1>,<id2>,..."; long: rows "meter_id,timestamp,reading".
// Hours absent from the file and empty / non-numeric cells are marked missing.
std::vector<MeterSeries> load_meter_csv(const std::string& path, CsvSchema schema);

// Metadata CSV: header "meter_id,building_id,meter_type,building_type,lat,lng".
std::vector<MeterMetadata> load_metadata_csv(const std::string& path);

// IQR outlier fencing followed by forward fill (leading gaps backward-filled).
MeterSeries clean_series(const MeterSeries& s, double iqr_multiplier = 1.5);

// Keeps series whose raw missing fraction is <= max_missing_frac (inclusive).
// Must run before clean_series: filled series no longer carry raw masks.
std::vector<MeterSeries> filter_missing(const std::vector<MeterSeries>& series,
                                        double max_missing_frac = 0.05);

NormalizedSeries normalize(const MeterSeries& s);
std::vector<double> denormalize(const std::vector<float>& values, double norm_min,
                                double norm_max);

// First 8736 values laid out week-major: grid[w][h] = values[w*168 + h].
TensorF reshape_to_image(const std::vector<float>& normalized);
std::vector<float> flatten_image(const TensorF& grid);

ConditionVector encode_conditions(const MeterMetadata& m, int year, const LatLonBounds& bounds);

// Decoding helpers for report slicing (inverse of the one-hot layout).
MeterType condition_meter_type(const ConditionVector& c);
BuildingType condition_building_type(const ConditionVector& c);

// Meter-level 75/25-style split, deterministic in seed. Labels are written
// in place on a copy of the dataset.
ProcessedDataset split_train_test(ProcessedDataset dataset, double train_frac, uint64_t seed);

void save_dataset(const ProcessedDataset& ds, const std::string& dir);
ProcessedDataset load_dataset(const std::string& dir);

struct PipelineOptions {
    double iqr_multiplier = 1.5;
    double max_missing_frac = 0.05;
    double train_frac = 0.75;
    uint64_t split_seed = 0;
    int subsample_meters = 0;  // 0 = keep all
};

struct PipelineStats {
    int meter_years_loaded = 0;
    int meters_with_metadata = 0;
    int meters_after_missing_filter = 0;
    int meters_retained = 0;
};

// Full preprocessing: join with metadata, pick one year per meter (lower raw
// missing fraction, ties -> 2016), filter, clean, normalize, reshape, encode,
// split.
ProcessedDataset build_processed_dataset(const std::vector<MeterSeries>& raw,
                                         const std::vector<MeterMetadata>& metadata,
                                         const PipelineOptions& opts,
                                         PipelineStats* stats = nullptr);

}  // namespace energen
