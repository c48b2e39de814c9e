#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <cstring>
#include <set>
#include <unistd.h>

#include "energen/data_pipeline.hpp"

using namespace energen;
namespace fs = std::filesystem;

namespace {

MeterSeries make_series(std::vector<double> readings, std::vector<uint8_t> mask = {}) {
    MeterSeries s;
    s.meter_id = "m0";
    s.year = 2016;
    if (mask.empty()) mask.assign(readings.size(), 0);
    s.readings = std::move(readings);
    s.missing_mask = std::move(mask);
    return s;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("energen_test_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static inline int counter = 0;
};

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream os(p);
    os << content;
}

}  // namespace

TEST_CASE("hourly timestamps parse to year and hour index") {
    CHECK(parse_hour_timestamp("2016-01-01 00:00") == std::pair<int, int>{2016, 0});
    CHECK(parse_hour_timestamp("2016-01-01 23:00") == std::pair<int, int>{2016, 23});
    CHECK(parse_hour_timestamp("2016-01-02 00:00:00") == std::pair<int, int>{2016, 24});
    CHECK(parse_hour_timestamp("2016-12-31 23:00") == std::pair<int, int>{2016, 8783});
    CHECK(parse_hour_timestamp("2017-12-31 23:00") == std::pair<int, int>{2017, 8759});
    CHECK(parse_hour_timestamp("2016-02-29 12:00") == std::pair<int, int>{2016, (31 + 28) * 24 + 12});
    CHECK(parse_hour_timestamp("2016-03-01T00:00") == std::pair<int, int>{2016, (31 + 29) * 24});

    CHECK_THROWS_AS(parse_hour_timestamp("2017-02-29 00:00"), Error);
    CHECK_THROWS_AS(parse_hour_timestamp("2016-13-01 00:00"), Error);
    CHECK_THROWS_AS(parse_hour_timestamp("2016-01-01 24:00"), Error);
    CHECK_THROWS_AS(parse_hour_timestamp("2016-01-01 00:30"), Error);
    CHECK_THROWS_AS(parse_hour_timestamp("2016/01/01 00:00"), Error);
    CHECK_THROWS_AS(parse_hour_timestamp("garbage"), Error);
}

TEST_CASE("leap and common years have 8784 and 8760 hours") {
    CHECK(hours_in_year(2016) == 8784);
    CHECK(hours_in_year(2017) == 8760);
    CHECK(hours_in_year(2000) == 8784);
    CHECK(hours_in_year(1900) == 8760);
}

TEST_CASE("IQR fence on the reference series is [-5, 35]") {
    auto s = make_series({10, 10, 20, 20, 100});
    auto cleaned = clean_series(s, 1.5);
    // 100 is outside the fence and gets forward-filled from 20
    CHECK(cleaned.readings == std::vector<double>{10, 10, 20, 20, 20});
    CHECK(cleaned.cleaned);
    CHECK(cleaned.missing_count() == 0);

    // values exactly on the fence survive
    auto s2 = make_series({10, 10, 20, 20, 35, -5});
    auto cleaned2 = clean_series(s2, 1.5);
    CHECK(cleaned2.readings[4] == 35);
    CHECK(cleaned2.readings[5] == -5);
}

TEST_CASE("cleaning fills gaps forward and leading gaps backward") {
    auto s = make_series({0, 1, 0, 3, 0, 0, 6, 8}, {1, 0, 1, 0, 1, 1, 0, 0});
    auto cleaned = clean_series(s, 1.5);
    CHECK(cleaned.readings == std::vector<double>{1, 1, 1, 3, 3, 3, 6, 8});
}

TEST_CASE("cleaning rejects unrecoverable series") {
    CHECK_THROWS_AS(clean_series(make_series({0, 0, 0}, {1, 1, 1}), 1.5), Error);
    CHECK_THROWS_AS(clean_series(make_series({1, 2, 3}), 1.5), Error);
}

TEST_CASE("missing filter keeps 5% and drops 6%") {
    std::vector<MeterSeries> series;
    {
        std::vector<uint8_t> mask(100, 0);
        for (int i = 0; i < 6; ++i) mask[static_cast<size_t>(i)] = 1;
        auto s = make_series(std::vector<double>(100, 1.0), mask);
        s.meter_id = "six";
        series.push_back(s);
    }
    {
        std::vector<uint8_t> mask(100, 0);
        for (int i = 0; i < 5; ++i) mask[static_cast<size_t>(i)] = 1;
        auto s = make_series(std::vector<double>(100, 1.0), mask);
        s.meter_id = "five";
        series.push_back(s);
    }
    auto kept = filter_missing(series, 0.05);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].meter_id == "five");
}

TEST_CASE("missing filter refuses filled series") {
    auto s = make_series({1, 2, 3, 4, 5});
    auto cleaned = clean_series(s, 1.5);
    CHECK_THROWS_AS(filter_missing({cleaned}, 0.05), Error);
}

TEST_CASE("min-max normalization maps [10,20,30] to [-1,0,1]") {
    auto n = normalize(make_series({10, 20, 30}));
    CHECK(n.values[0] == doctest::Approx(-1.0f));
    CHECK(n.values[1] == doctest::Approx(0.0f));
    CHECK(n.values[2] == doctest::Approx(1.0f));
    CHECK(n.norm_min == 10.0);
    CHECK(n.norm_max == 30.0);
    CHECK_FALSE(n.constant);

    auto back = denormalize(n.values, n.norm_min, n.norm_max);
    CHECK(back[0] == doctest::Approx(10.0));
    CHECK(back[1] == doctest::Approx(20.0));
    CHECK(back[2] == doctest::Approx(30.0));
}

TEST_CASE("constant series normalize to zeros with the constant flag") {
    auto n = normalize(make_series({7, 7, 7, 7}));
    CHECK(n.constant);
    for (float v : n.values) CHECK(v == 0.0f);
    CHECK(n.norm_min == 7.0);
    CHECK(n.norm_max == 7.0);
}

TEST_CASE("week grid layout puts hour h at [h/168][h%168]") {
    std::vector<float> hours(static_cast<size_t>(hours_in_year(2016)));
    for (size_t i = 0; i < hours.size(); ++i) hours[i] = static_cast<float>(i);
    auto grid = reshape_to_image(hours);
    REQUIRE(grid.shape() == std::vector<int>{52, 168});
    CHECK(grid.at(0, 0) == 0.0f);
    CHECK(grid.at(1, 0) == 168.0f);
    CHECK(grid.at(51, 167) == 8735.0f);

    // trailing 48 leap-year hours are discarded
    CHECK(grid.size() == 8736);

    auto flat = flatten_image(grid);
    auto again = reshape_to_image(flat);
    for (size_t i = 0; i < flat.size(); ++i)
        CHECK(again.data()[i] == flat[i]);

    CHECK_THROWS_AS(reshape_to_image(std::vector<float>(8735)), Error);
}

TEST_CASE("condition vector encodes year, location, and one-hot categories") {
    MeterMetadata m;
    m.meter_id = "m0";
    m.building_id = "b0";
    m.meter_type = MeterType::steam;
    m.building_type = BuildingType::education;
    m.latitude = 45.0;
    m.longitude = 0.0;
    LatLonBounds bounds{40.0, 50.0, -10.0, 10.0};

    auto c = encode_conditions(m, 2017, bounds);
    CHECK(c.values[0] == 1.0f);
    CHECK(c.values[1] == doctest::Approx(0.0f));
    CHECK(c.values[2] == doctest::Approx(0.0f));
    // meter one-hot block: electricity, chilledwater, gas, hotwater, steam
    std::vector<float> meter_block(c.values.begin() + 3, c.values.begin() + 8);
    CHECK(meter_block == std::vector<float>{0, 0, 0, 0, 1});
    // building one-hot block: Office, Education, Public services, Entertainment, Lodging
    std::vector<float> building_block(c.values.begin() + 8, c.values.begin() + 13);
    CHECK(building_block == std::vector<float>{0, 1, 0, 0, 0});

    auto c16 = encode_conditions(m, 2016, bounds);
    CHECK(c16.values[0] == -1.0f);

    CHECK(condition_meter_type(c) == MeterType::steam);
    CHECK(condition_building_type(c) == BuildingType::education);

    m.latitude = 40.0;
    CHECK(encode_conditions(m, 2016, bounds).values[1] == doctest::Approx(-1.0f));
    m.latitude = 50.0;
    CHECK(encode_conditions(m, 2016, bounds).values[1] == doctest::Approx(1.0f));

    CHECK_THROWS_AS(encode_conditions(m, 2015, bounds), Error);
    CHECK_THROWS_AS(encode_conditions(m, 2016, LatLonBounds{40, 40, -10, 10}), Error);
}

TEST_CASE("category names round-trip and unknown names are rejected") {
    for (int i = 0; i < kNumMeterTypes; ++i) {
        auto t = static_cast<MeterType>(i);
        CHECK(meter_type_from_string(to_string(t)) == t);
    }
    for (int i = 0; i < kNumBuildingTypes; ++i) {
        auto t = static_cast<BuildingType>(i);
        CHECK(building_type_from_string(to_string(t)) == t);
    }
    CHECK_THROWS_WITH_AS(meter_type_from_string("water"), "unknown meter type: 'water'", Error);
    CHECK_THROWS_AS(building_type_from_string("Hospital"), Error);
}

TEST_CASE("train/test split is seeded and uses floor semantics") {
    auto build = [](int n) {
        ProcessedDataset ds;
        ds.images = TensorF({n, kImageWeeks, kImageHoursPerWeek});
        ds.conditions = TensorF({n, kConditionDims});
        for (int i = 0; i < n; ++i) {
            ds.meter_ids.push_back("m" + std::to_string(i));
            ds.years.push_back(2016);
            ds.meter_types.push_back(MeterType::electricity);
            ds.building_types.push_back(BuildingType::office);
            ds.norm_min.push_back(0.0);
            ds.norm_max.push_back(1.0);
        }
        ds.split_labels.assign(static_cast<size_t>(n), SplitLabel::train);
        return ds;
    };

    auto ds = split_train_test(build(1828), 0.75, 77);
    CHECK(ds.indices_of(SplitLabel::train).size() == 1371);
    CHECK(ds.indices_of(SplitLabel::test).size() == 457);

    auto again = split_train_test(build(1828), 0.75, 77);
    CHECK(ds.split_labels == again.split_labels);

    auto other = split_train_test(build(1828), 0.75, 78);
    CHECK(ds.split_labels != other.split_labels);

    CHECK_THROWS_AS(split_train_test(build(1), 0.75, 1), Error);
}

TEST_CASE("wide and long CSV schemas load the same readings") {
    TempDir dir;
    std::string wide = "timestamp,ma,mb\n";
    std::string long_form = "meter_id,timestamp,reading\n";
    for (int h = 0; h < 3; ++h) {
        char ts[32];
        std::snprintf(ts, sizeof(ts), "2017-01-01 %02d:00", h);
        wide += std::string(ts) + "," + std::to_string(h) + "," + std::to_string(10 + h) + "\n";
        long_form += "ma," + std::string(ts) + "," + std::to_string(h) + "\n";
        long_form += "mb," + std::string(ts) + "," + std::to_string(10 + h) + "\n";
    }
    write_file(dir.path / "wide.csv", wide);
    write_file(dir.path / "long.csv", long_form);

    auto w = load_meter_csv((dir.path / "wide.csv").string(), CsvSchema::wide);
    auto l = load_meter_csv((dir.path / "long.csv").string(), CsvSchema::long_form);
    REQUIRE(w.size() == 2);
    REQUIRE(l.size() == 2);
    for (size_t i = 0; i < 2; ++i) {
        CHECK(w[i].meter_id == l[i].meter_id);
        CHECK(w[i].year == 2017);
        REQUIRE(w[i].readings.size() == 8760);
        for (int h = 0; h < 3; ++h) {
            CHECK(w[i].readings[static_cast<size_t>(h)] ==
                  l[i].readings[static_cast<size_t>(h)]);
            CHECK(w[i].missing_mask[static_cast<size_t>(h)] == 0);
        }
        CHECK(w[i].missing_mask[3] == 1);
    }
    CHECK(w[0].readings[0] == 0.0);
    CHECK(w[1].readings[2] == 12.0);
}

TEST_CASE("meter CSV loader flags gaps and rejects bad input") {
    TempDir dir;
    write_file(dir.path / "gaps.csv",
               "timestamp,ma\n"
               "2016-01-01 00:00,1.5\n"
               "2016-01-01 01:00,\n"
               "2016-01-01 02:00,oops\n"
               "2016-01-01 03:00,2.5\n");
    auto series = load_meter_csv((dir.path / "gaps.csv").string(), CsvSchema::wide);
    REQUIRE(series.size() == 1);
    CHECK(series[0].missing_mask[0] == 0);
    CHECK(series[0].missing_mask[1] == 1);
    CHECK(series[0].missing_mask[2] == 1);
    CHECK(series[0].missing_mask[3] == 0);
    CHECK(std::isnan(series[0].readings[1]));

    write_file(dir.path / "dup.csv",
               "meter_id,timestamp,reading\n"
               "ma,2016-01-01 00:00,1\n"
               "ma,2016-01-01 00:00,2\n");
    CHECK_THROWS_AS(load_meter_csv((dir.path / "dup.csv").string(), CsvSchema::long_form), Error);

    write_file(dir.path / "badts.csv",
               "timestamp,ma\n"
               "2016-99-01 00:00,1\n");
    try {
        load_meter_csv((dir.path / "badts.csv").string(), CsvSchema::wide);
        FAIL("expected parse error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }

    write_file(dir.path / "badyear.csv",
               "timestamp,ma\n"
               "2015-01-01 00:00,1\n");
    CHECK_THROWS_AS(load_meter_csv((dir.path / "badyear.csv").string(), CsvSchema::wide), Error);

    CHECK_THROWS_AS(load_meter_csv((dir.path / "nope.csv").string(), CsvSchema::wide), Error);
}

TEST_CASE("metadata CSV loads and validates") {
    TempDir dir;
    write_file(dir.path / "meta.csv",
               "meter_id,building_id,meter_type,building_type,lat,lng\n"
               "ma,b1,electricity,Office,40.0,-3.7\n"
               "mb,b2,steam,Lodging/residential,51.5,-0.1\n");
    auto meta = load_metadata_csv((dir.path / "meta.csv").string());
    REQUIRE(meta.size() == 2);
    CHECK(meta[0].meter_type == MeterType::electricity);
    CHECK(meta[1].building_type == BuildingType::lodging_residential);
    CHECK(meta[1].latitude == doctest::Approx(51.5));

    write_file(dir.path / "badmeta.csv",
               "meter_id,building_id,meter_type,building_type,lat,lng\n"
               "ma,b1,water,Office,40.0,-3.7\n");
    try {
        load_metadata_csv((dir.path / "badmeta.csv").string());
        FAIL("expected parse error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("water") != std::string::npos);
    }

    write_file(dir.path / "dupmeta.csv",
               "meter_id,building_id,meter_type,building_type,lat,lng\n"
               "ma,b1,electricity,Office,40.0,-3.7\n"
               "ma,b1,gas,Office,40.0,-3.7\n");
    CHECK_THROWS_AS(load_metadata_csv((dir.path / "dupmeta.csv").string()), Error);
}

namespace {

// Two-meter corpus with full 2016 coverage, distinct locations.
std::pair<std::vector<MeterSeries>, std::vector<MeterMetadata>> tiny_corpus() {
    std::vector<MeterSeries> series;
    std::vector<MeterMetadata> meta;
    for (int k = 0; k < 2; ++k) {
        MeterSeries s;
        s.meter_id = "m" + std::to_string(k);
        s.year = 2016;
        int hours = hours_in_year(2016);
        s.readings.resize(static_cast<size_t>(hours));
        s.missing_mask.assign(static_cast<size_t>(hours), 0);
        for (int h = 0; h < hours; ++h)
            s.readings[static_cast<size_t>(h)] =
                std::sin(0.01 * h + k) + 0.1 * k;
        series.push_back(std::move(s));

        MeterMetadata m;
        m.meter_id = "m" + std::to_string(k);
        m.building_id = "b" + std::to_string(k);
        m.meter_type = k == 0 ? MeterType::electricity : MeterType::gas;
        m.building_type = k == 0 ? BuildingType::office : BuildingType::education;
        m.latitude = 40.0 + k;
        m.longitude = -3.0 + k;
        meta.push_back(std::move(m));
    }
    return {series, meta};
}

}  // namespace

TEST_CASE("dataset build composes filters, normalization, and encoding") {
    auto [series, meta] = tiny_corpus();

    // a third meter with too many gaps is dropped
    MeterSeries gappy;
    gappy.meter_id = "m2";
    gappy.year = 2016;
    int hours = hours_in_year(2016);
    gappy.readings.assign(static_cast<size_t>(hours), 1.0);
    gappy.missing_mask.assign(static_cast<size_t>(hours), 0);
    for (int h = 0; h < hours / 10; ++h) gappy.missing_mask[static_cast<size_t>(h)] = 1;
    series.push_back(gappy);
    MeterMetadata m2 = meta[0];
    m2.meter_id = "m2";
    meta.push_back(m2);

    // and one without metadata is ignored
    MeterSeries orphan = series[0];
    orphan.meter_id = "orphan";
    series.push_back(orphan);

    PipelineOptions opts;
    PipelineStats stats;
    auto ds = build_processed_dataset(series, meta, opts, &stats);

    CHECK(stats.meter_years_loaded == 4);
    CHECK(stats.meters_with_metadata == 3);
    CHECK(stats.meters_after_missing_filter == 2);
    CHECK(stats.meters_retained == 2);

    REQUIRE(ds.count() == 2);
    ds.check_consistent();
    CHECK(ds.meter_ids == std::vector<std::string>{"m0", "m1"});
    for (int i = 0; i < ds.count(); ++i) {
        for (size_t j = 0; j < ds.images.size() / 2; ++j) {
            float v = ds.images.data()[static_cast<size_t>(i) * 8736 + j];
            CHECK(v >= -1.0f);
            CHECK(v <= 1.0f);
        }
    }
    CHECK(ds.bounds.lat_min == 40.0);
    CHECK(ds.bounds.lat_max == 41.0);
    CHECK(ds.condition(0).values[1] == doctest::Approx(-1.0f));
    CHECK(ds.condition(1).values[1] == doctest::Approx(1.0f));
    CHECK(condition_meter_type(ds.condition(1)) == MeterType::gas);
}

TEST_CASE("year selection prefers lower missing fraction, ties go to 2016") {
    auto [series, meta] = tiny_corpus();

    // m0 also has a 2017 series with fewer gaps: 2017 wins.
    // Give the 2016 one some gaps first.
    for (int h = 0; h < 100; ++h) series[0].missing_mask[static_cast<size_t>(h)] = 1;
    MeterSeries s17;
    s17.meter_id = "m0";
    s17.year = 2017;
    int hours = hours_in_year(2017);
    s17.readings.resize(static_cast<size_t>(hours));
    s17.missing_mask.assign(static_cast<size_t>(hours), 0);
    for (int h = 0; h < hours; ++h) s17.readings[static_cast<size_t>(h)] = std::cos(0.01 * h);
    series.push_back(s17);

    // m1 has both years gap-free: 2016 wins.
    MeterSeries m1_17 = s17;
    m1_17.meter_id = "m1";
    series.push_back(m1_17);

    PipelineOptions opts;
    auto ds = build_processed_dataset(series, meta, opts, nullptr);
    REQUIRE(ds.count() == 2);
    CHECK(ds.years[0] == 2017);
    CHECK(ds.years[1] == 2016);
    CHECK(ds.condition(0).values[0] == 1.0f);
    CHECK(ds.condition(1).values[0] == -1.0f);
}

TEST_CASE("subsampling keeps the first K meters by id") {
    auto [series, meta] = tiny_corpus();
    PipelineOptions opts;
    opts.subsample_meters = 1;
    CHECK_THROWS_AS(build_processed_dataset(series, meta, opts, nullptr), Error);

    opts.subsample_meters = 2;
    auto ds = build_processed_dataset(series, meta, opts, nullptr);
    CHECK(ds.count() == 2);
}

TEST_CASE("datasets round-trip through disk bit for bit") {
    auto [series, meta] = tiny_corpus();
    PipelineOptions opts;
    auto ds = build_processed_dataset(series, meta, opts, nullptr);

    TempDir dir;
    auto path = (dir.path / "ds").string();
    save_dataset(ds, path);
    auto loaded = load_dataset(path);

    CHECK(loaded.count() == ds.count());
    CHECK(loaded.meter_ids == ds.meter_ids);
    CHECK(loaded.years == ds.years);
    CHECK(loaded.split_labels == ds.split_labels);
    CHECK(loaded.split_seed == ds.split_seed);
    CHECK(loaded.norm_min == ds.norm_min);
    CHECK(loaded.norm_max == ds.norm_max);
    CHECK(loaded.bounds.lat_min == ds.bounds.lat_min);
    CHECK(loaded.bounds.lon_max == ds.bounds.lon_max);
    REQUIRE(loaded.images.size() == ds.images.size());
    CHECK(std::memcmp(loaded.images.data(), ds.images.data(),
                      ds.images.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(loaded.conditions.data(), ds.conditions.data(),
                      ds.conditions.size() * sizeof(float)) == 0);

    // second save produces identical blobs
    auto path2 = (dir.path / "ds2").string();
    save_dataset(loaded, path2);
    std::ifstream a(fs::path(path) / "images.etb", std::ios::binary);
    std::ifstream b(fs::path(path2) / "images.etb", std::ios::binary);
    std::string ca((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string cb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(ca == cb);
}

TEST_CASE("corrupt dataset files are refused") {
    auto [series, meta] = tiny_corpus();
    PipelineOptions opts;
    auto ds = build_processed_dataset(series, meta, opts, nullptr);

    TempDir dir;
    auto path = (dir.path / "ds").string();
    save_dataset(ds, path);

    SUBCASE("missing directory") { CHECK_THROWS_AS(load_dataset((dir.path / "nope").string()), Error); }
    SUBCASE("corrupt manifest") {
        write_file(fs::path(path) / "manifest.json", "{not json");
        CHECK_THROWS_AS(load_dataset(path), Error);
    }
    SUBCASE("truncated blob") {
        auto blob = fs::path(path) / "images.etb";
        fs::resize_file(blob, fs::file_size(blob) / 2);
        CHECK_THROWS_AS(load_dataset(path), Error);
    }
    SUBCASE("count mismatch") {
        std::ifstream is(fs::path(path) / "manifest.json");
        std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        is.close();
        size_t pos = text.find("\"count\": 2");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 10, "\"count\": 3");
        write_file(fs::path(path) / "manifest.json", text);
        CHECK_THROWS_AS(load_dataset(path), Error);
    }
    SUBCASE("bad magic") {
        std::fstream f(fs::path(path) / "conditions.etb",
                       std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXX", 4);
        f.close();
        CHECK_THROWS_AS(load_dataset(path), Error);
    }
}

TEST_CASE("error kinds are distinguishable") {
    try {
        throw data_error("boom");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::data);
        CHECK(std::string(e.what()) == "boom");
    }
}
