#include <energen/corpus.hpp>

#include <energen/data_pipeline.hpp>
#include <energen/rng.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

namespace energen {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct MeterProfile {
    MeterType mt;
    BuildingType bt;
    double lat, lon;
    double amp;      // per-meter scale
    double phase;    // per-meter daily phase jitter, hours
    double noise;
};

double daily_shape(MeterType mt, double hod) {
    auto bump = [](double h, double center, double width) {
        double d = h - center;
        return std::exp(-d * d / (2.0 * width * width));
    };
    switch (mt) {
    case MeterType::electricity: return bump(hod, 14.0, 3.5);
    case MeterType::chilledwater: return bump(hod, 15.0, 3.0);
    case MeterType::gas: return bump(hod, 7.0, 2.5);
    case MeterType::hotwater: return 0.6 * bump(hod, 7.0, 1.8) + 0.6 * bump(hod, 20.0, 2.2);
    case MeterType::steam: return bump(hod, 9.0, 4.0);
    }
    return 0.0;
}

// Seasonal weight in [0,1]; chilled water peaks midsummer, heating loads midwinter.
double seasonal_weight(MeterType mt, int day) {
    // peaks near day 171 (late June)
    double summer = 0.5 + 0.5 * std::sin(2.0 * kPi * (day - 80) / 366.0);
    switch (mt) {
    case MeterType::electricity: return 0.7 + 0.3 * summer;
    case MeterType::chilledwater: return 0.1 + 0.9 * summer;
    case MeterType::gas: return 1.0 - 0.85 * summer;
    case MeterType::hotwater: return 1.0 - 0.5 * summer;
    case MeterType::steam: return 1.0 - 0.8 * summer;
    }
    return 1.0;
}

double weekly_weight(BuildingType bt, int dow, double hod) {
    bool weekend = dow >= 5;
    switch (bt) {
    case BuildingType::office: return weekend ? 0.35 : 1.0;
    case BuildingType::education: return weekend ? 0.45 : 1.0;
    case BuildingType::public_services: return weekend ? 0.7 : 1.0;
    case BuildingType::entertainment: return weekend ? 1.2 : 0.7;
    case BuildingType::lodging_residential:
        return 0.9 + 0.2 * std::exp(-(hod - 21.0) * (hod - 21.0) / 8.0);
    }
    return 1.0;
}

} // namespace

void write_synthetic_corpus(const std::string& dir, int n_meters, uint64_t seed) {
    if (n_meters < 1) throw contract_error("write_synthetic_corpus: need at least one meter");
    std::filesystem::create_directories(dir);

    Rng rng(seed);
    std::vector<MeterProfile> profiles;
    profiles.reserve(static_cast<size_t>(n_meters));
    for (int i = 0; i < n_meters; ++i) {
        MeterProfile p;
        p.mt = static_cast<MeterType>(i % kNumMeterTypes);
        p.bt = static_cast<BuildingType>((i / kNumMeterTypes) % kNumBuildingTypes);
        p.lat = 36.0 + 8.0 * rng.uniform();
        p.lon = -8.0 + 6.0 * rng.uniform();
        p.amp = 0.8 + 0.4 * rng.uniform();
        p.phase = 1.5 * (rng.uniform() - 0.5);
        p.noise = 0.05 + 0.05 * rng.uniform();
        profiles.push_back(p);
    }

    auto meter_name = [](int i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "m%04d", i);
        return std::string(buf);
    };

    {
        std::ofstream meta(std::filesystem::path(dir) / "metadata.csv");
        if (!meta) throw io_error("write_synthetic_corpus: cannot write metadata.csv");
        meta << "meter_id,building_id,meter_type,building_type,lat,lng\n";
        char row[160];
        for (int i = 0; i < n_meters; ++i) {
            const MeterProfile& p = profiles[static_cast<size_t>(i)];
            std::snprintf(row, sizeof(row), "%s,b%03d,%s,%s,%.4f,%.4f\n", meter_name(i).c_str(),
                          i / 2, to_string(p.mt), to_string(p.bt), p.lat, p.lon);
            meta << row;
        }
    }

    const int year = 2016;
    const int hours = hours_in_year(year);
    const int month_days[12] = {31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};

    std::ofstream out(std::filesystem::path(dir) / "meters.csv");
    if (!out) throw io_error("write_synthetic_corpus: cannot write meters.csv");
    std::string header = "timestamp";
    for (int i = 0; i < n_meters; ++i) header += "," + meter_name(i);
    out << header << "\n";

    std::string line;
    line.reserve(static_cast<size_t>(n_meters) * 8 + 24);
    int month = 0, mday = 1, carried = 0;
    for (int h = 0; h < hours; ++h) {
        int day = h / 24, hod = h % 24;
        if (day > carried) {
            ++mday;
            if (mday > month_days[month]) {
                mday = 1;
                ++month;
            }
            carried = day;
        }
        char stamp[24];
        std::snprintf(stamp, sizeof(stamp), "%04d-%02d-%02d %02d:00", year, month + 1, mday, hod);
        line.assign(stamp);

        int dow = (day + 4) % 7; // 2016-01-01 was a Friday
        for (const MeterProfile& p : profiles) {
            double shape = daily_shape(p.mt, hod + p.phase);
            double season = seasonal_weight(p.mt, day);
            double week = weekly_weight(p.bt, dow, hod);
            double lat_gain = 0.75 + 0.5 * (p.lat - 36.0) / 8.0;
            double v = 1.0 + 4.0 * p.amp * shape * week * (0.3 + 0.7 * season * lat_gain) +
                       p.noise * rng.normal();
            if (v < 0.0) v = 0.0;
            char cell[16];
            std::snprintf(cell, sizeof(cell), ",%.3f", v);
            line += cell;
        }
        out << line << "\n";
    }
}

} // namespace energen
