#pragma once

// Synthetic stand-in corpus: hourly meter readings whose daily, weekly, and
// seasonal structure is driven by meter type, building type, and latitude, so
// conditional models have real signal to learn at desk scale.

#include <cstdint>
#include <string>

namespace energen {

// Writes <dir>/meters.csv (wide schema, hourly readings for 2016) and
// <dir>/metadata.csv. Meter and building types cycle so every combination
// appears; readings are nonnegative with seeded noise.
void write_synthetic_corpus(const std::string& dir, int n_meters, uint64_t seed);

} // namespace energen
