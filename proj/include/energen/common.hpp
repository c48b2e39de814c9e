#pragma once

#include <stdexcept>
#include <string>

namespace energen {

// One meter-year as an image: 52 week rows of 168 hourly readings.
constexpr int kImageWeeks = 52;
constexpr int kImageHoursPerWeek = 168;
constexpr int kImageHours = kImageWeeks * kImageHoursPerWeek;  // 8736
constexpr int kConditionDims = 13;

enum class ErrorKind {
    io,        // file missing / unreadable / unwritable
    parse,     // malformed input text (CSV cells, timestamps, config syntax)
    format,    // corrupt or inconsistent binary container / manifest
    config,    // invalid parameter or configuration value
    contract,  // API precondition violated (shapes, handle kinds, provenance)
    data,      // input data unusable (all-missing series, insufficient length)
    runtime,   // failure during computation (NaN loss, failed stage)
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

  private:
    ErrorKind kind_;
};

inline Error io_error(const std::string& msg) { return Error(ErrorKind::io, msg); }
inline Error parse_error(const std::string& msg) { return Error(ErrorKind::parse, msg); }
inline Error format_error(const std::string& msg) { return Error(ErrorKind::format, msg); }
inline Error config_error(const std::string& msg) { return Error(ErrorKind::config, msg); }
inline Error contract_error(const std::string& msg) { return Error(ErrorKind::contract, msg); }
inline Error data_error(const std::string& msg) { return Error(ErrorKind::data, msg); }
inline Error runtime_error(const std::string& msg) { return Error(ErrorKind::runtime, msg); }

}  // namespace energen
