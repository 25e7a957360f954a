#pragma once

#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace generaser {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kDatasetFormatVersion = 1;

// All recoverable failures surface as one of these; the CLI turns them into
// machine-readable error JSON and a nonzero exit code.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

enum class LogLevel { kDebug = 0, kInfo = 1, kWarn = 2 };

// GENERASER_LOG={debug,info,warn}, default info.
inline LogLevel log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("GENERASER_LOG");
        if (env == nullptr) return LogLevel::kInfo;
        const std::string v(env);
        if (v == "debug") return LogLevel::kDebug;
        if (v == "warn") return LogLevel::kWarn;
        return LogLevel::kInfo;
    }();
    return level;
}

template <typename... Args>
void log(LogLevel lvl, const char* fmt, Args... args) {
    if (lvl < log_level()) return;
    const char* tag = lvl == LogLevel::kDebug ? "debug" : lvl == LogLevel::kWarn ? "warn" : "info";
    std::fprintf(stderr, "[%s] ", tag);
    std::fprintf(stderr, fmt, args...);
    std::fprintf(stderr, "\n");
}

inline void log_info(const char* fmt) { log(LogLevel::kInfo, "%s", fmt); }

}  // namespace generaser
