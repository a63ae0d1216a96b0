#pragma once

#include <cstdlib>
#include <cstring>
#include <iostream>
#include <string>

namespace cis {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

/// Level from the CIS_LOG environment variable (error|warn|info|debug);
/// warn when unset or unrecognized.
inline LogLevel log_level() {
    static const LogLevel level = [] {
        const char* v = std::getenv("CIS_LOG");
        if (!v) return LogLevel::warn;
        if (!std::strcmp(v, "error")) return LogLevel::error;
        if (!std::strcmp(v, "info")) return LogLevel::info;
        if (!std::strcmp(v, "debug")) return LogLevel::debug;
        return LogLevel::warn;
    }();
    return level;
}

inline void log(LogLevel level, const std::string& msg) {
    static const char* names[] = {"error", "warn", "info", "debug"};
    if (level <= log_level()) std::cerr << "[cis " << names[static_cast<int>(level)] << "] " << msg << '\n';
}

}  // namespace cis
