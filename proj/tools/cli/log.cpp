#include "log.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>

namespace lsocv::cli {

LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("LSOCV_LOG_LEVEL");
        const std::string v = env ? env : "";
        if (v == "error") return LogLevel::Error;
        if (v == "info") return LogLevel::Info;
        if (v == "debug") return LogLevel::Debug;
        return LogLevel::Warn;
    }();
    return level;
}

void log(LogLevel level, const std::string& message) {
    if (level > log_level()) return;
    static std::mutex m;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::lock_guard lock(m);
    std::cerr << "[lsocv] " << names[static_cast<int>(level)] << ": " << message << '\n';
}

}  // namespace lsocv::cli
