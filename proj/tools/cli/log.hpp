#pragma once

#include <string>

namespace lsocv::cli {

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Read once from LSOCV_LOG_LEVEL (error, warn, info, debug); defaults to warn.
LogLevel log_level();
void log(LogLevel level, const std::string& message);

}  // namespace lsocv::cli
