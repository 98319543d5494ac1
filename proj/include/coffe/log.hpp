#pragma once

#include <string_view>

namespace coffe {

enum class LogLevel { error = 0, info = 1, debug = 2 };

/// Threshold from COFFE_LOG={error,info,debug}; defaults to error.
LogLevel log_threshold();
void set_log_threshold(LogLevel level);

/// Writes "[level] message" to stderr when `level` passes the threshold.
void log_message(LogLevel level, std::string_view message);

}  // namespace coffe
