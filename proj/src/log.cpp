#include "coffe/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <string>

namespace coffe {

namespace {

LogLevel level_from_env() {
  const char* v = std::getenv("COFFE_LOG");
  if (!v) return LogLevel::error;
  const std::string s(v);
  if (s == "debug") return LogLevel::debug;
  if (s == "info") return LogLevel::info;
  return LogLevel::error;
}

std::atomic<int>& threshold() {
  static std::atomic<int> level{static_cast<int>(level_from_env())};
  return level;
}

}  // namespace

LogLevel log_threshold() { return static_cast<LogLevel>(threshold().load()); }

void set_log_threshold(LogLevel level) { threshold().store(static_cast<int>(level)); }

void log_message(LogLevel level, std::string_view message) {
  if (static_cast<int>(level) > threshold().load()) return;
  static constexpr const char* kNames[] = {"error", "info", "debug"};
  std::cerr << '[' << kNames[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace coffe
