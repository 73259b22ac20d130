#include "dialqa/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <string>

namespace dialqa {
namespace {

LogLevel from_env() {
  const char* raw = std::getenv("DIALQA_LOG");
  if (raw == nullptr) return LogLevel::kWarn;
  const std::string v(raw);
  if (v == "quiet") return LogLevel::kQuiet;
  if (v == "error") return LogLevel::kError;
  if (v == "info") return LogLevel::kInfo;
  if (v == "debug") return LogLevel::kDebug;
  return LogLevel::kWarn;
}

std::atomic<int>& level_slot() {
  static std::atomic<int> level{static_cast<int>(from_env())};
  return level;
}

}  // namespace

LogLevel log_level() { return static_cast<LogLevel>(level_slot().load()); }
void set_log_level(LogLevel level) { level_slot().store(static_cast<int>(level)); }

void log_message(LogLevel level, std::string_view message) {
  if (static_cast<int>(level) > level_slot().load()) return;
  static constexpr const char* kNames[] = {"", "error", "warn", "info", "debug"};
  std::cerr << "[dialqa " << kNames[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace dialqa
