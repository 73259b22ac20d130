#ifndef DIALQA_LOG_HPP
#define DIALQA_LOG_HPP

#include <string_view>

namespace dialqa {

enum class LogLevel { kQuiet = 0, kError = 1, kWarn = 2, kInfo = 3, kDebug = 4 };

// Read once from DIALQA_LOG (quiet, error, warn, info, debug); warn by default.
LogLevel log_level();
void set_log_level(LogLevel level);
void log_message(LogLevel level, std::string_view message);

}  // namespace dialqa

#endif  // DIALQA_LOG_HPP
