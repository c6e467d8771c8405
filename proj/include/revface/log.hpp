#ifndef REVFACE_LOG_HPP_
#define REVFACE_LOG_HPP_

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>
#include <utility>

namespace revface {

enum class LogLevel { kDebug, kInfo, kWarning, kError };

inline std::string_view to_string(LogLevel level) {
  switch (level) {
    case LogLevel::kDebug: return "debug";
    case LogLevel::kInfo: return "info";
    case LogLevel::kWarning: return "warning";
    case LogLevel::kError: return "error";
  }
  return "?";
}

using LogSink = std::function<void(LogLevel, std::string_view)>;

namespace detail {
struct LogState {
  std::mutex mutex;
  LogLevel threshold = LogLevel::kInfo;
  LogSink sink;
};
inline LogState& log_state() {
  static LogState state;
  return state;
}
}  // namespace detail

/// Replaces the sink; an empty sink restores logging to stderr. Returns the
/// previous sink.
inline LogSink set_log_sink(LogSink sink) {
  auto& state = detail::log_state();
  std::lock_guard lock(state.mutex);
  return std::exchange(state.sink, std::move(sink));
}

inline void set_log_level(LogLevel level) {
  auto& state = detail::log_state();
  std::lock_guard lock(state.mutex);
  state.threshold = level;
}

inline void log(LogLevel level, std::string_view message) {
  auto& state = detail::log_state();
  std::lock_guard lock(state.mutex);
  if (level < state.threshold) return;
  if (state.sink) {
    state.sink(level, message);
    return;
  }
  std::cerr << "[" << to_string(level) << "] " << message << '\n';
}

inline void log_info(std::string_view message) { log(LogLevel::kInfo, message); }
inline void log_warning(std::string_view message) {
  log(LogLevel::kWarning, message);
}

}  // namespace revface

#endif  // REVFACE_LOG_HPP_
