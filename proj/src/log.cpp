#include "csfn/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace csfn {

namespace {
std::atomic<LogLevel> g_level{LogLevel::kInfo};
std::atomic<std::size_t> g_warnings{0};
std::mutex g_mutex;

void emit(LogLevel level, const char* tag, const std::string& msg) {
  if (level < g_level.load()) return;
  std::lock_guard lock(g_mutex);
  std::cerr << "[" << tag << "] " << msg << '\n';
}
}  // namespace

void set_log_level(LogLevel level) { g_level = level; }
LogLevel log_level() { return g_level.load(); }

void log_info(const std::string& msg) { emit(LogLevel::kInfo, "info", msg); }

void log_warn(const std::string& msg) {
  ++g_warnings;
  emit(LogLevel::kWarn, "warn", msg);
}

void log_error(const std::string& msg) { emit(LogLevel::kError, "error", msg); }

std::size_t warning_count() { return g_warnings.load(); }

}  // namespace csfn
