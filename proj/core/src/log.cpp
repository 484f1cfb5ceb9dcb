#include "synseg/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace synseg {

namespace {
std::atomic<uint64_t> g_warnings{0};
std::atomic<bool> g_quiet{false};
std::mutex g_log_mutex;
}  // namespace

void warn(std::string_view message) {
  g_warnings.fetch_add(1);
  std::lock_guard lock(g_log_mutex);
  std::cerr << "synseg: warning: " << message << '\n';
}

void info(std::string_view message) {
  if (g_quiet.load()) return;
  std::lock_guard lock(g_log_mutex);
  std::cerr << "synseg: " << message << '\n';
}

uint64_t warning_count() { return g_warnings.load(); }

void set_quiet(bool quiet) { g_quiet.store(quiet); }

}  // namespace synseg
