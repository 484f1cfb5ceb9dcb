#pragma once

#include <cstdint>
#include <string_view>

namespace synseg {

// Writes "synseg: warning: <msg>" to stderr.
void warn(std::string_view message);
void info(std::string_view message);

// Number of warnings emitted by this process (used by tests).
uint64_t warning_count();

void set_quiet(bool quiet);

}  // namespace synseg
