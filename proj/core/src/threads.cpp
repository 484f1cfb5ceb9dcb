#include "synseg/threads.hpp"

#include <cblas.h>

#include <cstdlib>
#include <string>

#include "synseg/log.hpp"

namespace synseg {

void set_num_threads(int n) { openblas_set_num_threads(n < 1 ? 1 : n); }

int configure_threads_from_env() {
  int n = 1;
  if (const char* v = std::getenv(kThreadsEnv); v && *v) {
    try {
      n = std::stoi(v);
    } catch (const std::exception&) {
      warn(std::string("ignoring malformed ") + kThreadsEnv + "='" + v + "'");
    }
    if (n < 1) n = 1;
  }
  set_num_threads(n);
  return n;
}

}  // namespace synseg
