#pragma once

namespace synseg {

inline constexpr const char* kThreadsEnv = "SYNSEG_THREADS";

// BLAS worker threads. One thread (the default) keeps every reduction in
// a fixed order, which the bit-reproducibility guarantees rely on.
void set_num_threads(int n);

// Reads SYNSEG_THREADS (default 1); returns the count applied.
int configure_threads_from_env();

}  // namespace synseg
