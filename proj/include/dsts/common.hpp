#pragma once

#include <stdexcept>
#include <string>

namespace dsts {

// Error taxonomy. The CLI maps each class to a fixed exit code; library code
// throws and never calls exit() itself.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};  // exit 2: bad flags, bad shapes, invalid settings

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};  // exit 3: unreadable/corrupt datasets and files

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};  // exit 4: NaN/Inf reached a place it must not

struct VersionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};  // exit 5: format version mismatch

// Exit code for an exception class (1 for anything unrecognized).
int exit_code_for(const std::exception& e);

// Process-wide knobs: pins the BLAS kernel family for this CPU when the user
// has not chosen one, and applies DSTS_THREADS. Idempotent; called lazily by
// the GEMM wrapper and explicitly by CLI main().
void runtime_init();

// Thread budget: DSTS_THREADS when set, hardware concurrency otherwise.
int max_threads();

}  // namespace dsts
