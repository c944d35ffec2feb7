#include "dsts/common.hpp"

#include <dlfcn.h>

#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>

extern "C" void openblas_set_num_threads(int);

namespace dsts {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  if (dynamic_cast<const VersionError*>(&e)) return 5;
  return 1;
}

int max_threads() {
  if (const char* env = std::getenv("DSTS_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

namespace {

// OpenBLAS picks its kernel family from the CPU model name and falls back to
// a generic (slow) kernel on models it does not recognize; virtualized CPUs
// usually report such a model. The instruction set is what actually matters,
// so pin the family from CPUID when the user has not pinned one. Returns
// whether a pin was written.
bool pin_blas_core_type() {
  if (std::getenv("OPENBLAS_CORETYPE")) return false;
#if defined(__x86_64__) && defined(__GNUC__)
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx512f") && __builtin_cpu_supports("avx512dq") &&
      __builtin_cpu_supports("avx512bw") && __builtin_cpu_supports("avx512vl")) {
    // The Cooperlake kernels are tuned tighter than the SkylakeX ones and run
    // on any AVX512BF16 part; measured ~20% faster on the conv GEMM shapes.
    bool bf16 = __builtin_cpu_supports("avx512bf16");
    setenv("OPENBLAS_CORETYPE", bf16 ? "COOPERLAKE" : "SKYLAKEX", 0);
    return true;
  }
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
    setenv("OPENBLAS_CORETYPE", "HASWELL", 0);
    return true;
  }
#endif
  return false;
}

// Dynamic-arch OpenBLAS resolves the kernel table in a library constructor,
// before main ever runs, so the pin above lands too late on its own. The
// dispatcher exports its selection entry points; re-run them so the pinned
// family takes effect. No-op on builds without dynamic dispatch.
void reselect_blas_kernels() {
  using Fn = void (*)();
  Fn quit = reinterpret_cast<Fn>(dlsym(RTLD_DEFAULT, "gotoblas_dynamic_quit"));
  Fn init = reinterpret_cast<Fn>(dlsym(RTLD_DEFAULT, "gotoblas_dynamic_init"));
  if (quit && init) {
    quit();
    init();
  }
}

}  // namespace

void runtime_init() {
  static std::once_flag once;
  std::call_once(once, [] {
    if (pin_blas_core_type()) reselect_blas_kernels();
    openblas_set_num_threads(max_threads());
  });
}

}  // namespace dsts
