#include <cstdlib>
#include <string>
#include <vector>

#include "pvc/kernels.hpp"

namespace pvc::kernels {

#if defined(__x86_64__) || defined(_M_X64)
const Ops& avx2_ops();
static bool cpu_has_avx2() { return __builtin_cpu_supports("avx2") != 0; }
#endif
#if defined(__aarch64__)
const Ops& neon_ops();
#endif

std::vector<std::string> available_backends() {
  std::vector<std::string> v{"scalar"};
#if defined(__x86_64__) || defined(_M_X64)
  if (cpu_has_avx2()) v.emplace_back("avx2");
#endif
#if defined(__aarch64__)
  v.emplace_back("neon");
#endif
  return v;
}

const Ops* backend_by_name(const std::string& name) {
  if (name == "scalar") return &scalar_ops();
#if defined(__x86_64__) || defined(_M_X64)
  if (name == "avx2" && cpu_has_avx2()) return &avx2_ops();
#endif
#if defined(__aarch64__)
  if (name == "neon") return &neon_ops();
#endif
  return nullptr;
}

static const Ops& select() {
  if (const char* env = std::getenv("PVC_KERNELS")) {
    if (const Ops* o = backend_by_name(env)) return *o;
    // Unknown or unsupported override falls back to the reference kernels.
    return scalar_ops();
  }
#if defined(__x86_64__) || defined(_M_X64)
  if (cpu_has_avx2()) return avx2_ops();
#endif
#if defined(__aarch64__)
  return neon_ops();
#endif
  return scalar_ops();
}

const Ops& active() {
  static const Ops& ops = select();
  return ops;
}

}  // namespace pvc::kernels
