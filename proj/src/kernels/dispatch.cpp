#include <cstdlib>
#include <string>

#include "dgf/errors.hpp"
#include "dgf/kernels.hpp"

namespace dgf::kernels {

bool avx2_available() {
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

namespace {
const Ops* resolve() {
  if (const char* env = std::getenv("DGF_KERNELS")) {
    const std::string want(env);
    if (want == "scalar") return &scalar_ops();
    if (want == "avx2") {
      if (!avx2_available())
        throw ContractViolation("DGF_KERNELS=avx2 but CPU lacks avx2/fma");
      return &avx2_ops();
    }
    throw ContractViolation("DGF_KERNELS must be 'scalar' or 'avx2', got '" +
                            want + "'");
  }
  return avx2_available() ? &avx2_ops() : &scalar_ops();
}
}  // namespace

const Ops& ops() {
  static const Ops* active = resolve();
  return *active;
}

}  // namespace dgf::kernels
