#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "kernels_impl.hpp"

namespace autoddpm::simd {
namespace {

Isa initial_isa() noexcept {
  Isa isa = detected_isa();
  if (const char* env = std::getenv("AUTODDPM_SIMD")) {
    const std::string v(env);
    if (v == "scalar") isa = Isa::scalar;
    else if (v == "avx2" && isa_available(Isa::avx2)) isa = Isa::avx2;
  }
  return isa;
}

std::atomic<Isa>& active_slot() noexcept {
  static std::atomic<Isa> slot{initial_isa()};
  return slot;
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
  }
  return "unknown";
}

bool isa_available(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar: return true;
    case Isa::avx2:
#if defined(AUTODDPM_HAVE_AVX2_TU) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Isa detected_isa() noexcept { return isa_available(Isa::avx2) ? Isa::avx2 : Isa::scalar; }

Isa active_isa() noexcept { return active_slot().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_available(isa)) {
    throw std::invalid_argument("SIMD variant not available on this CPU: " + std::string(isa_name(isa)));
  }
  active_slot().store(isa, std::memory_order_relaxed);
}

const Kernels& kernels(Isa isa) {
  if (!isa_available(isa)) {
    throw std::invalid_argument("SIMD variant not available on this CPU: " + std::string(isa_name(isa)));
  }
#ifdef AUTODDPM_HAVE_AVX2_TU
  if (isa == Isa::avx2) return detail::avx2_kernels();
#endif
  return detail::scalar_kernels();
}

const Kernels& active() noexcept {
#ifdef AUTODDPM_HAVE_AVX2_TU
  if (active_isa() == Isa::avx2) return detail::avx2_kernels();
#endif
  return detail::scalar_kernels();
}

}  // namespace autoddpm::simd
