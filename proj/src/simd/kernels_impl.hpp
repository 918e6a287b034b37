#pragma once

#include "autoddpm/simd.hpp"

namespace autoddpm::simd::detail {

const Kernels& scalar_kernels();
#ifdef AUTODDPM_HAVE_AVX2_TU
const Kernels& avx2_kernels();
#endif

}  // namespace autoddpm::simd::detail
