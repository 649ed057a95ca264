#pragma once

#include "diratlas/kernels.hpp"

namespace diratlas::kernels::detail {

// Each returns nullptr when the variant was not compiled in.
const KernelTable* avx2_table_impl() noexcept;
const KernelTable* neon_table_impl() noexcept;

}  // namespace diratlas::kernels::detail
