#pragma once

#include <cstddef>

namespace vclip::kernels {

/// C (+)= op(A) * op(B) on row-major buffers, where op(A) is m x k and op(B) is k x n.
/// A is stored k x m when trans_a is set, B is stored n x k when trans_b is set.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate);

}  // namespace vclip::kernels
