#include "vclip/numerics/kernels.hpp"

#include <Eigen/Core>

namespace vclip::kernels {
namespace {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  using Map = Eigen::Map<RowMajor<T>>;
  using ConstMap = Eigen::Map<const RowMajor<T>>;
  const auto em = static_cast<Eigen::Index>(m);
  const auto en = static_cast<Eigen::Index>(n);
  const auto ek = static_cast<Eigen::Index>(k);
  Map out(c, em, en);
  if (!accumulate) out.setZero();
  if (!trans_a && !trans_b) {
    out.noalias() += ConstMap(a, em, ek) * ConstMap(b, ek, en);
  } else if (!trans_a && trans_b) {
    out.noalias() += ConstMap(a, em, ek) * ConstMap(b, en, ek).transpose();
  } else if (trans_a && !trans_b) {
    out.noalias() += ConstMap(a, ek, em).transpose() * ConstMap(b, ek, en);
  } else {
    out.noalias() += ConstMap(a, ek, em).transpose() * ConstMap(b, en, ek).transpose();
  }
}

template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, const float*,
                          const float*, float*, bool);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, const double*,
                           const double*, double*, bool);

}  // namespace vclip::kernels
