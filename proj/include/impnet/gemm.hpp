#pragma once

#include <Eigen/Core>

namespace impnet::gemm {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixView = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixView = Eigen::Map<const RowMatrix<T>>;

template <class T>
MatrixView<T> view(T* data, int rows, int cols) {
  return MatrixView<T>(data, rows, cols);
}

template <class T>
ConstMatrixView<T> view(const T* data, int rows, int cols) {
  return ConstMatrixView<T>(data, rows, cols);
}

// C (+)= op(A) * op(B), all row-major and contiguous.

template <class T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate = false) {
  auto out = view(c, m, n);
  if (accumulate) {
    out.noalias() += view(a, m, k) * view(b, k, n);
  } else {
    out.noalias() = view(a, m, k) * view(b, k, n);
  }
}

/// C (+)= A * B^T with A [m, k] and B [n, k].
template <class T>
void matmul_bt(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate = false) {
  auto out = view(c, m, n);
  if (accumulate) {
    out.noalias() += view(a, m, k) * view(b, n, k).transpose();
  } else {
    out.noalias() = view(a, m, k) * view(b, n, k).transpose();
  }
}

/// C (+)= A^T * B with A [k, m] and B [k, n].
template <class T>
void matmul_at(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate = false) {
  auto out = view(c, m, n);
  if (accumulate) {
    out.noalias() += view(a, k, m).transpose() * view(b, k, n);
  } else {
    out.noalias() = view(a, k, m).transpose() * view(b, k, n);
  }
}

}  // namespace impnet::gemm
