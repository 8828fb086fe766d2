// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

#include "avfuse/numerics/tensor.hpp"

// Gradient-free tensor math. The autograd ops in autograd.hpp are built on
// these kernels, so every result here is bit-identical to the forward value
// recorded on a tape.
namespace avfuse::kernels {

// Raw row-major GEMM kernels. Each output element accumulates over the
// inner dimension in ascending order, independent of how many rows or
// columns the call covers, so results do not depend on batch composition.
// All kernels accumulate into `c` (callers zero it first if needed).
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n);  // c[m,n] += a[m,k] * b[k,n]
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n);  // c[m,n] += a[m,k] * b[n,k]^T
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n);  // c[m,n] += a[k,m]^T * b[k,n]

}  // namespace avfuse::kernels

namespace avfuse {

/// Matrix product of a (m x k) and b (k x n). Leading dimensions of `a` are
/// flattened into rows; the result keeps them.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Softmax over the last dimension, computed with max-subtraction.
Tensor softmax_lastdim(const Tensor& x);

Tensor sigmoid(const Tensor& x);

/// Per-row normalization to zero mean / unit variance followed by the
/// affine map `gain * xhat + bias`.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

/// x * weight + bias, broadcast over leading dimensions of x.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

double gelu(double x);
double gelu_grad(double x);

}  // namespace avfuse
