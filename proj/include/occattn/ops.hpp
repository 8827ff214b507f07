#pragma once

#include <cstddef>
#include <vector>

#include "occattn/autodiff.hpp"

namespace occattn::ops {

// Linear algebra.
Var matmul(const Var& a, const Var& b);               // [m,k] x [k,n]
Var batched_matmul(const Var& a, const Var& b);       // [B,m,k] x [B,k,n]
Var transpose(const Var& x);                          // swaps the last two axes (rank 2 or 3)
/// x[..., in] W[in, out] + b[out] -> [..., out]; leading axes are treated as rows.
Var fully_connected(const Var& x, const Var& weight, const Var& bias);

// Elementwise with trailing-aligned, same-rank broadcasting (extent 1 stretches).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var relu(const Var& x);
Var sigmoid(const Var& x);

// Reductions and shape.
Var sum(const Var& x);
Var mean(const Var& x);
Var reshape(const Var& x, Shape shape);
Var global_average_pool(const Var& x);  // [B,C,H,W] -> [B,C]

// Softmax along the last axis.
Var softmax_rows(const Var& x);

struct ConvOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Cross-correlation x[B,C,H,W] * w[F,C,kh,kw] -> [B,F,H',W'] via im2col + GEMM.
Var conv2d(const Var& x, const Var& w, ConvOptions options = {});
/// Same contract evaluated with direct nested loops; reference path for the GEMM version.
Var conv2d_direct(const Var& x, const Var& w, ConvOptions options = {});
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

struct Normalized {
  Var output;
  Tensor mean;      // reduced axes kept with extent 1
  Tensor variance;  // population variance, same shape as mean
};

/// (x - mean) / sqrt(var + eps) with moments taken over `axes`.
Normalized batch_normalize(const Var& x, const std::vector<std::size_t>& axes, double eps);

/// Mean binary cross-entropy of sigmoid(logits) against {0,1} labels, fused log-sum-exp form.
Var bce_with_logits(const Var& logits, const Tensor& labels);

}  // namespace occattn::ops
