#pragma once

#include <vector>

#include "ppasr/tensor.hpp"

namespace ppasr {

// Differentiable ops. Each op computes its forward value and, when a Tape is
// active and any input requires grad, records a backward step. Shape rules
// are stated per op; violations throw std::invalid_argument with both shapes
// in the message.

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// a [m,k], b [n,k] -> a.b^T [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// [m,n] -> [n,m]
Tensor transpose(const Tensor& a);

// elementwise, identical shapes
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// x [T,n] + b [n] broadcast over rows
Tensor add_bias(const Tensor& x, const Tensor& b);
Tensor scale(const Tensor& x, float c);

// row-wise softmax with max subtraction; x [T,n], n >= 1
Tensor softmax_rows(const Tensor& x);
// per-row layer norm over the last axis; gamma/beta [n]
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-5f);
// tanh-approximated GELU
Tensor gelu(const Tensor& x);
// table [V,D], ids in [0,V) -> [len(ids), D]
Tensor embedding(const Tensor& table, const std::vector<int>& ids);

// sequence-axis concatenation / slicing
Tensor concat_rows(const std::vector<Tensor>& xs);
Tensor slice_rows(const Tensor& x, int r0, int r1);
Tensor concat_cols(const std::vector<Tensor>& xs);
Tensor slice_cols(const Tensor& x, int c0, int c1);

// [T,n] -> [1,n]
Tensor mean_rows(const Tensor& x);
// -> scalar [1]
Tensor sum_all(const Tensor& x);

// x [T,in] . W^T + b, W [out,in], b [out] or undefined for no bias
Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b = Tensor());

// kernel-3 unfold with zero padding 1: x [T,C] -> [T_out, 3C],
// T_out = floor((T-1)/stride) + 1
Tensor unfold_k3(const Tensor& x, int stride);

// adds -1e9 to entries above the diagonal (j > i); square or [Tq,Tk] with Tq<=Tk
Tensor causal_mask(const Tensor& scores);

// logits [T,V], targets length T with ids < V -> mean NLL scalar
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);
// pred single-element -> (pred-target)^2 scalar
Tensor mse_loss(const Tensor& pred, float target);

// value copy that blocks gradient flow
Tensor detach(const Tensor& x);

}  // namespace ppasr
