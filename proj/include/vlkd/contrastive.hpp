#pragma once

#include "vlkd/ops.hpp"

namespace vlkd {

// Symmetric InfoNCE over a batch of matched row pairs. Row k of `a` and row
// k of `b` are positives; everything else in the batch is a negative. The
// temperature enters as tau = exp(-log_inv_tau), so it stays positive by
// parameterization and is never clamped; it receives gradient whenever it
// requires one.
template <typename T>
TensorPtr<T> symmetric_info_nce(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b,
                                const TensorPtr<T>& log_inv_tau) {
    if (a->shape != b->shape || a->shape.size() != 2)
        throw ShapeError("symmetric_info_nce: expected matching 2-d batches, got " + shape_str(a->shape) +
                         " vs " + shape_str(b->shape));
    const int batch = a->shape[0];
    auto sims = matmul_nt(tape, a, b); // [B,B], sims[k][j] = a_k . b_j
    auto logits = mul_scalar(tape, sims, exp_op(tape, log_inv_tau));
    auto diag = make_tensor<T>({batch, batch});
    for (int i = 0; i < batch; ++i) diag->at(i, i) = T(1);
    // L_a2b: each a-row softmax-normalized over all b candidates (rows);
    // L_b2a: each b-row normalized over all a candidates (columns)
    auto a2b = scale(tape, sum_all(tape, mul(tape, log_softmax(tape, logits, 1), diag)),
                     -1.0 / static_cast<double>(batch));
    auto b2a = scale(tape, sum_all(tape, mul(tape, log_softmax(tape, logits, 0), diag)),
                     -1.0 / static_cast<double>(batch));
    return scale(tape, add(tape, a2b, b2a), 0.5);
}

} // namespace vlkd
