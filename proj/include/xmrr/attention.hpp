#pragma once

#include <cmath>
#include <vector>

#include "xmrr/tape.hpp"

namespace xmrr {

template <typename TapeT>
struct AttentionVars {
    Var wq, bq, wk, bk, wv, bv, wo, bo;
};

// Standard scaled dot-product self-attention over a (seq_len x d) block.
// pad_mask marks real positions with 1; padded key positions are excluded by
// an additive -1e9 on their score columns before the softmax. Rows at padded
// query positions still produce output but are dropped by the downstream
// masked mean.
template <typename T>
Var multi_head_self_attention(Tape<T>& tp, const AttentionVars<Tape<T>>& p, Var x,
                              const std::vector<std::uint8_t>& pad_mask, std::size_t heads) {
    const Tensor<T>& xv = tp.value(x);
    if (xv.rank() != 2) throw std::runtime_error("attention: input must be (seq_len x d)");
    const std::size_t s = xv.rows(), d = xv.cols();
    if (heads == 0 || d % heads != 0)
        throw std::runtime_error("attention: d=" + std::to_string(d) + " not divisible by heads=" +
                                 std::to_string(heads));
    if (pad_mask.size() != s) throw std::runtime_error("attention: pad_mask size mismatch");
    const std::size_t dh = d / heads;
    const T inv_sqrt_dh = T(1) / std::sqrt(T(dh));

    Var q = tp.linear(x, p.wq, p.bq);
    Var k = tp.linear(x, p.wk, p.bk);
    Var v = tp.linear(x, p.wv, p.bv);

    // additive key mask, shared across heads and query rows
    bool any_pad = false;
    for (auto m : pad_mask) any_pad = any_pad || (m == 0);
    Var mask_add{};
    if (any_pad) {
        Tensor<T> m({s, s});
        for (std::size_t i = 0; i < s; ++i)
            for (std::size_t j = 0; j < s; ++j) m.at(i, j) = pad_mask[j] ? T(0) : T(kAttnMaskFill);
        mask_add = tp.constant(std::move(m));
    }

    std::vector<Var> head_ctx;
    head_ctx.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Var qh = tp.slice_cols(q, h * dh, (h + 1) * dh);
        Var kh = tp.slice_cols(k, h * dh, (h + 1) * dh);
        Var vh = tp.slice_cols(v, h * dh, (h + 1) * dh);
        Var scores = tp.scale(tp.matmul_nt(qh, kh), inv_sqrt_dh);
        if (any_pad) scores = tp.add(scores, mask_add);
        Var probs = tp.softmax_rows(scores);
        head_ctx.push_back(tp.matmul(probs, vh));
    }
    Var ctx = heads == 1 ? head_ctx[0] : tp.concat(std::span<const Var>(head_ctx));
    return tp.linear(ctx, p.wo, p.bo);
}

} // namespace xmrr
