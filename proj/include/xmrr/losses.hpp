#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "xmrr/corpus.hpp"
#include "xmrr/model.hpp"
#include "xmrr/tape.hpp"

namespace xmrr {

// Margin and loss weights. One (alpha, beta) pair per batch mode.
struct LossConfig {
    double margin = 0.3;
    double alpha_paired = 1.0;
    double beta_paired = 1.0;
    double alpha_text = 0.0;
    double beta_text = 1.0;
    bool enable_rec = true;     // L_rec on/off
    bool identity_heads = false; // replace the six g maps with identity

    void validate() const {
        if (margin <= 0) throw std::runtime_error("loss config: margin must be > 0");
        if (alpha_paired < 0 || beta_paired < 0 || alpha_text < 0 || beta_text < 0)
            throw std::runtime_error("loss config: weights must be >= 0");
    }
};

// max(0, c(a, n) - c(a, p) + m)
template <typename T>
Var triplet_cos(Tape<T>& tp, Var anchor, Var positive, Var negative, T margin) {
    Var delta = tp.sub(tp.cosine_similarity(anchor, negative), tp.cosine_similarity(anchor, positive));
    return tp.relu(tp.add_scalar(delta, margin));
}

// Bidirectional form: the anchor role is taken once per modality.
template <typename T>
Var bi_triplet(Tape<T>& tp, Var a_i, Var b_i, Var b_j, Var a_j, T margin) {
    return tp.add(triplet_cos(tp, a_i, b_i, b_j, margin), triplet_cos(tp, b_i, a_i, a_j, margin));
}

// In-batch negatives: for each anchor i, every other sample j in the batch is
// a negative. Averages over the B-1 valid negatives per anchor, then over
// anchors, so the magnitude is batch-size invariant.
template <typename T>
Var batch_bi_loss(Tape<T>& tp, std::span<const Var> a_rows, std::span<const Var> b_rows, T margin) {
    const std::size_t batch = a_rows.size();
    if (batch < 2) throw std::runtime_error("batch_bi_loss: batch size must be >= 2");
    if (b_rows.size() != batch) throw std::runtime_error("batch_bi_loss: side sizes differ");
    std::vector<Var> per_anchor;
    per_anchor.reserve(batch);
    std::vector<Var> terms;
    terms.reserve(batch - 1);
    for (std::size_t i = 0; i < batch; ++i) {
        terms.clear();
        for (std::size_t j = 0; j < batch; ++j) {
            if (j == i) continue;
            terms.push_back(bi_triplet(tp, a_rows[i], b_rows[i], b_rows[j], a_rows[j], margin));
        }
        per_anchor.push_back(tp.mean(std::span<const Var>(terms)));
    }
    return tp.mean(std::span<const Var>(per_anchor));
}

// L_pair: a = image embeddings, b = recipe embeddings.
template <typename T>
Var pair_loss(Tape<T>& tp, std::span<const Var> image_rows, std::span<const Var> recipe_rows, T margin) {
    return batch_bi_loss(tp, image_rows, recipe_rows, margin);
}

// L_rec: for every ordered component pair (a, b), a != b, align e_a with the
// normalized projection g_{b->a}(e_b) under the bidirectional in-batch loss,
// then average the six terms.
template <typename T>
Var recipe_component_loss(Tape<T>& tp, const std::vector<std::array<Var, 3>>& components,
                          const ModelVars<T>& mv, T margin, bool identity_heads = false) {
    const std::size_t batch = components.size();
    if (batch < 2) throw std::runtime_error("recipe_component_loss: batch size must be >= 2");
    std::vector<Var> terms;
    terms.reserve(6);
    std::vector<Var> anchor_rows(batch), projected_rows(batch);
    for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = 0; b < 3; ++b) {
            if (a == b) continue;
            for (std::size_t i = 0; i < batch; ++i) {
                anchor_rows[i] = components[i][a];
                Var proj = identity_heads ? components[i][b]
                                          : tp.linear(components[i][b], mv.g_w[b][a], mv.g_b[b][a]);
                projected_rows[i] = tp.l2_normalize(proj);
            }
            terms.push_back(batch_bi_loss(tp, std::span<const Var>(anchor_rows),
                                          std::span<const Var>(projected_rows), margin));
        }
    }
    return tp.mean(std::span<const Var>(terms));
}

// alpha * L_pair + beta * L_rec with the (alpha, beta) pair selected by batch
// mode. For text-only batches the pair term is absent from the graph
// entirely, not multiplied by zero.
template <typename T>
Var total_loss(Tape<T>& tp, std::optional<Var> pair, std::optional<Var> rec, BatchMode mode,
               const LossConfig& cfg) {
    cfg.validate();
    const double alpha = mode == BatchMode::paired ? cfg.alpha_paired : cfg.alpha_text;
    const double beta = mode == BatchMode::paired ? cfg.beta_paired : cfg.beta_text;
    if (mode == BatchMode::paired && alpha > 0 && !pair)
        throw std::runtime_error("total_loss: paired mode requires image embeddings");
    std::vector<Var> terms;
    if (pair && mode == BatchMode::paired && alpha > 0) terms.push_back(tp.scale(*pair, T(alpha)));
    if (rec && beta > 0) terms.push_back(tp.scale(*rec, T(beta)));
    if (terms.empty()) throw std::runtime_error("total_loss: no active loss terms");
    return terms.size() == 1 ? terms[0] : tp.sum(std::span<const Var>(terms));
}

} // namespace xmrr
