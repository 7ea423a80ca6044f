#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "xmrr/attention.hpp"
#include "xmrr/corpus.hpp"
#include "xmrr/model.hpp"
#include "xmrr/tape.hpp"

namespace xmrr {

struct ComponentMask {
    bool title = true;
    bool ingredients = true;
    bool instructions = true;

    bool enabled(Component c) const {
        switch (c) {
            case Component::title: return title;
            case Component::ingredients: return ingredients;
            case Component::instructions: return instructions;
        }
        return false;
    }
};

// How a missing component enters the merge layer.
enum class MissingPolicy { empty_vector, hallucinate };

namespace detail {

template <typename T>
Var transformer_layer(Tape<T>& tp, const LayerVars<T>& p, Var x, const std::vector<std::uint8_t>& mask,
                      std::size_t heads) {
    Var attn = multi_head_self_attention(tp, p.attn, x, mask, heads);
    x = tp.layer_norm_rows(tp.add(x, attn), p.ln1_g, p.ln1_b);
    Var ff = tp.linear(tp.gelu(tp.linear(x, p.ffn_w1, p.ffn_b1)), p.ffn_w2, p.ffn_b2);
    return tp.layer_norm_rows(tp.add(x, ff), p.ln2_g, p.ln2_b);
}

// Shared trunk for both levels: input rows + positional embeddings for the
// first layer, then the layer stack, then mean pooling over positions.
template <typename T>
Var encode_rows(Tape<T>& tp, const EncoderVars<T>& enc, Var rows, std::size_t heads) {
    const std::size_t n = tp.value(rows).rows();
    const std::size_t max_pos = tp.value(enc.pos_emb).rows();
    if (n > max_pos)
        throw std::runtime_error("encoder: sequence length " + std::to_string(n) +
                                 " exceeds positional table " + std::to_string(max_pos));
    Var pos = n == max_pos ? enc.pos_emb : tp.slice_rows(enc.pos_emb, 0, n);
    Var x = tp.add(rows, pos);
    const std::vector<std::uint8_t> mask(n, 1);
    for (const auto& layer : enc.layers) x = transformer_layer(tp, layer, x, mask, heads);
    return tp.masked_mean_rows(x, mask);
}

} // namespace detail

// Sentence encoder TR: token + positional embeddings through the layer stack,
// mean-pooled over the real tokens. Padding is trimmed up front (pads only
// ever occupy the tail), which leaves the pooled output exactly invariant to
// appended padding.
template <typename T>
Var tr_encode(Tape<T>& tp, const EncoderVars<T>& enc, const TokenSequence& s, std::size_t heads) {
    if (s.empty()) throw std::runtime_error("tr_encode: all-pad input; substitute the empty-component vector");
    std::vector<std::int32_t> ids(s.ids.begin(), s.ids.begin() + std::ptrdiff_t(s.length));
    Var tokens = tp.gather_rows(enc.tok_emb, std::move(ids));
    return detail::encode_rows(tp, enc, tokens, heads);
}

// Hierarchical encoder HTR: a sentence-level TR per sentence, then a second
// TR with its own parameters and positional embeddings over sentence index.
template <typename T>
Var htr_encode(Tape<T>& tp, const EncoderVars<T>& sent_enc, const EncoderVars<T>& doc_enc,
               const std::vector<TokenSequence>& sentences, std::size_t heads) {
    if (sentences.empty())
        throw std::runtime_error("htr_encode: empty sentence list; substitute the empty-component vector");
    std::vector<Var> sent_vecs;
    sent_vecs.reserve(sentences.size());
    for (const auto& s : sentences) sent_vecs.push_back(tr_encode(tp, sent_enc, s, heads));
    Var stacked = tp.stack_rows(std::span<const Var>(sent_vecs));
    return detail::encode_rows(tp, doc_enc, stacked, heads);
}

// Mean of the projections of the available components into the target's
// space; with two sources this is (g_{b->a}(e_b) + g_{c->a}(e_c)) / 2, with
// one source just the single projection.
template <typename T>
Var hallucinate_component(Tape<T>& tp, const ModelVars<T>& mv,
                          const std::array<std::optional<Var>, 3>& available, Component target) {
    std::vector<Var> projections;
    for (std::size_t b = 0; b < 3; ++b) {
        if (b == std::size_t(target) || !available[b]) continue;
        projections.push_back(tp.linear(*available[b], mv.g_w[b][std::size_t(target)],
                                        mv.g_b[b][std::size_t(target)]));
    }
    if (projections.empty())
        throw std::runtime_error("hallucinate_component: no source components available");
    if (projections.size() == 1) return projections[0];
    Var acc = projections[0];
    for (std::size_t i = 1; i < projections.size(); ++i) acc = tp.add(acc, projections[i]);
    return tp.scale(acc, T(1) / T(projections.size()));
}

template <typename T>
struct RecipeEmbedVars {
    std::array<Var, 3> components; // e_ttl, e_ing, e_ins (order of Component)
    Var joint;                     // e_R, L2-normalized
};

// Full recipe pathway: component encoders, substitution for missing parts,
// then e_R = normalize(mrg([e_ing; e_ins; e_ttl])). Concatenation order is
// ingredients, instructions, title.
template <typename T>
RecipeEmbedVars<T> encode_recipe_embedding(Tape<T>& tp, const ModelVars<T>& mv, const ModelConfig& cfg,
                                           const TokenizedRecipe& r,
                                           const ComponentMask& include = {},
                                           MissingPolicy policy = MissingPolicy::empty_vector) {
    std::array<std::optional<Var>, 3> present;
    if (include.title && !r.title.empty())
        present[0] = tr_encode(tp, mv.ttl, r.title, cfg.heads);
    if (include.ingredients && !r.ingredients.empty())
        present[1] = htr_encode(tp, mv.ing_sent, mv.ing_doc, r.ingredients, cfg.heads);
    if (include.instructions && !r.instructions.empty())
        present[2] = htr_encode(tp, mv.ins_sent, mv.ins_doc, r.instructions, cfg.heads);

    if (!present[0] && !present[1] && !present[2])
        throw std::runtime_error("encode_recipe_embedding: recipe \"" + r.id + "\" has no usable components");

    RecipeEmbedVars<T> out;
    for (std::size_t c = 0; c < 3; ++c) {
        if (present[c]) {
            out.components[c] = *present[c];
        } else if (policy == MissingPolicy::hallucinate) {
            out.components[c] = hallucinate_component(tp, mv, present, Component(c));
        } else {
            out.components[c] = mv.empty[c];
        }
    }
    std::vector<Var> parts{out.components[1], out.components[2], out.components[0]};
    Var merged = tp.linear(tp.concat(std::span<const Var>(parts)), mv.mrg_w, mv.mrg_b);
    out.joint = tp.l2_normalize(merged);
    return out;
}

// e_I = normalize(img(feat)) over a precomputed feature vector.
template <typename T>
Var encode_image(Tape<T>& tp, const ModelVars<T>& mv, const ModelConfig& cfg,
                 std::span<const float> feat) {
    if (!mv.has_image) throw std::runtime_error("encode_image: image projector not bound");
    if (feat.size() != cfg.image_dim)
        throw std::runtime_error("encode_image: feature length " + std::to_string(feat.size()) +
                                 " != image_dim " + std::to_string(cfg.image_dim));
    Tensor<T> f({feat.size()});
    for (std::size_t i = 0; i < feat.size(); ++i) {
        if (!std::isfinite(feat[i]))
            throw std::runtime_error("encode_image: non-finite feature value at index " + std::to_string(i));
        f[i] = T(feat[i]);
    }
    return tp.l2_normalize(tp.linear(tp.constant(std::move(f)), mv.img_w, mv.img_b));
}

} // namespace xmrr
