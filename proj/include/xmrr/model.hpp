#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "xmrr/attention.hpp"
#include "xmrr/rng.hpp"
#include "xmrr/tape.hpp"
#include "xmrr/tensor.hpp"

namespace xmrr {

enum class Component : std::size_t { title = 0, ingredients = 1, instructions = 2 };

constexpr std::array<const char*, 3> kComponentNames{"ttl", "ing", "ins"};

inline Component component_from_name(const std::string& name) {
    for (std::size_t i = 0; i < kComponentNames.size(); ++i)
        if (name == kComponentNames[i]) return Component(i);
    throw std::runtime_error("unknown component \"" + name + "\" (expected ttl|ing|ins)");
}

struct ModelConfig {
    std::size_t vocab_size = 0;       // filled from the vocabulary
    std::size_t dim = 512;            // d, per-component embedding width
    std::size_t layers = 2;           // transformer layers per level
    std::size_t heads = 4;
    std::size_t ffn_dim = 2048;       // 4 * dim at full scale
    std::size_t joint_dim = 1024;     // D, joint embedding width
    std::size_t image_dim = 2048;     // D_img, precomputed feature width
    std::size_t max_sentence_len = 20;
    std::size_t max_sentences = 20;

    void validate() const {
        if (vocab_size < 2) throw std::runtime_error("model config: vocab_size must be >= 2");
        if (dim == 0 || joint_dim == 0 || image_dim == 0 || ffn_dim == 0)
            throw std::runtime_error("model config: zero dimension");
        if (heads == 0 || dim % heads != 0)
            throw std::runtime_error("model config: dim " + std::to_string(dim) +
                                     " not divisible by heads " + std::to_string(heads));
        if (layers == 0) throw std::runtime_error("model config: layers must be >= 1");
        if (max_sentence_len == 0 || max_sentences == 0)
            throw std::runtime_error("model config: sequence limits must be >= 1");
    }
};

// All learnable tensors, keyed by canonical name in a stable insertion order.
// The names double as checkpoint keys.
template <typename T>
struct ParamStore {
    std::vector<std::string> names;
    std::vector<Tensor<T>> values;
    std::unordered_map<std::string, std::size_t> index;

    Tensor<T>& add(const std::string& name, Tensor<T> value) {
        if (index.count(name)) throw std::runtime_error("duplicate parameter name: " + name);
        index[name] = names.size();
        names.push_back(name);
        values.push_back(std::move(value));
        return values.back();
    }

    bool has(const std::string& name) const { return index.count(name) != 0; }

    Tensor<T>& get(const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw std::runtime_error("unknown parameter: " + name);
        return values[it->second];
    }
    const Tensor<T>& get(const std::string& name) const {
        return const_cast<ParamStore*>(this)->get(name);
    }

    std::size_t size() const { return names.size(); }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (std::size_t i = 0; i < names.size(); ++i) out.add(names[i], values[i].template cast<U>());
        return out;
    }
};

namespace detail {

// name -> shape for every learnable tensor, in canonical order
inline std::vector<std::pair<std::string, std::vector<std::size_t>>> param_layout(const ModelConfig& c) {
    std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
    auto layer_block = [&](const std::string& prefix) {
        for (std::size_t l = 0; l < c.layers; ++l) {
            const std::string p = prefix + ".l" + std::to_string(l) + ".";
            out.push_back({p + "attn.wq", {c.dim, c.dim}});
            out.push_back({p + "attn.bq", {c.dim}});
            out.push_back({p + "attn.wk", {c.dim, c.dim}});
            out.push_back({p + "attn.bk", {c.dim}});
            out.push_back({p + "attn.wv", {c.dim, c.dim}});
            out.push_back({p + "attn.bv", {c.dim}});
            out.push_back({p + "attn.wo", {c.dim, c.dim}});
            out.push_back({p + "attn.bo", {c.dim}});
            out.push_back({p + "ln1.g", {c.dim}});
            out.push_back({p + "ln1.b", {c.dim}});
            out.push_back({p + "ffn.w1", {c.dim, c.ffn_dim}});
            out.push_back({p + "ffn.b1", {c.ffn_dim}});
            out.push_back({p + "ffn.w2", {c.ffn_dim, c.dim}});
            out.push_back({p + "ffn.b2", {c.dim}});
            out.push_back({p + "ln2.g", {c.dim}});
            out.push_back({p + "ln2.b", {c.dim}});
        }
    };
    auto word_level = [&](const std::string& prefix) {
        out.push_back({prefix + ".tok_emb", {c.vocab_size, c.dim}});
        out.push_back({prefix + ".pos_emb", {c.max_sentence_len, c.dim}});
        layer_block(prefix);
    };
    auto sentence_level = [&](const std::string& prefix) {
        out.push_back({prefix + ".pos_emb", {c.max_sentences, c.dim}});
        layer_block(prefix);
    };

    word_level("ttl");
    word_level("ing.sent");
    sentence_level("ing.doc");
    word_level("ins.sent");
    sentence_level("ins.doc");

    out.push_back({"mrg.w", {3 * c.dim, c.joint_dim}});
    out.push_back({"mrg.b", {c.joint_dim}});
    out.push_back({"img.w", {c.image_dim, c.joint_dim}});
    out.push_back({"img.b", {c.joint_dim}});
    for (const char* a : kComponentNames)
        for (const char* b : kComponentNames) {
            if (std::string(a) == b) continue;
            out.push_back({std::string("g.") + b + "2" + a + ".w", {c.dim, c.dim}});
            out.push_back({std::string("g.") + b + "2" + a + ".b", {c.dim}});
        }
    for (const char* comp : kComponentNames) out.push_back({std::string("empty.") + comp, {c.dim}});
    return out;
}

inline bool is_embedding_param(const std::string& name) {
    return name.find("tok_emb") != std::string::npos || name.find("pos_emb") != std::string::npos ||
           name.rfind("empty.", 0) == 0;
}

inline bool is_gain_param(const std::string& name) {
    return name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0;
}

inline bool is_weight_matrix(const std::vector<std::size_t>& shape) { return shape.size() == 2; }

} // namespace detail

// Seeded initialization: weight matrices uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)),
// biases zero, layer-norm gains one, embedding tables (and the learned
// empty-component vectors) normal(0, 0.02). Draw order follows the canonical
// layout, so a given (config, seed) always produces the same parameters.
template <typename T>
ParamStore<T> init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamStore<T> store;
    Rng rng(mix_seed(seed, 0x9a7a));
    for (const auto& [name, shape] : detail::param_layout(cfg)) {
        Tensor<T> t(shape);
        if (detail::is_embedding_param(name)) {
            for (auto& v : t.data) v = T(rng.normal(0.0, 0.02));
        } else if (detail::is_weight_matrix(shape)) {
            const double bound = 1.0 / std::sqrt(double(shape[0]));
            for (auto& v : t.data) v = T(rng.uniform(-bound, bound));
        } else if (detail::is_gain_param(name)) {
            t.fill(T(1));
        } // biases stay zero
        store.add(name, std::move(t));
    }
    return store;
}

// ---- tape binding ----------------------------------------------------------

template <typename T>
struct LayerVars {
    AttentionVars<Tape<T>> attn;
    Var ln1_g, ln1_b, ffn_w1, ffn_b1, ffn_w2, ffn_b2, ln2_g, ln2_b;
};

template <typename T>
struct EncoderVars {
    Var tok_emb; // invalid for sentence-level encoders
    Var pos_emb;
    std::vector<LayerVars<T>> layers;
};

// Per-tape handles to every bound parameter, mirroring ParamStore names so a
// trainer can route gradients back.
template <typename T>
struct ModelVars {
    EncoderVars<T> ttl, ing_sent, ing_doc, ins_sent, ins_doc;
    Var mrg_w, mrg_b;
    Var img_w, img_b; // invalid when the image projector is not bound
    Var g_w[3][3], g_b[3][3]; // [from][to], diagonal unused
    Var empty[3];
    std::vector<std::pair<std::string, Var>> bound;
    bool has_image = false;
};

// Binds every parameter as a tape leaf. An entry in overrides replaces the
// stored tensor with an existing tape var (used by gradient verification to
// probe one parameter at a time).
template <typename T>
ModelVars<T> bind_model(Tape<T>& tp, const ParamStore<T>& store, const ModelConfig& cfg,
                        bool requires_grad, bool bind_image,
                        const std::unordered_map<std::string, Var>* overrides = nullptr) {
    ModelVars<T> mv;
    auto bind = [&](const std::string& name) {
        Var v;
        if (overrides) {
            auto it = overrides->find(name);
            if (it != overrides->end()) {
                v = it->second;
                mv.bound.emplace_back(name, v);
                return v;
            }
        }
        v = tp.input(store.get(name), requires_grad);
        mv.bound.emplace_back(name, v);
        return v;
    };
    auto bind_layers = [&](EncoderVars<T>& enc, const std::string& prefix) {
        enc.layers.resize(cfg.layers);
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            const std::string p = prefix + ".l" + std::to_string(l) + ".";
            LayerVars<T>& lv = enc.layers[l];
            lv.attn.wq = bind(p + "attn.wq");
            lv.attn.bq = bind(p + "attn.bq");
            lv.attn.wk = bind(p + "attn.wk");
            lv.attn.bk = bind(p + "attn.bk");
            lv.attn.wv = bind(p + "attn.wv");
            lv.attn.bv = bind(p + "attn.bv");
            lv.attn.wo = bind(p + "attn.wo");
            lv.attn.bo = bind(p + "attn.bo");
            lv.ln1_g = bind(p + "ln1.g");
            lv.ln1_b = bind(p + "ln1.b");
            lv.ffn_w1 = bind(p + "ffn.w1");
            lv.ffn_b1 = bind(p + "ffn.b1");
            lv.ffn_w2 = bind(p + "ffn.w2");
            lv.ffn_b2 = bind(p + "ffn.b2");
            lv.ln2_g = bind(p + "ln2.g");
            lv.ln2_b = bind(p + "ln2.b");
        }
    };
    auto bind_word = [&](EncoderVars<T>& enc, const std::string& prefix) {
        enc.tok_emb = bind(prefix + ".tok_emb");
        enc.pos_emb = bind(prefix + ".pos_emb");
        bind_layers(enc, prefix);
    };
    auto bind_sentence = [&](EncoderVars<T>& enc, const std::string& prefix) {
        enc.pos_emb = bind(prefix + ".pos_emb");
        bind_layers(enc, prefix);
    };

    bind_word(mv.ttl, "ttl");
    bind_word(mv.ing_sent, "ing.sent");
    bind_sentence(mv.ing_doc, "ing.doc");
    bind_word(mv.ins_sent, "ins.sent");
    bind_sentence(mv.ins_doc, "ins.doc");

    mv.mrg_w = bind("mrg.w");
    mv.mrg_b = bind("mrg.b");
    if (bind_image) {
        mv.img_w = bind("img.w");
        mv.img_b = bind("img.b");
        mv.has_image = true;
    }
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t a = 0; a < 3; ++a) {
            if (a == b) continue;
            const std::string base = std::string("g.") + kComponentNames[b] + "2" + kComponentNames[a];
            mv.g_w[b][a] = bind(base + ".w");
            mv.g_b[b][a] = bind(base + ".b");
        }
    for (std::size_t cidx = 0; cidx < 3; ++cidx) mv.empty[cidx] = bind(std::string("empty.") + kComponentNames[cidx]);
    return mv;
}

} // namespace xmrr
