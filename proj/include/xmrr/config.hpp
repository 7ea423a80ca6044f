#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "xmrr/corpus.hpp"
#include "xmrr/encoders.hpp"
#include "xmrr/losses.hpp"
#include "xmrr/model.hpp"

namespace xmrr {

struct TrainOptions {
    double lr = 1e-4;
    double lr_decay = 0.1;
    std::size_t lr_decay_every = 30;
    std::size_t batch_size_paired = 128;
    std::size_t batch_size_text = 256;
    std::size_t epochs = 90;
    bool use_text_only = true;
    double grad_clip = 0.0;          // 0 disables
    std::size_t val_rank_size = 1000; // validation ranking capped at dataset size
    double stop_at_val_r1 = -1.0;     // negative disables early stop
};

struct EvalOptions {
    std::size_t ranking_size = 1000; // N
    std::size_t groups = 10;         // G
    std::uint64_t seed = 0;
    std::string direction = "image-to-recipe";
};

struct CorpusOptions {
    std::size_t max_sentence_len = 20;
    std::size_t max_sentences = 20;
    std::size_t min_freq = 5;
    std::size_t max_vocab = 30000;
};

// One reproducible run: everything a subcommand needs, parseable from a
// single JSON file. Unknown keys are rejected at every level.
struct RunConfig {
    std::uint64_t seed = 0;
    CorpusOptions corpus;
    ModelConfig model; // vocab_size filled after the vocabulary is built
    TrainOptions train;
    LossConfig loss;
    EvalOptions eval;
    ComponentMask components;

    EncodeLimits limits() const {
        return {.max_sentence_len = corpus.max_sentence_len, .max_sentences = corpus.max_sentences};
    }

    // model config with sequence limits resolved from the corpus options
    ModelConfig resolved_model(std::size_t vocab_size) const {
        ModelConfig m = model;
        m.vocab_size = vocab_size;
        m.max_sentence_len = corpus.max_sentence_len;
        m.max_sentences = corpus.max_sentences;
        return m;
    }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& ctx,
                       std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw std::runtime_error("config: \"" + ctx + "\" must be an object");
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : allowed) ok = ok || item.key() == k;
        if (!ok) throw std::runtime_error("config: unknown key \"" + item.key() + "\" in " + ctx);
    }
}

template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

} // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j;
    j["seed"] = c.seed;
    j["corpus"] = {{"max_sentence_len", c.corpus.max_sentence_len},
                   {"max_sentences", c.corpus.max_sentences},
                   {"min_freq", c.corpus.min_freq},
                   {"max_vocab", c.corpus.max_vocab}};
    j["model"] = {{"dim", c.model.dim},         {"layers", c.model.layers},
                  {"heads", c.model.heads},     {"ffn_dim", c.model.ffn_dim},
                  {"joint_dim", c.model.joint_dim}, {"image_dim", c.model.image_dim},
                  {"vocab_size", c.model.vocab_size}};
    j["train"] = {{"lr", c.train.lr},
                  {"lr_decay", c.train.lr_decay},
                  {"lr_decay_every", c.train.lr_decay_every},
                  {"batch_size_paired", c.train.batch_size_paired},
                  {"batch_size_text", c.train.batch_size_text},
                  {"epochs", c.train.epochs},
                  {"use_text_only", c.train.use_text_only},
                  {"grad_clip", c.train.grad_clip},
                  {"val_rank_size", c.train.val_rank_size},
                  {"stop_at_val_r1", c.train.stop_at_val_r1}};
    j["loss"] = {{"margin", c.loss.margin},
                 {"alpha_paired", c.loss.alpha_paired},
                 {"beta_paired", c.loss.beta_paired},
                 {"alpha_text", c.loss.alpha_text},
                 {"beta_text", c.loss.beta_text},
                 {"enable_rec", c.loss.enable_rec},
                 {"identity_heads", c.loss.identity_heads}};
    j["eval"] = {{"ranking_size", c.eval.ranking_size},
                 {"groups", c.eval.groups},
                 {"seed", c.eval.seed},
                 {"direction", c.eval.direction}};
    j["components"] = {{"title", c.components.title},
                       {"ingredients", c.components.ingredients},
                       {"instructions", c.components.instructions}};
    return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    using detail::check_keys;
    using detail::read_if;
    check_keys(j, "config", {"seed", "corpus", "model", "train", "loss", "eval", "components"});
    RunConfig c;
    read_if(j, "seed", c.seed);
    if (j.contains("corpus")) {
        const auto& k = j.at("corpus");
        check_keys(k, "corpus", {"max_sentence_len", "max_sentences", "min_freq", "max_vocab"});
        read_if(k, "max_sentence_len", c.corpus.max_sentence_len);
        read_if(k, "max_sentences", c.corpus.max_sentences);
        read_if(k, "min_freq", c.corpus.min_freq);
        read_if(k, "max_vocab", c.corpus.max_vocab);
    }
    if (j.contains("model")) {
        const auto& k = j.at("model");
        check_keys(k, "model",
                   {"dim", "layers", "heads", "ffn_dim", "joint_dim", "image_dim", "vocab_size"});
        read_if(k, "dim", c.model.dim);
        read_if(k, "layers", c.model.layers);
        read_if(k, "heads", c.model.heads);
        read_if(k, "ffn_dim", c.model.ffn_dim);
        read_if(k, "joint_dim", c.model.joint_dim);
        read_if(k, "image_dim", c.model.image_dim);
        read_if(k, "vocab_size", c.model.vocab_size);
    }
    if (j.contains("train")) {
        const auto& k = j.at("train");
        check_keys(k, "train",
                   {"lr", "lr_decay", "lr_decay_every", "batch_size_paired", "batch_size_text",
                    "epochs", "use_text_only", "grad_clip", "val_rank_size", "stop_at_val_r1"});
        read_if(k, "lr", c.train.lr);
        read_if(k, "lr_decay", c.train.lr_decay);
        read_if(k, "lr_decay_every", c.train.lr_decay_every);
        read_if(k, "batch_size_paired", c.train.batch_size_paired);
        read_if(k, "batch_size_text", c.train.batch_size_text);
        read_if(k, "epochs", c.train.epochs);
        read_if(k, "use_text_only", c.train.use_text_only);
        read_if(k, "grad_clip", c.train.grad_clip);
        read_if(k, "val_rank_size", c.train.val_rank_size);
        read_if(k, "stop_at_val_r1", c.train.stop_at_val_r1);
    }
    if (j.contains("loss")) {
        const auto& k = j.at("loss");
        check_keys(k, "loss",
                   {"margin", "alpha_paired", "beta_paired", "alpha_text", "beta_text", "enable_rec",
                    "identity_heads"});
        read_if(k, "margin", c.loss.margin);
        read_if(k, "alpha_paired", c.loss.alpha_paired);
        read_if(k, "beta_paired", c.loss.beta_paired);
        read_if(k, "alpha_text", c.loss.alpha_text);
        read_if(k, "beta_text", c.loss.beta_text);
        read_if(k, "enable_rec", c.loss.enable_rec);
        read_if(k, "identity_heads", c.loss.identity_heads);
    }
    if (j.contains("eval")) {
        const auto& k = j.at("eval");
        check_keys(k, "eval", {"ranking_size", "groups", "seed", "direction"});
        read_if(k, "ranking_size", c.eval.ranking_size);
        read_if(k, "groups", c.eval.groups);
        read_if(k, "seed", c.eval.seed);
        read_if(k, "direction", c.eval.direction);
        if (c.eval.direction != "image-to-recipe" && c.eval.direction != "recipe-to-image")
            throw std::runtime_error("config: eval.direction must be image-to-recipe or recipe-to-image");
    }
    if (j.contains("components")) {
        const auto& k = j.at("components");
        check_keys(k, "components", {"title", "ingredients", "instructions"});
        read_if(k, "title", c.components.title);
        read_if(k, "ingredients", c.components.ingredients);
        read_if(k, "instructions", c.components.instructions);
    }
    c.loss.validate();
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config file " + path + ": " + e.what());
    }
    return run_config_from_json(j);
}

} // namespace xmrr
