#pragma once

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xmrr/checkpoint.hpp"
#include "xmrr/config.hpp"
#include "xmrr/corpus.hpp"
#include "xmrr/retrieval.hpp"
#include "xmrr/trainer.hpp"

namespace xmrr {
namespace cli {

namespace detail {

inline RunConfig load_config_with_env(const std::string& path) {
    RunConfig cfg = load_run_config(path);
    if (const char* env = std::getenv("XMRR_SEED")) cfg.seed = std::strtoull(env, nullptr, 10);
    return cfg;
}

inline ComponentMask drop_to_mask(const std::vector<std::string>& drop) {
    ComponentMask mask;
    for (const auto& name : drop) {
        switch (component_from_name(name)) {
            case Component::title: mask.title = false; break;
            case Component::ingredients: mask.ingredients = false; break;
            case Component::instructions: mask.instructions = false; break;
        }
    }
    return mask;
}

inline MissingPolicy policy_from_name(const std::string& name) {
    if (name == "empty") return MissingPolicy::empty_vector;
    if (name == "hallucinate") return MissingPolicy::hallucinate;
    throw std::runtime_error("unknown missing-component policy \"" + name + "\" (expected empty|hallucinate)");
}

inline void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write output file: " + path);
    out << content;
}

inline std::vector<TokenizedRecipe> encode_corpus(const Vocabulary& vocab, const RunConfig& cfg,
                                                  const std::string& data_path) {
    auto records = parse_recipe_corpus(data_path, cfg.model.image_dim);
    std::vector<TokenizedRecipe> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(encode_recipe(vocab, r, cfg.limits()));
    return out;
}

inline std::vector<TokenizedRecipe> paired_only(std::vector<TokenizedRecipe> recs) {
    std::vector<TokenizedRecipe> out;
    for (auto& r : recs)
        if (r.paired) out.push_back(std::move(r));
    return out;
}

// ---- subcommand bodies ------------------------------------------------------

inline void cmd_build_vocab(const std::string& config_path, const std::string& data_path,
                            const std::string& out_path) {
    RunConfig cfg = load_config_with_env(config_path);
    auto records = parse_recipe_corpus(data_path, cfg.model.image_dim);
    Vocabulary vocab = build_vocabulary(records, cfg.corpus.min_freq, cfg.corpus.max_vocab);
    save_vocabulary(vocab, out_path);
    std::cout << "wrote " << vocab.size() << " tokens to " << out_path << "\n";
}

inline void cmd_train(const std::string& config_path, const std::string& data_path,
                      const std::string& val_path, const std::string& out_path,
                      const std::string& history_path, std::optional<std::uint64_t> seed_flag,
                      std::optional<std::size_t> epochs_flag, std::optional<double> lr_flag) {
    RunConfig cfg = load_config_with_env(config_path);
    if (seed_flag) cfg.seed = *seed_flag;
    if (epochs_flag) cfg.train.epochs = *epochs_flag;
    if (lr_flag) cfg.train.lr = *lr_flag;

    auto train_records = parse_recipe_corpus(data_path, cfg.model.image_dim);
    auto val_records =
        val_path.empty() ? train_records : parse_recipe_corpus(val_path, cfg.model.image_dim);

    TrainResult result = train(cfg, train_records, val_records);
    save_checkpoint(result.best, out_path);
    const std::string hist = history_path.empty() ? out_path + ".history.csv" : history_path;
    save_history(result.history, hist);

    for (const auto& s : result.history)
        std::cout << "epoch " << s.epoch << " lr " << s.lr << " loss " << s.train_loss << " val_R1 "
                  << s.val_r1 << "\n";
    std::cout << "best epoch " << result.best.epoch << " val_R1 " << result.best.best_val_r1 << "\n";
    std::cout << "checkpoint " << out_path << "\nhistory " << hist << "\n";
}

inline void cmd_evaluate(const std::string& ckpt_path, const std::string& data_path,
                         std::optional<std::size_t> n_flag, std::optional<std::size_t> groups_flag,
                         std::optional<std::uint64_t> seed_flag, const std::string& direction_flag,
                         const std::vector<std::string>& drop, const std::string& policy_name,
                         const std::string& out_path) {
    CheckpointState st = load_checkpoint(ckpt_path);
    const RunConfig& cfg = st.config;
    auto dataset = paired_only(encode_corpus(st.vocab, cfg, data_path));
    if (dataset.empty())
        throw std::runtime_error("evaluate: no paired records (with image features) in " + data_path);

    const std::size_t n = n_flag ? *n_flag : std::min(cfg.eval.ranking_size, dataset.size());
    const std::size_t groups = groups_flag ? *groups_flag : cfg.eval.groups;
    const std::uint64_t seed = seed_flag ? *seed_flag : cfg.eval.seed;
    const Direction dir =
        direction_from_name(direction_flag.empty() ? cfg.eval.direction : direction_flag);

    ComponentMask mask = drop_to_mask(drop);
    mask.title = mask.title && cfg.components.title;
    mask.ingredients = mask.ingredients && cfg.components.ingredients;
    mask.instructions = mask.instructions && cfg.components.instructions;
    const MissingPolicy policy = policy_from_name(policy_name);

    const ModelConfig mc = cfg.resolved_model(st.vocab.size());
    RetrievalReport report = evaluate(st.params, mc, dataset, n, groups, seed, dir, mask, policy);
    const std::string text = to_json(report).dump(2) + "\n";
    std::cout << text;
    if (!out_path.empty()) write_text(out_path, text);
}

inline void cmd_embed(const std::string& ckpt_path, const std::string& data_path,
                      const std::string& out_path, const std::string& modality) {
    CheckpointState st = load_checkpoint(ckpt_path);
    const RunConfig& cfg = st.config;
    const ModelConfig mc = cfg.resolved_model(st.vocab.size());
    auto dataset = encode_corpus(st.vocab, cfg, data_path);

    std::string lines;
    if (modality == "recipe") {
        for (const auto& r : dataset) {
            Tape<float> tp(false);
            ModelVars<float> mv = bind_model(tp, st.params, mc, false, false);
            const Tensor<float> e =
                tp.value(encode_recipe_embedding(tp, mv, mc, r, cfg.components).joint);
            lines += nlohmann::json{{"id", r.id}, {"vector", e.data}}.dump() + "\n";
        }
    } else if (modality == "image") {
        for (const auto& r : dataset) {
            if (!r.paired) continue;
            Tape<float> tp(false);
            ModelVars<float> mv = bind_model(tp, st.params, mc, false, true);
            const Tensor<float> e = tp.value(encode_image(
                tp, mv, mc, std::span<const float>(r.image_feature->data(), r.image_feature->size())));
            lines += nlohmann::json{{"id", r.id}, {"vector", e.data}}.dump() + "\n";
        }
    } else {
        throw std::runtime_error("unknown modality \"" + modality + "\" (expected recipe|image)");
    }
    write_text(out_path, lines);
    std::cout << "wrote embeddings to " << out_path << "\n";
}

// For every record with at least one missing and one present component, dump
// the hallucinated vector of each missing component.
inline void cmd_hallucinate(const std::string& ckpt_path, const std::string& data_path,
                            const std::string& out_path) {
    CheckpointState st = load_checkpoint(ckpt_path);
    const RunConfig& cfg = st.config;
    const ModelConfig mc = cfg.resolved_model(st.vocab.size());
    auto dataset = encode_corpus(st.vocab, cfg, data_path);

    std::string lines;
    for (const auto& r : dataset) {
        const bool missing[3] = {r.title.empty(), r.ingredients.empty(), r.instructions.empty()};
        if (!missing[0] && !missing[1] && !missing[2]) continue;

        Tape<float> tp(false);
        ModelVars<float> mv = bind_model(tp, st.params, mc, false, false);
        std::array<std::optional<Var>, 3> present;
        if (!missing[0]) present[0] = tr_encode(tp, mv.ttl, r.title, mc.heads);
        if (!missing[1]) present[1] = htr_encode(tp, mv.ing_sent, mv.ing_doc, r.ingredients, mc.heads);
        if (!missing[2]) present[2] = htr_encode(tp, mv.ins_sent, mv.ins_doc, r.instructions, mc.heads);

        for (std::size_t c = 0; c < 3; ++c) {
            if (!missing[c]) continue;
            const Tensor<float> e = tp.value(hallucinate_component(tp, mv, present, Component(c)));
            lines += nlohmann::json{{"id", r.id}, {"component", kComponentNames[c]}, {"vector", e.data}}
                         .dump() +
                     "\n";
        }
    }
    write_text(out_path, lines);
    std::cout << "wrote hallucinated components to " << out_path << "\n";
}

inline void cmd_rank(const std::string& ckpt_path, const std::string& query_path,
                     const std::string& candidates_path, std::size_t k) {
    CheckpointState st = load_checkpoint(ckpt_path);
    const RunConfig& cfg = st.config;
    const ModelConfig mc = cfg.resolved_model(st.vocab.size());

    std::ifstream in(query_path);
    if (!in) throw std::runtime_error("cannot open query feature file: " + query_path);
    nlohmann::json qj;
    in >> qj;
    std::vector<float> feat = qj.is_array() ? qj.get<std::vector<float>>()
                                            : qj.at("image_feature").get<std::vector<float>>();

    auto dataset = encode_corpus(st.vocab, cfg, candidates_path);
    Tape<float> tp(false);
    ModelVars<float> mv = bind_model(tp, st.params, mc, false, true);
    const Tensor<float> q = tp.value(encode_image(tp, mv, mc, feat));

    std::vector<std::pair<float, std::size_t>> scored;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        Tape<float> rtp(false);
        ModelVars<float> rmv = bind_model(rtp, st.params, mc, false, false);
        const Tensor<float> e =
            rtp.value(encode_recipe_embedding(rtp, rmv, mc, dataset[i], cfg.components).joint);
        float dot = 0;
        for (std::size_t j = 0; j < q.numel(); ++j) dot += q[j] * e[j];
        scored.emplace_back(dot, i);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; i < std::min(k, scored.size()); ++i)
        std::cout << dataset[scored[i].second].id << "\n";
}

} // namespace detail

// Entry point shared by the binary and the tests. args excludes the program
// name. Returns a process exit code.
inline int run(const std::vector<std::string>& args) {
    CLI::App app{"cross-modal recipe retrieval toolkit"};
    app.require_subcommand(1);

    std::string config_path, data_path, val_path, out_path, history_path, ckpt_path;
    std::string direction_flag, policy_name = "empty", modality = "recipe";
    std::string query_path, candidates_path;
    std::vector<std::string> drop;
    std::optional<std::uint64_t> seed_flag;
    std::optional<std::size_t> n_flag, groups_flag, epochs_flag;
    std::optional<double> lr_flag;
    std::size_t k = 10;

    CLI::App* build_vocab = app.add_subcommand("build-vocab", "build a vocabulary file from a corpus");
    build_vocab->add_option("--config", config_path)->required();
    build_vocab->add_option("--data", data_path)->required();
    build_vocab->add_option("--out", out_path)->required();

    CLI::App* train_cmd = app.add_subcommand("train", "train a model and keep the best checkpoint");
    train_cmd->add_option("--config", config_path)->required();
    train_cmd->add_option("--data", data_path)->required();
    train_cmd->add_option("--val", val_path);
    train_cmd->add_option("--out", out_path)->required();
    train_cmd->add_option("--history", history_path);
    train_cmd->add_option("--seed", seed_flag);
    train_cmd->add_option("--epochs", epochs_flag);
    train_cmd->add_option("--lr", lr_flag);

    CLI::App* eval_cmd = app.add_subcommand("evaluate", "retrieval metrics over a paired corpus");
    eval_cmd->add_option("--ckpt", ckpt_path)->required();
    eval_cmd->add_option("--data", data_path)->required();
    eval_cmd->add_option("--N", n_flag);
    eval_cmd->add_option("--groups", groups_flag);
    eval_cmd->add_option("--seed", seed_flag);
    eval_cmd->add_option("--direction", direction_flag);
    eval_cmd->add_option("--drop", drop, "treat a component (ttl|ing|ins) as missing");
    eval_cmd->add_option("--policy", policy_name, "missing-component policy: empty|hallucinate");
    eval_cmd->add_option("--out", out_path);

    CLI::App* embed_cmd = app.add_subcommand("embed", "dump embeddings as JSONL");
    embed_cmd->add_option("--ckpt", ckpt_path)->required();
    embed_cmd->add_option("--data", data_path)->required();
    embed_cmd->add_option("--out", out_path)->required();
    embed_cmd->add_option("--modality", modality, "recipe|image");

    CLI::App* hallu_cmd =
        app.add_subcommand("hallucinate", "dump hallucinated embeddings for missing components");
    hallu_cmd->add_option("--ckpt", ckpt_path)->required();
    hallu_cmd->add_option("--data", data_path)->required();
    hallu_cmd->add_option("--out", out_path)->required();

    CLI::App* rank_cmd = app.add_subcommand("rank", "top-K recipe ids for one image feature query");
    rank_cmd->add_option("--ckpt", ckpt_path)->required();
    rank_cmd->add_option("--query-image", query_path)->required();
    rank_cmd->add_option("--candidates", candidates_path)->required();
    rank_cmd->add_option("--k", k);

    std::vector<char*> argv;
    std::vector<std::string> storage = args;
    std::string prog = "xmrr";
    argv.push_back(prog.data());
    for (auto& a : storage) argv.push_back(a.data());

    try {
        app.parse(int(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*build_vocab) {
            detail::cmd_build_vocab(config_path, data_path, out_path);
        } else if (*train_cmd) {
            detail::cmd_train(config_path, data_path, val_path, out_path, history_path, seed_flag,
                              epochs_flag, lr_flag);
        } else if (*eval_cmd) {
            detail::cmd_evaluate(ckpt_path, data_path, n_flag, groups_flag, seed_flag, direction_flag,
                                 drop, policy_name, out_path);
        } else if (*embed_cmd) {
            detail::cmd_embed(ckpt_path, data_path, out_path, modality);
        } else if (*hallu_cmd) {
            detail::cmd_hallucinate(ckpt_path, data_path, out_path);
        } else if (*rank_cmd) {
            detail::cmd_rank(ckpt_path, query_path, candidates_path, k);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace cli
} // namespace xmrr
