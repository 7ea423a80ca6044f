#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "xmrr/checkpoint.hpp"
#include "xmrr/config.hpp"
#include "xmrr/corpus.hpp"
#include "xmrr/encoders.hpp"
#include "xmrr/losses.hpp"
#include "xmrr/model.hpp"
#include "xmrr/optim.hpp"
#include "xmrr/retrieval.hpp"

namespace xmrr {

struct EpochStats {
    std::size_t epoch = 0;
    double lr = 0;
    double train_loss = 0; // mean over the epoch's optimizer steps
    double val_r1 = 0;
};

struct TrainResult {
    CheckpointState best;            // snapshot at the best validation R@1
    ParamStore<float> final_params;  // parameters after the last epoch
    AdamState<float> final_opt;
    std::vector<EpochStats> history;
};

namespace detail {

// One optimizer step over a batch. Returns the scalar loss.
inline double train_step(const Batch& batch, ParamStore<float>& params, AdamState<float>& opt,
                         const ModelConfig& mc, const RunConfig& cfg, double lr) {
    const bool paired = batch.mode == BatchMode::paired;
    Tape<float> tp;
    ModelVars<float> mv = bind_model(tp, params, mc, true, paired);

    std::vector<Var> recipe_rows, image_rows;
    std::vector<std::array<Var, 3>> comps;
    recipe_rows.reserve(batch.size());
    comps.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        auto emb = encode_recipe_embedding(tp, mv, mc, batch.records[i], cfg.components);
        recipe_rows.push_back(emb.joint);
        comps.push_back(emb.components);
        if (paired) {
            const std::size_t d = batch.image_features.cols();
            std::span<const float> feat(batch.image_features.data.data() + i * d, d);
            image_rows.push_back(encode_image(tp, mv, mc, feat));
        }
    }

    const float margin = float(cfg.loss.margin);
    std::optional<Var> l_pair, l_rec;
    if (paired)
        l_pair = pair_loss(tp, std::span<const Var>(image_rows), std::span<const Var>(recipe_rows),
                           margin);
    if (cfg.loss.enable_rec)
        l_rec = recipe_component_loss(tp, comps, mv, margin, cfg.loss.identity_heads);
    Var loss = total_loss(tp, l_pair, l_rec, batch.mode, cfg.loss);
    const double loss_value = double(tp.value(loss).item());
    tp.backward(loss);

    std::vector<std::pair<const std::string*, Tensor<float>>> grads;
    for (const auto& [name, var] : mv.bound)
        if (tp.has_grad(var)) grads.emplace_back(&name, tp.grad(var));

    if (cfg.train.grad_clip > 0) {
        double sq = 0;
        for (const auto& [name, g] : grads)
            for (float v : g.data) sq += double(v) * double(v);
        const double norm = std::sqrt(sq);
        if (norm > cfg.train.grad_clip) {
            const float factor = float(cfg.train.grad_clip / norm);
            for (auto& [name, g] : grads)
                for (float& v : g.data) v *= factor;
        }
    }
    for (auto& [name, g] : grads) opt.step(*name, params.get(*name), g, lr);
    return loss_value;
}

} // namespace detail

// Full optimization loop: Adam with step decay, strict paired/text-only
// interleave (one text-only batch after each paired batch when text-only data
// is in use), per-epoch validation R@1, and best-checkpoint retention.
// Deterministic for a fixed config and seed.
inline TrainResult train(const RunConfig& cfg, const std::vector<RecipeRecord>& train_corpus,
                         const std::vector<RecipeRecord>& val_corpus) {
    Vocabulary vocab = build_vocabulary(train_corpus, cfg.corpus.min_freq, cfg.corpus.max_vocab);
    const ModelConfig mc = cfg.resolved_model(vocab.size());
    mc.validate();
    cfg.loss.validate();
    if (cfg.train.epochs == 0) throw std::runtime_error("train: epochs must be >= 1");

    const EncodeLimits limits = cfg.limits();
    std::vector<TokenizedRecipe> train_tok, val_tok;
    train_tok.reserve(train_corpus.size());
    for (const auto& r : train_corpus) train_tok.push_back(encode_recipe(vocab, r, limits));
    for (const auto& r : val_corpus)
        if (r.paired()) val_tok.push_back(encode_recipe(vocab, r, limits));

    std::size_t n_paired = 0, n_text = 0;
    for (const auto& r : train_tok) (r.paired ? n_paired : n_text)++;
    if (n_paired == 0) throw std::runtime_error("train: no paired records in the training corpus");
    if (val_tok.empty()) throw std::runtime_error("train: no paired records in the validation corpus");
    const bool use_text = cfg.train.use_text_only && n_text >= cfg.train.batch_size_text;

    ParamStore<float> params = init_model_params<float>(mc, cfg.seed);
    AdamState<float> opt;
    Rng run_rng(mix_seed(cfg.seed, 0x7261));

    TrainResult result;
    result.best.best_val_r1 = -1.0;

    // independent epoch cursor for the text-only stream
    std::vector<Batch> text_batches;
    std::size_t text_epoch = 0, text_idx = 0;
    auto next_text_batch = [&]() -> const Batch& {
        if (text_idx >= text_batches.size()) {
            text_batches =
                make_batches(train_tok, cfg.train.batch_size_text, cfg.seed, text_epoch, BatchMode::text_only);
            ++text_epoch;
            text_idx = 0;
        }
        return text_batches[text_idx++];
    };

    const std::size_t val_n = std::min<std::size_t>(cfg.train.val_rank_size, val_tok.size());
    for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        const double lr = lr_schedule(cfg.train.lr, cfg.train.lr_decay, cfg.train.lr_decay_every, epoch);
        auto paired_batches =
            make_batches(train_tok, cfg.train.batch_size_paired, cfg.seed, epoch, BatchMode::paired);

        double loss_sum = 0;
        std::size_t steps = 0;
        for (const Batch& pb : paired_batches) {
            loss_sum += detail::train_step(pb, params, opt, mc, cfg, lr);
            ++steps;
            if (use_text) {
                loss_sum += detail::train_step(next_text_batch(), params, opt, mc, cfg, lr);
                ++steps;
            }
        }

        RetrievalReport val = evaluate(params, mc, val_tok, val_n, 1, cfg.eval.seed,
                                       Direction::image_to_recipe, cfg.components);
        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr;
        stats.train_loss = loss_sum / double(steps);
        stats.val_r1 = val.aggregate.r1;
        result.history.push_back(stats);

        if (stats.val_r1 > result.best.best_val_r1) {
            result.best.config = cfg;
            result.best.config.model = mc;
            result.best.vocab = vocab;
            result.best.params = params;
            result.best.opt = opt;
            result.best.rng_state = run_rng.state();
            result.best.epoch = epoch;
            result.best.best_val_r1 = stats.val_r1;
        }
        if (cfg.train.stop_at_val_r1 >= 0 && stats.val_r1 >= cfg.train.stop_at_val_r1) break;
    }
    result.final_params = std::move(params);
    result.final_opt = std::move(opt);
    return result;
}

// CSV history: one row per epoch.
inline void save_history(const std::vector<EpochStats>& history, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write history file: " + path);
    out << "epoch,lr,train_loss,val_R1\n";
    char buf[160];
    for (const auto& s : history) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", s.epoch, s.lr, s.train_loss, s.val_r1);
        out << buf;
    }
}

} // namespace xmrr
