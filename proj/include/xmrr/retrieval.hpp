#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmrr/encoders.hpp"
#include "xmrr/model.hpp"
#include "xmrr/rng.hpp"
#include "xmrr/tensor.hpp"

namespace xmrr {

enum class Direction { image_to_recipe, recipe_to_image };

inline Direction direction_from_name(const std::string& name) {
    if (name == "image-to-recipe") return Direction::image_to_recipe;
    if (name == "recipe-to-image") return Direction::recipe_to_image;
    throw std::runtime_error("unknown direction \"" + name + "\"");
}

inline const char* direction_name(Direction d) {
    return d == Direction::image_to_recipe ? "image-to-recipe" : "recipe-to-image";
}

// Rank of the true candidate under dot-product similarity (vectors are
// pre-normalized, so dot = cosine). Strict-greater counting: ties never
// penalize, which keeps the rank invariant to candidate permutations.
inline std::size_t rank_of_true(std::span<const float> query, const Tensor<float>& candidates,
                                std::size_t true_index) {
    const std::size_t n = candidates.rows(), d = candidates.cols();
    if (true_index >= n) throw std::runtime_error("rank_of_true: true_index out of range");
    if (query.size() != d) throw std::runtime_error("rank_of_true: query dim mismatch");
    auto sim = [&](std::size_t row) {
        const float* c = candidates.data.data() + row * d;
        float acc = 0.f;
        for (std::size_t j = 0; j < d; ++j) acc += query[j] * c[j];
        return acc;
    };
    const float s_true = sim(true_index);
    std::size_t greater = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (i == true_index) continue;
        if (sim(i) > s_true) ++greater;
    }
    return greater + 1;
}

struct RetrievalMetrics {
    double medR = 0;
    double r1 = 0;
    double r5 = 0;
    double r10 = 0;
};

// medR = median of ranks (even count: mean of the two middle values);
// R@k = fraction of ranks <= k.
inline RetrievalMetrics compute_metrics(const std::vector<std::size_t>& ranks) {
    if (ranks.empty()) throw std::runtime_error("compute_metrics: no ranks");
    std::vector<std::size_t> sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    RetrievalMetrics m;
    const std::size_t n = sorted.size();
    m.medR = n % 2 == 1 ? double(sorted[n / 2])
                        : (double(sorted[n / 2 - 1]) + double(sorted[n / 2])) / 2.0;
    std::size_t c1 = 0, c5 = 0, c10 = 0;
    for (std::size_t r : ranks) {
        c1 += r <= 1;
        c5 += r <= 5;
        c10 += r <= 10;
    }
    m.r1 = double(c1) / double(n);
    m.r5 = double(c5) / double(n);
    m.r10 = double(c10) / double(n);
    return m;
}

struct RetrievalReport {
    std::string direction;
    std::size_t ranking_size = 0; // N
    std::size_t groups = 0;       // G
    std::vector<RetrievalMetrics> per_group;
    RetrievalMetrics aggregate;
};

inline nlohmann::json to_json(const RetrievalMetrics& m) {
    return {{"medR", m.medR}, {"R1", m.r1}, {"R5", m.r5}, {"R10", m.r10}};
}

inline nlohmann::json to_json(const RetrievalReport& r) {
    nlohmann::json per_group = nlohmann::json::array();
    for (const auto& g : r.per_group) per_group.push_back(to_json(g));
    return {{"direction", r.direction},
            {"N", r.ranking_size},
            {"G", r.groups},
            {"per_group", per_group},
            {"aggregate", to_json(r.aggregate)}};
}

// Unit-normalized embeddings for the paired samples of a dataset, in dataset
// order. Row i of image and recipe belong to the same sample.
struct PairedEmbeddings {
    std::vector<std::string> ids;
    Tensor<float> image;  // n x D
    Tensor<float> recipe; // n x D

    std::size_t size() const { return ids.size(); }
};

// Ranking protocol over precomputed embeddings: G independently seeded groups
// of N samples drawn without replacement within each group; every group
// member queries against the N opposite-modality candidates; the aggregate is
// the mean of each metric over groups.
inline RetrievalReport evaluate_embeddings(const PairedEmbeddings& emb, std::size_t ranking_size,
                                           std::size_t groups, std::uint64_t seed, Direction dir) {
    const std::size_t n = emb.size();
    if (ranking_size < 1 || groups < 1) throw std::runtime_error("evaluate: N and G must be >= 1");
    if (n < ranking_size)
        throw std::runtime_error("evaluate: dataset size " + std::to_string(n) +
                                 " is smaller than ranking size " + std::to_string(ranking_size));
    const std::size_t d = emb.recipe.cols();

    RetrievalReport report;
    report.direction = direction_name(dir);
    report.ranking_size = ranking_size;
    report.groups = groups;

    std::vector<std::size_t> pool(n);
    Tensor<float> candidates({ranking_size, d});
    std::vector<std::size_t> ranks(ranking_size);
    for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        Rng rng(mix_seed(seed, g));
        for (std::size_t i = 0; i < ranking_size; ++i) {
            const std::size_t j = i + std::size_t(rng.next_below(n - i));
            std::swap(pool[i], pool[j]);
        }

        const Tensor<float>& cand_src = dir == Direction::image_to_recipe ? emb.recipe : emb.image;
        const Tensor<float>& query_src = dir == Direction::image_to_recipe ? emb.image : emb.recipe;
        for (std::size_t i = 0; i < ranking_size; ++i)
            std::copy_n(cand_src.data.data() + pool[i] * d, d, candidates.data.data() + i * d);
        for (std::size_t i = 0; i < ranking_size; ++i) {
            std::span<const float> q(query_src.data.data() + pool[i] * d, d);
            ranks[i] = rank_of_true(q, candidates, i);
        }
        report.per_group.push_back(compute_metrics(ranks));
    }
    for (const auto& m : report.per_group) {
        report.aggregate.medR += m.medR;
        report.aggregate.r1 += m.r1;
        report.aggregate.r5 += m.r5;
        report.aggregate.r10 += m.r10;
    }
    report.aggregate.medR /= double(groups);
    report.aggregate.r1 /= double(groups);
    report.aggregate.r5 /= double(groups);
    report.aggregate.r10 /= double(groups);
    return report;
}

// Forward-only embedding pass over the paired samples of a tokenized dataset.
inline PairedEmbeddings embed_paired_dataset(const ParamStore<float>& params, const ModelConfig& cfg,
                                             const std::vector<TokenizedRecipe>& dataset,
                                             const ComponentMask& include = {},
                                             MissingPolicy policy = MissingPolicy::empty_vector) {
    PairedEmbeddings out;
    std::vector<const TokenizedRecipe*> paired;
    for (const auto& r : dataset)
        if (r.paired) paired.push_back(&r);
    out.image = Tensor<float>({paired.size(), cfg.joint_dim});
    out.recipe = Tensor<float>({paired.size(), cfg.joint_dim});
    for (std::size_t i = 0; i < paired.size(); ++i) {
        const TokenizedRecipe& r = *paired[i];
        Tape<float> tp(false);
        ModelVars<float> mv = bind_model(tp, params, cfg, false, true);
        // copy out: later ops can reallocate the tape's node storage
        const Tensor<float> e_r = tp.value(encode_recipe_embedding(tp, mv, cfg, r, include, policy).joint);
        const Tensor<float> e_i = tp.value(encode_image(
            tp, mv, cfg, std::span<const float>(r.image_feature->data(), r.image_feature->size())));
        std::copy(e_r.data.begin(), e_r.data.end(), out.recipe.data.begin() + i * cfg.joint_dim);
        std::copy(e_i.data.begin(), e_i.data.end(), out.image.data.begin() + i * cfg.joint_dim);
        out.ids.push_back(r.id);
    }
    return out;
}

// Protocol entry point per the module contract: embed, then rank.
inline RetrievalReport evaluate(const ParamStore<float>& params, const ModelConfig& cfg,
                                const std::vector<TokenizedRecipe>& dataset, std::size_t ranking_size,
                                std::size_t groups, std::uint64_t seed, Direction dir,
                                const ComponentMask& include = {},
                                MissingPolicy policy = MissingPolicy::empty_vector) {
    for (const auto& r : dataset)
        if (!r.paired)
            throw std::runtime_error("evaluate: dataset contains text-only record \"" + r.id + "\"");
    return evaluate_embeddings(embed_paired_dataset(params, cfg, dataset, include, policy),
                               ranking_size, groups, seed, dir);
}

} // namespace xmrr
