#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "xmrr/encoders.hpp"
#include "xmrr/model.hpp"
#include "xmrr/retrieval.hpp"
#include "xmrr/rng.hpp"

using namespace xmrr;

// ---- independent brute-force reference --------------------------------------
namespace reference {

std::size_t rank(std::span<const float> q, const Tensor<float>& cands, std::size_t true_idx) {
    std::vector<float> sims(cands.rows());
    for (std::size_t i = 0; i < cands.rows(); ++i) {
        float s = 0;
        for (std::size_t j = 0; j < cands.cols(); ++j) s += q[j] * cands.at(i, j);
        sims[i] = s;
    }
    const float st = sims[true_idx];
    std::vector<float> sorted = sims;
    std::sort(sorted.begin(), sorted.end(), std::greater<float>());
    // optimistic tie handling: first position whose similarity equals the true one
    for (std::size_t pos = 0; pos < sorted.size(); ++pos)
        if (sorted[pos] == st) return pos + 1;
    return sorted.size();
}

RetrievalMetrics metrics(std::vector<std::size_t> ranks) {
    std::vector<std::size_t> s = ranks;
    std::sort(s.begin(), s.end());
    RetrievalMetrics m;
    const std::size_t n = s.size();
    m.medR = n % 2 ? double(s[n / 2]) : 0.5 * (double(s[n / 2 - 1]) + double(s[n / 2]));
    double c1 = 0, c5 = 0, c10 = 0;
    for (auto r : ranks) {
        c1 += r <= 1;
        c5 += r <= 5;
        c10 += r <= 10;
    }
    m.r1 = c1 / double(n);
    m.r5 = c5 / double(n);
    m.r10 = c10 / double(n);
    return m;
}

// Reimplements the grouped protocol over the same documented sampling rule
// (partial Fisher-Yates over Rng(mix_seed(seed, g))).
RetrievalReport evaluate(const PairedEmbeddings& emb, std::size_t N, std::size_t G, std::uint64_t seed,
                         Direction dir) {
    RetrievalReport rep;
    rep.direction = direction_name(dir);
    rep.ranking_size = N;
    rep.groups = G;
    const std::size_t n = emb.size(), d = emb.recipe.cols();
    for (std::size_t g = 0; g < G; ++g) {
        std::vector<std::size_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        Rng rng(mix_seed(seed, g));
        for (std::size_t i = 0; i < N; ++i) {
            const std::size_t j = i + std::size_t(rng.next_below(n - i));
            std::swap(pool[i], pool[j]);
        }
        const Tensor<float>& cand_src = dir == Direction::image_to_recipe ? emb.recipe : emb.image;
        const Tensor<float>& query_src = dir == Direction::image_to_recipe ? emb.image : emb.recipe;
        Tensor<float> cands({N, d});
        for (std::size_t i = 0; i < N; ++i)
            std::copy_n(cand_src.data.data() + pool[i] * d, d, cands.data.data() + i * d);
        std::vector<std::size_t> ranks(N);
        for (std::size_t i = 0; i < N; ++i)
            ranks[i] = rank(std::span<const float>(query_src.data.data() + pool[i] * d, d), cands, i);
        rep.per_group.push_back(metrics(ranks));
    }
    for (const auto& m : rep.per_group) {
        rep.aggregate.medR += m.medR / double(G);
        rep.aggregate.r1 += m.r1 / double(G);
        rep.aggregate.r5 += m.r5 / double(G);
        rep.aggregate.r10 += m.r10 / double(G);
    }
    return rep;
}

} // namespace reference

namespace {

Tensor<float> unit_rows(Rng& rng, std::size_t n, std::size_t d) {
    Tensor<float> t({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) {
            t.at(i, j) = float(rng.normal());
            s += double(t.at(i, j)) * double(t.at(i, j));
        }
        const float inv = float(1.0 / std::sqrt(std::max(s, 1e-12)));
        for (std::size_t j = 0; j < d; ++j) t.at(i, j) *= inv;
    }
    return t;
}

Tensor<float> with_sims(const std::vector<float>& sims) {
    // 2-d candidates (s, sqrt(1-s^2)) against query (1, 0)
    Tensor<float> t({sims.size(), 2});
    for (std::size_t i = 0; i < sims.size(); ++i) {
        t.at(i, 0) = sims[i];
        t.at(i, 1) = std::sqrt(std::max(0.f, 1.f - sims[i] * sims[i]));
    }
    return t;
}

} // namespace

TEST_CASE("rank_of_true counts strictly greater similarities") {
    const std::vector<float> q{1.f, 0.f};
    CHECK(rank_of_true(q, with_sims({0.9f, 0.95f, 0.5f, 0.9f}), 0) == 2);
    CHECK(rank_of_true(q, with_sims({0.99f, 0.95f, 0.5f, 0.9f}), 0) == 1);
    CHECK(rank_of_true(q, with_sims({0.7f, 0.7f, 0.7f, 0.7f}), 2) == 1);
}

TEST_CASE("rank_of_true is invariant to permutations of the other candidates") {
    Rng rng(31);
    Tensor<float> cands = unit_rows(rng, 20, 8);
    std::vector<float> q(8);
    for (auto& v : q) v = float(rng.normal());
    const std::size_t base = rank_of_true(q, cands, 5);

    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < 20; ++i)
        if (i != 5) order.push_back(i);
    rng.shuffle(order);
    Tensor<float> shuffled({20, 8});
    std::size_t k = 0;
    std::size_t new_true = 7;
    order.insert(order.begin() + std::ptrdiff_t(new_true), 5);
    for (std::size_t i = 0; i < 20; ++i, ++k)
        std::copy_n(cands.data.data() + order[i] * 8, 8, shuffled.data.data() + i * 8);
    CHECK(rank_of_true(q, shuffled, new_true) == base);
}

TEST_CASE("compute_metrics closed-form cases") {
    RetrievalMetrics a = compute_metrics({1, 2, 3, 4, 100});
    CHECK(a.medR == 3.0);
    CHECK(a.r1 == doctest::Approx(0.2));
    CHECK(a.r5 == doctest::Approx(0.8));
    CHECK(a.r10 == doctest::Approx(0.8));

    RetrievalMetrics b = compute_metrics({1, 1, 1, 1});
    CHECK(b.medR == 1.0);
    CHECK(b.r1 == 1.0);
    CHECK(b.r10 == 1.0);

    CHECK(compute_metrics({2, 4}).medR == 3.0);
    CHECK_THROWS(compute_metrics({}));
}

TEST_CASE("metrics are monotone in k") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::size_t> ranks(30);
        for (auto& r : ranks) r = 1 + rng.next_below(50);
        RetrievalMetrics m = compute_metrics(ranks);
        CHECK(m.r1 <= m.r5);
        CHECK(m.r5 <= m.r10);
        CHECK(m.medR >= 1.0);
    }
}

TEST_CASE("perfectly aligned embeddings retrieve at rank one") {
    Rng rng(6);
    PairedEmbeddings emb;
    emb.recipe = unit_rows(rng, 40, 16);
    emb.image = emb.recipe;
    for (std::size_t i = 0; i < 40; ++i) emb.ids.push_back("s" + std::to_string(i));
    for (Direction dir : {Direction::image_to_recipe, Direction::recipe_to_image}) {
        RetrievalReport rep = evaluate_embeddings(emb, 25, 4, 9, dir);
        CHECK(rep.aggregate.medR == 1.0);
        CHECK(rep.aggregate.r1 == 1.0);
    }
}

TEST_CASE("report matches the brute-force reference exactly on 100 random instances") {
    Rng rng(7);
    for (int instance = 0; instance < 100; ++instance) {
        const std::size_t n = 30 + rng.next_below(120);
        const std::size_t N = 2 + rng.next_below(std::min<std::size_t>(n, 500) - 1);
        const std::size_t G = 1 + rng.next_below(3);
        const std::uint64_t seed = rng.next_u64();
        const Direction dir =
            rng.next_below(2) ? Direction::image_to_recipe : Direction::recipe_to_image;
        PairedEmbeddings emb;
        emb.image = unit_rows(rng, n, 12);
        emb.recipe = unit_rows(rng, n, 12);
        for (std::size_t i = 0; i < n; ++i) emb.ids.push_back("s" + std::to_string(i));

        RetrievalReport got = evaluate_embeddings(emb, N, G, seed, dir);
        RetrievalReport want = reference::evaluate(emb, N, G, seed, dir);
        REQUIRE(got.per_group.size() == want.per_group.size());
        for (std::size_t g = 0; g < G; ++g) {
            CHECK(got.per_group[g].medR == want.per_group[g].medR);
            CHECK(got.per_group[g].r1 == want.per_group[g].r1);
            CHECK(got.per_group[g].r5 == want.per_group[g].r5);
            CHECK(got.per_group[g].r10 == want.per_group[g].r10);
        }
        CHECK(got.aggregate.medR == doctest::Approx(want.aggregate.medR).epsilon(1e-12));
        CHECK(got.aggregate.r1 == doctest::Approx(want.aggregate.r1).epsilon(1e-12));
    }
}

TEST_CASE("random embeddings rank near the middle") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed * 1337);
        PairedEmbeddings emb;
        emb.image = unit_rows(rng, 1000, 64);
        emb.recipe = unit_rows(rng, 1000, 64);
        for (std::size_t i = 0; i < 1000; ++i) emb.ids.push_back("s" + std::to_string(i));
        RetrievalReport rep = evaluate_embeddings(emb, 1000, 1, seed, Direction::image_to_recipe);
        CHECK(rep.aggregate.medR >= 400.0);
        CHECK(rep.aggregate.medR <= 600.0);
    }
}

TEST_CASE("one full-size group equals the single-group metrics and reports are deterministic") {
    Rng rng(8);
    PairedEmbeddings emb;
    emb.image = unit_rows(rng, 60, 8);
    emb.recipe = unit_rows(rng, 60, 8);
    for (std::size_t i = 0; i < 60; ++i) emb.ids.push_back("s" + std::to_string(i));

    RetrievalReport rep = evaluate_embeddings(emb, 60, 1, 123, Direction::image_to_recipe);
    CHECK(rep.per_group.size() == 1);
    CHECK(rep.aggregate.medR == rep.per_group[0].medR);
    CHECK(rep.aggregate.r1 == rep.per_group[0].r1);

    RetrievalReport again = evaluate_embeddings(emb, 60, 1, 123, Direction::image_to_recipe);
    CHECK(to_json(rep).dump() == to_json(again).dump());

    CHECK_THROWS(evaluate_embeddings(emb, 61, 1, 1, Direction::image_to_recipe));
}

// ---- hallucination ----------------------------------------------------------

namespace {

ModelConfig hallu_config() {
    ModelConfig c;
    c.vocab_size = 8;
    c.dim = 2;
    c.layers = 1;
    c.heads = 1;
    c.ffn_dim = 4;
    c.joint_dim = 4;
    c.image_dim = 3;
    c.max_sentence_len = 4;
    c.max_sentences = 4;
    return c;
}

void set_identity_heads(ParamStore<double>& ps, std::size_t dim) {
    for (const char* b : kComponentNames)
        for (const char* a : kComponentNames) {
            if (std::string(a) == b) continue;
            const std::string base = std::string("g.") + b + "2" + a;
            Tensor<double>& w = ps.get(base + ".w");
            w.fill(0.0);
            for (std::size_t i = 0; i < dim; ++i) w.at(i, i) = 1.0;
            ps.get(base + ".b").fill(0.0);
        }
}

} // namespace

TEST_CASE("hallucination averages the projected sources") {
    ModelConfig cfg = hallu_config();
    ParamStore<double> ps = init_model_params<double>(cfg, 41);
    set_identity_heads(ps, cfg.dim);

    Tape<double> tp;
    ModelVars<double> mv = bind_model(tp, ps, cfg, false, false);
    Var e_ing = tp.input(Tensor<double>::vec({1, 0}), false);
    Var e_ins = tp.input(Tensor<double>::vec({0, 1}), false);

    std::array<std::optional<Var>, 3> both{std::nullopt, e_ing, e_ins};
    Tensor<double> got = tp.value(hallucinate_component(tp, mv, both, Component::title));
    CHECK(got[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(got[1] == doctest::Approx(0.5).epsilon(1e-12));

    std::array<std::optional<Var>, 3> only_ing{std::nullopt, e_ing, std::nullopt};
    Tensor<double> single = tp.value(hallucinate_component(tp, mv, only_ing, Component::title));
    CHECK(single[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(single[1] == doctest::Approx(0.0).epsilon(1e-12));

    // hallucinating both missing components from ingredients alone
    Tensor<double> ttl = tp.value(hallucinate_component(tp, mv, only_ing, Component::title));
    Tensor<double> ins = tp.value(hallucinate_component(tp, mv, only_ing, Component::instructions));
    CHECK(ttl[0] == 1.0);
    CHECK(ins[0] == 1.0);

    std::array<std::optional<Var>, 3> none{};
    CHECK_THROWS(hallucinate_component(tp, mv, none, Component::title));
}

TEST_CASE("hallucination equals the arithmetic mean of projections to machine precision") {
    ModelConfig cfg = hallu_config();
    cfg.dim = 6;
    cfg.heads = 2;
    ParamStore<double> ps = init_model_params<double>(cfg, 42);
    Rng rng(42);
    std::vector<double> ing(6), ins(6);
    for (auto& v : ing) v = rng.normal();
    for (auto& v : ins) v = rng.normal();

    Tape<double> tp;
    ModelVars<double> mv = bind_model(tp, ps, cfg, false, false);
    std::array<std::optional<Var>, 3> avail{std::nullopt, tp.input(Tensor<double>::vec(ing), false),
                                            tp.input(Tensor<double>::vec(ins), false)};
    Tensor<double> got = tp.value(hallucinate_component(tp, mv, avail, Component::title));

    auto project = [&](const std::string& base, const std::vector<double>& x) {
        const Tensor<double>& w = ps.get(base + ".w");
        const Tensor<double>& b = ps.get(base + ".b");
        std::vector<double> y(6, 0.0);
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t j = 0; j < 6; ++j) y[j] += x[i] * w.at(i, j);
        for (std::size_t j = 0; j < 6; ++j) y[j] += b[j];
        return y;
    };
    std::vector<double> p1 = project("g.ing2ttl", ing);
    std::vector<double> p2 = project("g.ins2ttl", ins);
    for (std::size_t j = 0; j < 6; ++j) CHECK(got[j] == (p1[j] + p2[j]) / 2.0);
}

TEST_CASE("evaluate rejects text-only records") {
    ModelConfig cfg = hallu_config();
    cfg.dim = 4;
    cfg.heads = 2;
    ParamStore<float> ps = init_model_params<float>(cfg, 43);
    TokenizedRecipe r;
    r.id = "x";
    r.title.ids = {2, 0, 0, 0};
    r.title.mask = {1, 0, 0, 0};
    r.title.length = 1;
    r.paired = false;
    CHECK_THROWS_WITH_AS(evaluate(ps, cfg, {r}, 1, 1, 0, Direction::image_to_recipe),
                         doctest::Contains("text-only"), std::runtime_error);
}
