#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "xmrr/encoders.hpp"
#include "xmrr/grad_check.hpp"
#include "xmrr/model.hpp"
#include "xmrr/rng.hpp"

using namespace xmrr;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.vocab_size = 16;
    c.dim = 8;
    c.layers = 1;
    c.heads = 2;
    c.ffn_dim = 16;
    c.joint_dim = 8;
    c.image_dim = 3;
    c.max_sentence_len = 6;
    c.max_sentences = 8;
    return c;
}

TokenSequence seq(std::vector<std::int32_t> ids, std::size_t max_len) {
    TokenSequence s;
    s.length = ids.size();
    s.ids = std::move(ids);
    s.ids.resize(max_len, kPadId);
    s.mask.assign(max_len, 0);
    for (std::size_t i = 0; i < s.length; ++i) s.mask[i] = 1;
    return s;
}

// Independent double-math oracle for one post-norm transformer layer applied
// to a single-row input, where attention reduces to the value path.
std::vector<double> oracle_single_row_layer(const ParamStore<double>& ps, const std::string& prefix,
                                            std::vector<double> x) {
    const std::size_t d = x.size();
    auto matvec = [&](const std::string& w, const std::string& b, const std::vector<double>& v) {
        const Tensor<double>& W = ps.get(w);
        const Tensor<double>& B = ps.get(b);
        std::vector<double> y(W.cols(), 0.0);
        for (std::size_t i = 0; i < W.rows(); ++i)
            for (std::size_t j = 0; j < W.cols(); ++j) y[j] += v[i] * W.at(i, j);
        for (std::size_t j = 0; j < W.cols(); ++j) y[j] += B[j];
        return y;
    };
    auto layer_norm = [&](const std::string& g, const std::string& b, std::vector<double> v) {
        double mean = 0, var = 0;
        for (double u : v) mean += u;
        mean /= double(v.size());
        for (double u : v) var += (u - mean) * (u - mean);
        var /= double(v.size());
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        const Tensor<double>& G = ps.get(g);
        const Tensor<double>& B = ps.get(b);
        for (std::size_t j = 0; j < v.size(); ++j) v[j] = (v[j] - mean) * inv * G[j] + B[j];
        return v;
    };

    // one token: softmax over a single key is 1, so attention = Wo(Wv x + bv) + bo
    std::vector<double> attn = matvec(prefix + ".l0.attn.wo", prefix + ".l0.attn.bo",
                                      matvec(prefix + ".l0.attn.wv", prefix + ".l0.attn.bv", x));
    for (std::size_t j = 0; j < d; ++j) attn[j] += x[j];
    std::vector<double> h = layer_norm(prefix + ".l0.ln1.g", prefix + ".l0.ln1.b", attn);

    std::vector<double> f1 = matvec(prefix + ".l0.ffn.w1", prefix + ".l0.ffn.b1", h);
    for (auto& v : f1) v = 0.5 * v * (1.0 + std::erf(v * 0.7071067811865475244));
    std::vector<double> f2 = matvec(prefix + ".l0.ffn.w2", prefix + ".l0.ffn.b2", f1);
    for (std::size_t j = 0; j < d; ++j) f2[j] += h[j];
    return layer_norm(prefix + ".l0.ln2.g", prefix + ".l0.ln2.b", f2);
}

} // namespace

TEST_CASE("single-token sentence equals its final-layer representation") {
    ModelConfig cfg = tiny_config();
    ParamStore<double> ps = init_model_params<double>(cfg, 5);

    Tape<double> tp;
    ModelVars<double> mv = bind_model(tp, ps, cfg, false, false);
    TokenSequence s = seq({7}, cfg.max_sentence_len);
    Tensor<double> got = tp.value(tr_encode(tp, mv.ttl, s, cfg.heads));

    // oracle: token embedding + position 0, one layer, mean over the one row
    const Tensor<double>& emb = ps.get("ttl.tok_emb");
    const Tensor<double>& pos = ps.get("ttl.pos_emb");
    std::vector<double> x(cfg.dim);
    for (std::size_t j = 0; j < cfg.dim; ++j) x[j] = emb.at(7, j) + pos.at(0, j);
    std::vector<double> expect = oracle_single_row_layer(ps, "ttl", x);

    REQUIRE(got.shape == std::vector<std::size_t>{cfg.dim});
    for (std::size_t j = 0; j < cfg.dim; ++j) CHECK(got[j] == doctest::Approx(expect[j]).epsilon(1e-10));
}

TEST_CASE("appending pad tokens never changes the sentence embedding") {
    ModelConfig cfg = tiny_config();
    ParamStore<double> ps = init_model_params<double>(cfg, 6);
    auto encode = [&](const TokenSequence& s) {
        Tape<double> tp;
        ModelVars<double> mv = bind_model(tp, ps, cfg, false, false);
        return tp.value(tr_encode(tp, mv.ttl, s, cfg.heads));
    };
    TokenSequence short_pad = seq({3, 9, 4}, 3);
    TokenSequence long_pad = seq({3, 9, 4}, cfg.max_sentence_len);
    Tensor<double> a = encode(short_pad);
    Tensor<double> b = encode(long_pad);
    for (std::size_t j = 0; j < cfg.dim; ++j) CHECK(std::abs(a[j] - b[j]) < 1e-6);
}

TEST_CASE("swapping two distinct tokens changes the embedding") {
    ModelConfig cfg = tiny_config();
    ParamStore<double> ps = init_model_params<double>(cfg, 7);
    auto encode = [&](const TokenSequence& s) {
        Tape<double> tp;
        ModelVars<double> mv = bind_model(tp, ps, cfg, false, false);
        return tp.value(tr_encode(tp, mv.ttl, s, cfg.heads));
    };
    Tensor<double> ab = encode(seq({3, 9}, 4));
    Tensor<double> ba = encode(seq({9, 3}, 4));
    double diff = 0;
    for (std::size_t j = 0; j < cfg.dim; ++j) diff += std::abs(ab[j] - ba[j]);
    CHECK(diff > 1e-6);
}

TEST_CASE("tr_encode rejects all-pad input") {
    ModelConfig cfg = tiny_config();
    ParamStore<double> ps = init_model_params<double>(cfg, 8);
    Tape<double> tp;
    ModelVars<double> mv = bind_model(tp, ps, cfg, false, false);
    TokenSequence empty = seq({}, 4);
    CHECK_THROWS_WITH_AS(tr_encode(tp, mv.ttl, empty, cfg.heads), doctest::Contains("all-pad"),
                         std::runtime_error);
}

TEST_CASE("one-sentence list goes through the document level as a length-1 sequence") {
    ModelConfig cfg = tiny_config();
    ParamStore<double> ps = init_model_params<double>(cfg, 9);

    Tape<double> tp;
    ModelVars<double> mv = bind_model(tp, ps, cfg, false, false);
    TokenSequence s = seq({2, 5, 11}, cfg.max_sentence_len);

    Tensor<double> sent_vec = tp.value(tr_encode(tp, mv.ing_sent, s, cfg.heads));
    Tensor<double> got = tp.value(htr_encode(tp, mv.ing_sent, mv.ing_doc, {s}, cfg.heads));

    std::vector<double> x(cfg.dim);
    const Tensor<double>& pos = ps.get("ing.doc.pos_emb");
    for (std::size_t j = 0; j < cfg.dim; ++j) x[j] = sent_vec[j] + pos.at(0, j);
    std::vector<double> expect = oracle_single_row_layer(ps, "ing.doc", x);
    for (std::size_t j = 0; j < cfg.dim; ++j) CHECK(got[j] == doctest::Approx(expect[j]).epsilon(1e-10));
}

TEST_CASE("htr shape contract over many sentences and order sensitivity") {
    ModelConfig cfg = tiny_config();
    ParamStore<double> ps = init_model_params<double>(cfg, 10);
    std::vector<TokenSequence> sents;
    for (int i = 0; i < 7; ++i) sents.push_back(seq({std::int32_t(2 + i), 3}, cfg.max_sentence_len));

    auto encode = [&](const std::vector<TokenSequence>& list) {
        Tape<double> tp;
        ModelVars<double> mv = bind_model(tp, ps, cfg, false, false);
        return tp.value(htr_encode(tp, mv.ins_sent, mv.ins_doc, list, cfg.heads));
    };
    Tensor<double> a = encode(sents);
    CHECK(a.shape == std::vector<std::size_t>{cfg.dim});

    std::swap(sents[0], sents[6]);
    Tensor<double> b = encode(sents);
    double diff = 0;
    for (std::size_t j = 0; j < cfg.dim; ++j) diff += std::abs(a[j] - b[j]);
    CHECK(diff > 1e-6);
}

namespace {

TokenizedRecipe tiny_recipe(const ModelConfig& cfg, bool with_title = true) {
    TokenizedRecipe r;
    r.id = "t1";
    if (with_title) r.title = seq({2, 3}, cfg.max_sentence_len);
    else r.title = seq({}, cfg.max_sentence_len);
    r.ingredients = {seq({4, 5}, cfg.max_sentence_len), seq({6}, cfg.max_sentence_len)};
    r.instructions = {seq({7, 8, 9}, cfg.max_sentence_len)};
    return r;
}

} // namespace

TEST_CASE("recipe embedding shapes, normalization, and empty-component substitution") {
    ModelConfig cfg = tiny_config();
    ParamStore<double> ps = init_model_params<double>(cfg, 11);
    Tape<double> tp;
    ModelVars<double> mv = bind_model(tp, ps, cfg, false, false);

    auto emb = encode_recipe_embedding(tp, mv, cfg, tiny_recipe(cfg));
    for (std::size_t c = 0; c < 3; ++c)
        CHECK(tp.value(emb.components[c]).shape == std::vector<std::size_t>{cfg.dim});
    const Tensor<double>& joint = tp.value(emb.joint);
    CHECK(joint.shape == std::vector<std::size_t>{cfg.joint_dim});
    double norm = 0;
    for (double v : joint.data) norm += v * v;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-5));

    auto no_title = encode_recipe_embedding(tp, mv, cfg, tiny_recipe(cfg, false));
    const Tensor<double>& e_ttl = tp.value(no_title.components[0]);
    const Tensor<double>& learned = ps.get("empty.ttl");
    for (std::size_t j = 0; j < cfg.dim; ++j) CHECK(e_ttl[j] == learned[j]);

    TokenizedRecipe bare;
    bare.id = "none";
    bare.title = seq({}, cfg.max_sentence_len);
    CHECK_THROWS(encode_recipe_embedding(tp, mv, cfg, bare));
}

TEST_CASE("component-inclusion mask forces the empty vector") {
    ModelConfig cfg = tiny_config();
    ParamStore<double> ps = init_model_params<double>(cfg, 12);
    Tape<double> tp;
    ModelVars<double> mv = bind_model(tp, ps, cfg, false, false);
    ComponentMask no_ing;
    no_ing.ingredients = false;
    auto emb = encode_recipe_embedding(tp, mv, cfg, tiny_recipe(cfg), no_ing);
    const Tensor<double>& e_ing = tp.value(emb.components[1]);
    const Tensor<double>& learned = ps.get("empty.ing");
    for (std::size_t j = 0; j < cfg.dim; ++j) CHECK(e_ing[j] == learned[j]);
}

TEST_CASE("image projection shape, norm, and edge cases") {
    ModelConfig cfg = tiny_config();
    ParamStore<double> ps = init_model_params<double>(cfg, 13);
    Tape<double> tp;
    ModelVars<double> mv = bind_model(tp, ps, cfg, false, true);

    std::vector<float> feat{0.5f, -1.25f, 2.0f};
    Var e = encode_image(tp, mv, cfg, feat);
    const Tensor<double>& ev = tp.value(e);
    CHECK(ev.shape == std::vector<std::size_t>{cfg.joint_dim});
    double norm = 0;
    for (double v : ev.data) norm += v * v;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-5));

    std::vector<float> zero(3, 0.f);
    const Tensor<double>& z = tp.value(encode_image(tp, mv, cfg, zero));
    for (double v : z.data) CHECK(std::isfinite(v));

    std::vector<float> wrong(5, 1.f);
    CHECK_THROWS_WITH_AS(encode_image(tp, mv, cfg, wrong), doctest::Contains("feature length"),
                         std::runtime_error);
}

TEST_CASE("perturbing title parameters leaves other components bit-unchanged") {
    ModelConfig cfg = tiny_config();
    ParamStore<double> ps = init_model_params<double>(cfg, 14);
    TokenizedRecipe r = tiny_recipe(cfg);

    auto encode_all = [&](ParamStore<double>& store) {
        Tape<double> tp;
        ModelVars<double> mv = bind_model(tp, store, cfg, false, false);
        auto emb = encode_recipe_embedding(tp, mv, cfg, r);
        return std::array<Tensor<double>, 3>{tp.value(emb.components[0]), tp.value(emb.components[1]),
                                             tp.value(emb.components[2])};
    };
    auto base = encode_all(ps);

    ParamStore<double> perturbed = ps;
    for (auto& v : perturbed.get("ttl.l0.attn.wq").data) v += 0.25;
    for (auto& v : perturbed.get("ttl.tok_emb").data) v -= 0.1;
    auto after = encode_all(perturbed);

    CHECK(std::memcmp(after[1].data.data(), base[1].data.data(), base[1].numel() * sizeof(double)) == 0);
    CHECK(std::memcmp(after[2].data.data(), base[2].data.data(), base[2].numel() * sizeof(double)) == 0);
    CHECK(std::memcmp(after[0].data.data(), base[0].data.data(), base[0].numel() * sizeof(double)) != 0);
}

TEST_CASE("embeddings are bit-identical across repeated runs") {
    ModelConfig cfg = tiny_config();
    ParamStore<float> ps = init_model_params<float>(cfg, 15);
    TokenizedRecipe r = tiny_recipe(cfg);
    auto run = [&] {
        Tape<float> tp(false);
        ModelVars<float> mv = bind_model(tp, ps, cfg, false, false);
        return tp.value(encode_recipe_embedding(tp, mv, cfg, r).joint).data;
    };
    auto a = run();
    auto b = run();
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

TEST_CASE("gradients flow through the full recipe pathway") {
    ModelConfig cfg = tiny_config();
    ParamStore<double> ps = init_model_params<double>(cfg, 16);
    TokenizedRecipe r = tiny_recipe(cfg);
    Rng rng(77);
    Tensor<double> target(std::vector<std::size_t>{cfg.joint_dim});
    for (auto& v : target.data) v = rng.normal();

    for (const char* pname : {"mrg.w", "ttl.tok_emb", "ing.doc.l0.ffn.w1", "empty.ttl"}) {
        TokenizedRecipe probe_recipe = r;
        if (std::string(pname) == "empty.ttl") probe_recipe.title = seq({}, cfg.max_sentence_len);
        GradCheckFn f = [&, pname](Tape<double>& tp, Var x) {
            std::unordered_map<std::string, Var> overrides{{pname, x}};
            ModelVars<double> mv = bind_model(tp, ps, cfg, false, false, &overrides);
            auto emb = encode_recipe_embedding(tp, mv, cfg, probe_recipe);
            return tp.cosine_similarity(emb.joint, tp.constant(target));
        };
        const double err = grad_check(f, ps.get(pname), 1e-5);
        INFO(pname);
        CHECK(err < 1e-4);
    }
}
