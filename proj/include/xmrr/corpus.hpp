#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "xmrr/rng.hpp"
#include "xmrr/tensor.hpp"

namespace xmrr {

constexpr std::int32_t kPadId = 0;
constexpr std::int32_t kUnkId = 1;

// One structured document: title, ingredient lines, instruction lines, and an
// optional precomputed image feature. A record is "paired" iff the feature is
// present.
struct RecipeRecord {
    std::string id;
    std::string title;
    std::vector<std::string> ingredients;
    std::vector<std::string> instructions;
    std::optional<std::vector<float>> image_feature;

    bool paired() const { return image_feature.has_value(); }
};

struct Vocabulary {
    std::vector<std::string> tokens;                    // id -> token
    std::unordered_map<std::string, std::int32_t> ids; // token -> id

    std::size_t size() const { return tokens.size(); }

    std::int32_t id_of(const std::string& token) const {
        auto it = ids.find(token);
        return it == ids.end() ? kUnkId : it->second;
    }
};

struct TokenSequence {
    std::vector<std::int32_t> ids;     // fixed length, PAD-filled tail
    std::vector<std::uint8_t> mask;    // 1 = real token
    std::size_t length = 0;            // number of real tokens

    bool empty() const { return length == 0; }
};

struct TokenizedRecipe {
    std::string id;
    TokenSequence title;
    std::vector<TokenSequence> ingredients;
    std::vector<TokenSequence> instructions;
    bool paired = false;
    std::optional<std::vector<float>> image_feature;
};

enum class BatchMode { paired, text_only };

struct Batch {
    std::vector<TokenizedRecipe> records;
    Tensor<float> image_features; // B x D_img when mode == paired, else empty
    BatchMode mode = BatchMode::paired;

    std::size_t size() const { return records.size(); }
};

struct EncodeLimits {
    std::size_t max_sentence_len = 20;
    std::size_t max_sentences = 20;
};

// Lowercase and split on runs of non-alphanumeric characters. Bytes >= 0x80
// are kept as word characters so UTF-8 sequences survive intact.
inline std::vector<std::string> split_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char ch : text) {
        const bool word = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') ||
                          (ch >= '0' && ch <= '9') || ch >= 0x80;
        if (word) {
            cur.push_back(ch >= 'A' && ch <= 'Z' ? char(ch - 'A' + 'a') : char(ch));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

namespace detail {

inline std::string parse_error(std::size_t line_no, const std::string& what) {
    return "corpus line " + std::to_string(line_no) + ": " + what;
}

inline RecipeRecord parse_record(const nlohmann::json& j, std::size_t line_no, std::size_t feature_dim) {
    if (!j.is_object()) throw std::runtime_error(parse_error(line_no, "not a JSON object"));
    for (const char* key : {"id", "title", "ingredients", "instructions"})
        if (!j.contains(key))
            throw std::runtime_error(parse_error(line_no, std::string("missing required field \"") + key + "\""));

    RecipeRecord r;
    try {
        r.id = j.at("id").get<std::string>();
        r.title = j.at("title").get<std::string>();
        r.ingredients = j.at("ingredients").get<std::vector<std::string>>();
        r.instructions = j.at("instructions").get<std::vector<std::string>>();
        if (j.contains("image_feature") && !j.at("image_feature").is_null())
            r.image_feature = j.at("image_feature").get<std::vector<float>>();
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(parse_error(line_no, std::string("bad field type: ") + e.what()));
    }
    if (r.image_feature && r.image_feature->size() != feature_dim)
        throw std::runtime_error(parse_error(line_no, "image feature length " +
                                                          std::to_string(r.image_feature->size()) +
                                                          " != expected " + std::to_string(feature_dim)));
    if (r.title.empty() && r.ingredients.empty() && r.instructions.empty())
        throw std::runtime_error(parse_error(line_no, "record \"" + r.id + "\" has no content"));
    return r;
}

} // namespace detail

// Parses a JSONL corpus (one record per line) in file order. Rejects schema
// violations with the offending 1-based line number.
inline std::vector<RecipeRecord> parse_recipe_corpus(const std::string& path, std::size_t feature_dim) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);
    std::vector<RecipeRecord> out;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(detail::parse_error(line_no, std::string("invalid JSON: ") + e.what()));
        }
        RecipeRecord r = detail::parse_record(j, line_no, feature_dim);
        if (!seen.insert(r.id).second)
            throw std::runtime_error(detail::parse_error(line_no, "duplicate id \"" + r.id + "\""));
        out.push_back(std::move(r));
    }
    return out;
}

// Token ids 0 and 1 are PAD and UNK. Remaining tokens come from all three
// components of every record (paired and text-only), ordered by descending
// frequency with lexicographic tie-break, cut at min_freq and capped at
// max_size entries including the specials. The ordering rule makes rebuilds
// byte-identical.
inline Vocabulary build_vocabulary(const std::vector<RecipeRecord>& corpus, std::size_t min_freq,
                                   std::size_t max_size) {
    if (corpus.empty()) throw std::runtime_error("build_vocabulary: empty corpus");
    if (min_freq < 1) throw std::runtime_error("build_vocabulary: min_freq must be >= 1");
    if (max_size < 2) throw std::runtime_error("build_vocabulary: max_size must be >= 2");

    std::unordered_map<std::string, std::size_t> freq;
    auto count = [&](const std::string& text) {
        for (auto& t : split_tokens(text)) ++freq[t];
    };
    for (const auto& r : corpus) {
        count(r.title);
        for (const auto& s : r.ingredients) count(s);
        for (const auto& s : r.instructions) count(s);
    }

    std::vector<std::pair<std::string, std::size_t>> ranked;
    ranked.reserve(freq.size());
    for (auto& kv : freq)
        if (kv.second >= min_freq) ranked.emplace_back(kv.first, kv.second);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary v;
    v.tokens = {"<pad>", "<unk>"};
    for (auto& kv : ranked) {
        if (v.tokens.size() >= max_size) break;
        v.tokens.push_back(kv.first);
    }
    for (std::size_t i = 0; i < v.tokens.size(); ++i) v.ids[v.tokens[i]] = std::int32_t(i);
    return v;
}

// Plain text vocabulary file: one token per line, line number = id.
inline void save_vocabulary(const Vocabulary& v, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write vocabulary file: " + path);
    for (const auto& t : v.tokens) out << t << "\n";
}

inline Vocabulary load_vocabulary(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) v.tokens.push_back(line);
    if (v.tokens.size() < 2) throw std::runtime_error("vocabulary file too small: " + path);
    for (std::size_t i = 0; i < v.tokens.size(); ++i) v.ids[v.tokens[i]] = std::int32_t(i);
    return v;
}

// Lowercase, split, map OOV to UNK, truncate to max_len, pad with PAD.
inline TokenSequence tokenize_sentence(const Vocabulary& vocab, const std::string& text,
                                       std::size_t max_len) {
    if (max_len < 1) throw std::runtime_error("tokenize_sentence: max_len must be >= 1");
    TokenSequence s;
    s.ids.assign(max_len, kPadId);
    s.mask.assign(max_len, 0);
    std::vector<std::string> words = split_tokens(text);
    s.length = std::min(words.size(), max_len);
    for (std::size_t i = 0; i < s.length; ++i) {
        s.ids[i] = vocab.id_of(words[i]);
        s.mask[i] = 1;
    }
    return s;
}

// Pure function of (vocab, record, limits). Lines that tokenize to nothing
// are dropped; components that end up with no sentences stay as empty lists.
inline TokenizedRecipe encode_recipe(const Vocabulary& vocab, const RecipeRecord& record,
                                     const EncodeLimits& limits) {
    if (limits.max_sentence_len < 1 || limits.max_sentences < 1)
        throw std::runtime_error("encode_recipe: limits must be positive");
    TokenizedRecipe t;
    t.id = record.id;
    t.title = tokenize_sentence(vocab, record.title, limits.max_sentence_len);
    auto encode_list = [&](const std::vector<std::string>& lines) {
        std::vector<TokenSequence> out;
        for (const auto& line : lines) {
            if (out.size() >= limits.max_sentences) break;
            TokenSequence s = tokenize_sentence(vocab, line, limits.max_sentence_len);
            if (!s.empty()) out.push_back(std::move(s));
        }
        return out;
    };
    t.ingredients = encode_list(record.ingredients);
    t.instructions = encode_list(record.instructions);
    t.paired = record.paired();
    t.image_feature = record.image_feature;
    return t;
}

// Epoch-level shuffled batches keyed by (seed, epoch); the final short batch
// is dropped so every batch has exactly batch_size in-batch negatives.
inline std::vector<Batch> make_batches(const std::vector<TokenizedRecipe>& dataset,
                                       std::size_t batch_size, std::uint64_t seed, std::size_t epoch,
                                       BatchMode mode) {
    if (batch_size < 1) throw std::runtime_error("make_batches: batch_size must be >= 1");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const bool want_paired = mode == BatchMode::paired;
        if (dataset[i].paired == want_paired) idx.push_back(i);
    }
    if (idx.empty())
        throw std::runtime_error(std::string("make_batches: no ") +
                                 (mode == BatchMode::paired ? "paired" : "text-only") + " records");
    if (batch_size > idx.size())
        throw std::runtime_error("make_batches: batch_size " + std::to_string(batch_size) +
                                 " exceeds filtered dataset size " + std::to_string(idx.size()));

    Rng rng(mix_seed(seed, epoch));
    rng.shuffle(idx);

    std::vector<Batch> out;
    const std::size_t n_batches = idx.size() / batch_size;
    out.reserve(n_batches);
    for (std::size_t b = 0; b < n_batches; ++b) {
        Batch batch;
        batch.mode = mode;
        std::unordered_set<std::string> ids;
        for (std::size_t k = 0; k < batch_size; ++k) {
            const TokenizedRecipe& r = dataset[idx[b * batch_size + k]];
            if (!ids.insert(r.id).second)
                throw std::runtime_error("make_batches: duplicate id \"" + r.id + "\" in batch");
            batch.records.push_back(r);
        }
        if (mode == BatchMode::paired) {
            const std::size_t d = batch.records[0].image_feature->size();
            batch.image_features = Tensor<float>({batch_size, d});
            for (std::size_t k = 0; k < batch_size; ++k) {
                const auto& f = *batch.records[k].image_feature;
                if (f.size() != d) throw std::runtime_error("make_batches: inconsistent feature dims");
                std::copy(f.begin(), f.end(), batch.image_features.data.begin() + k * d);
            }
        }
        out.push_back(std::move(batch));
    }
    return out;
}

} // namespace xmrr
