#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmrr/config.hpp"
#include "xmrr/corpus.hpp"
#include "xmrr/model.hpp"
#include "xmrr/optim.hpp"

namespace xmrr {

constexpr char kCheckpointMagic[8] = {'X', 'M', 'R', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointState {
    RunConfig config;            // snapshot with model.vocab_size resolved
    Vocabulary vocab;
    ParamStore<float> params;
    AdamState<float> opt;
    std::uint64_t rng_state = 0;
    std::size_t epoch = 0;
    double best_val_r1 = 0.0;
};

namespace detail {

struct TensorDirEntry {
    std::string name;
    std::vector<std::size_t> shape;
    std::uint64_t offset = 0;
};

template <typename W>
void write_raw(std::ofstream& out, const W& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(W));
}

} // namespace detail

// Single binary container: 8-byte magic, u32 version, u64 length-prefixed
// UTF-8 JSON header (config, vocabulary, optimizer scalars, tensor directory
// with byte offsets), then raw little-endian f32 tensor payloads. Offsets are
// relative to the start of the payload section.
inline void save_checkpoint(const CheckpointState& state, const std::string& path) {
    nlohmann::json header;
    header["config"] = to_json(state.config);
    header["vocab"] = state.vocab.tokens;
    header["epoch"] = state.epoch;
    header["best_val_r1"] = state.best_val_r1;
    header["rng_state"] = state.rng_state;
    header["adam"] = {{"beta1", state.opt.cfg.beta1},
                      {"beta2", state.opt.cfg.beta2},
                      {"eps", state.opt.cfg.eps}};
    nlohmann::json steps = nlohmann::json::object();
    for (const auto& [name, slot] : state.opt.slots) steps[name] = slot.step;
    header["adam"]["steps"] = steps;

    nlohmann::json dir = nlohmann::json::array();
    std::uint64_t offset = 0;
    std::vector<const Tensor<float>*> payload;
    auto add_tensor = [&](const std::string& name, const Tensor<float>& t) {
        dir.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
        payload.push_back(&t);
        offset += std::uint64_t(t.numel()) * sizeof(float);
    };
    for (std::size_t i = 0; i < state.params.size(); ++i)
        add_tensor(state.params.names[i], state.params.values[i]);
    for (const auto& [name, slot] : state.opt.slots) {
        add_tensor("adam.m." + name, slot.m);
        add_tensor("adam.v." + name, slot.v);
    }
    header["tensors"] = dir;

    const std::string header_bytes = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::write_raw(out, kCheckpointVersion);
    detail::write_raw(out, std::uint64_t(header_bytes.size()));
    out.write(header_bytes.data(), std::streamsize(header_bytes.size()));
    for (const Tensor<float>* t : payload)
        out.write(reinterpret_cast<const char*>(t->data.data()),
                  std::streamsize(t->numel() * sizeof(float)));
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

inline CheckpointState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    std::size_t cursor = 0;
    auto need = [&](std::size_t n, const std::string& what) {
        if (cursor + n > bytes.size())
            throw std::runtime_error("checkpoint truncated at offset " + std::to_string(cursor) +
                                     " while reading " + what + ": " + path);
    };
    need(sizeof(kCheckpointMagic), "magic");
    if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
        throw std::runtime_error("checkpoint has bad magic: " + path);
    cursor += sizeof(kCheckpointMagic);

    std::uint32_t version = 0;
    need(sizeof(version), "version");
    std::memcpy(&version, bytes.data() + cursor, sizeof(version));
    cursor += sizeof(version);
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) +
                                 " (expected " + std::to_string(kCheckpointVersion) + ")");

    std::uint64_t header_len = 0;
    need(sizeof(header_len), "header length");
    std::memcpy(&header_len, bytes.data() + cursor, sizeof(header_len));
    cursor += sizeof(header_len);
    need(header_len, "JSON header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + std::ptrdiff_t(cursor),
                                       bytes.begin() + std::ptrdiff_t(cursor + header_len));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    cursor += header_len;
    const std::size_t payload_base = cursor;

    CheckpointState state;
    state.config = run_config_from_json(header.at("config"));
    state.vocab.tokens = header.at("vocab").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < state.vocab.tokens.size(); ++i)
        state.vocab.ids[state.vocab.tokens[i]] = std::int32_t(i);
    state.epoch = header.at("epoch").get<std::size_t>();
    state.best_val_r1 = header.at("best_val_r1").get<double>();
    state.rng_state = header.at("rng_state").get<std::uint64_t>();
    state.opt.cfg.beta1 = header.at("adam").at("beta1").get<double>();
    state.opt.cfg.beta2 = header.at("adam").at("beta2").get<double>();
    state.opt.cfg.eps = header.at("adam").at("eps").get<double>();

    auto read_tensor = [&](const nlohmann::json& entry) {
        const std::string name = entry.at("name").get<std::string>();
        const std::vector<std::size_t> shape = entry.at("shape").get<std::vector<std::size_t>>();
        const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
        Tensor<float> t(shape);
        const std::uint64_t nbytes = std::uint64_t(t.numel()) * sizeof(float);
        if (payload_base + offset + nbytes > bytes.size())
            throw std::runtime_error("checkpoint truncated: tensor \"" + name + "\" at payload offset " +
                                     std::to_string(offset) + " needs " + std::to_string(nbytes) +
                                     " bytes but the file ends " +
                                     std::to_string(bytes.size() - payload_base) +
                                     " bytes into the payload");
        std::memcpy(t.data.data(), bytes.data() + payload_base + offset, nbytes);
        return std::pair<std::string, Tensor<float>>(name, std::move(t));
    };

    for (const auto& entry : header.at("tensors")) {
        auto [name, tensor] = read_tensor(entry);
        if (name.rfind("adam.m.", 0) == 0) {
            state.opt.slots[name.substr(7)].m = std::move(tensor);
        } else if (name.rfind("adam.v.", 0) == 0) {
            state.opt.slots[name.substr(7)].v = std::move(tensor);
        } else {
            state.params.add(name, std::move(tensor));
        }
    }
    if (header.at("adam").contains("steps"))
        for (const auto& item : header.at("adam").at("steps").items())
            state.opt.slots[item.key()].step = item.value().get<std::uint64_t>();

    // consistency against the config snapshot
    if (state.config.model.vocab_size != state.vocab.size())
        throw std::runtime_error("checkpoint vocabulary size " + std::to_string(state.vocab.size()) +
                                 " does not match config vocab_size " +
                                 std::to_string(state.config.model.vocab_size));
    const ModelConfig mc = state.config.resolved_model(state.vocab.size());
    for (const auto& [name, shape] : detail::param_layout(mc)) {
        if (!state.params.has(name))
            throw std::runtime_error("checkpoint is missing tensor \"" + name + "\"");
        const Tensor<float>& t = state.params.get(name);
        if (t.shape != shape)
            throw std::runtime_error("checkpoint shape mismatch for \"" + name + "\": file has " +
                                     shape_str(t.shape) + ", config expects " + shape_str(shape));
    }
    return state;
}

} // namespace xmrr
