#pragma once

// The assembled model: patch encoder -> slot attention -> decoder (either
// the permuted autoregressive transformer or the MLP broadcast decoder),
// plus checkpoint serialization. Checkpoints are a directory of tensor
// files and a meta.json carrying the config snapshot, global step, and
// PRNG streams, so loading resumes training deterministically.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spot/decoder.hpp"
#include "spot/optimizer.hpp"
#include "spot/serialize.hpp"
#include "spot/slot_encoder.hpp"

namespace spot {

enum class DecoderKind { kAr, kMlp };

inline std::string decoder_kind_name(DecoderKind k) { return k == DecoderKind::kAr ? "ar" : "mlp"; }

inline DecoderKind decoder_kind_from_name(const std::string& s) {
    if (s == "ar") return DecoderKind::kAr;
    if (s == "mlp") return DecoderKind::kMlp;
    throw std::invalid_argument("unknown decoder kind: " + s);
}

struct ModelConfig {
    int grid_h = 8, grid_w = 8;
    int d_y = 48;
    int d_patch = 48;
    EncoderConfig enc;
    SlotConfig slots;
    DecoderConfig dec;
    DecoderKind decoder = DecoderKind::kAr;

    int n() const { return grid_h * grid_w; }

    void validate() const {
        enc.validate();
        slots.validate();
        dec.validate();
        if (grid_h < 1 || grid_w < 1 || n() < 4)
            throw std::invalid_argument("ModelConfig: grid too small");
    }
};

inline nlohmann::ordered_json model_config_to_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["grid_h"] = c.grid_h;
    j["grid_w"] = c.grid_w;
    j["d_y"] = c.d_y;
    j["d_patch"] = c.d_patch;
    j["enc"] = {{"d_enc", c.enc.d_enc},
                {"depth", c.enc.depth},
                {"heads", c.enc.heads},
                {"trainable_blocks", c.enc.trainable_blocks}};
    j["slots"] = {{"k", c.slots.k},
                  {"d_u", c.slots.d_u},
                  {"iterations", c.slots.iterations},
                  {"mlp_hidden", c.slots.mlp_hidden},
                  {"d_p", c.slots.d_p},
                  {"init", slot_init_name(c.slots.init_mode)}};
    j["dec"] = {{"kind", decoder_kind_name(c.decoder)},
                {"d_dec", c.dec.d_dec},
                {"heads", c.dec.heads},
                {"blocks", c.dec.blocks},
                {"ff_hidden", c.dec.ff_hidden},
                {"mlp_hidden", c.dec.mlp_hidden}};
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.grid_h = j["grid_h"].get<int>();
    c.grid_w = j["grid_w"].get<int>();
    c.d_y = j["d_y"].get<int>();
    c.d_patch = j["d_patch"].get<int>();
    c.enc.d_enc = j["enc"]["d_enc"].get<int>();
    c.enc.depth = j["enc"]["depth"].get<int>();
    c.enc.heads = j["enc"]["heads"].get<int>();
    c.enc.trainable_blocks = j["enc"]["trainable_blocks"].get<int>();
    c.slots.k = j["slots"]["k"].get<int>();
    c.slots.d_u = j["slots"]["d_u"].get<int>();
    c.slots.iterations = j["slots"]["iterations"].get<int>();
    c.slots.mlp_hidden = j["slots"]["mlp_hidden"].get<int>();
    c.slots.d_p = j["slots"]["d_p"].get<int>();
    c.slots.init_mode = slot_init_from_name(j["slots"]["init"].get<std::string>());
    c.decoder = decoder_kind_from_name(j["dec"]["kind"].get<std::string>());
    c.dec.d_dec = j["dec"]["d_dec"].get<int>();
    c.dec.heads = j["dec"]["heads"].get<int>();
    c.dec.blocks = j["dec"]["blocks"].get<int>();
    c.dec.ff_hidden = j["dec"]["ff_hidden"].get<int>();
    c.dec.mlp_hidden = j["dec"]["mlp_hidden"].get<int>();
    c.validate();
    return c;
}

template <typename T>
struct SpotModel {
    ModelConfig cfg;
    PatchEncoder<T> encoder;
    SlotAttentionModule<T> slot_attn;
    ArDecoder<T> ar;
    MlpDecoder<T> mlp;
    std::vector<PermutationSpec> perms;

    void init(const ModelConfig& c, uint64_t seed) {
        c.validate();
        cfg = c;
        Rng rng(mix_seed(0x0de1ull, seed));
        encoder.init(rng, cfg.enc, cfg.n(), cfg.d_patch);
        slot_attn.init(rng, cfg.slots, cfg.enc.d_enc);
        if (cfg.decoder == DecoderKind::kAr)
            ar.init(rng, cfg.dec, cfg.n(), cfg.d_y, cfg.slots.d_u);
        else
            mlp.init(rng, cfg.n(), cfg.d_y, cfg.slots.d_u, cfg.dec.mlp_hidden);
        perms = build_permutations(cfg.grid_h, cfg.grid_w);
    }

    SlotOutput<T> encode(Tape<T>& t, Var<T> patches, Var<T> initial_slots) {
        return slot_attn.forward(t, encoder.forward(t, patches), initial_slots);
    }

    DecoderOutput<T> decode(Tape<T>& t, Var<T> y, Var<T> slots, const PermutationSpec& perm) {
        if (cfg.decoder == DecoderKind::kAr) return ar.forward(t, y, slots, perm);
        return mlp.forward(t, slots);
    }

    void visit(const ParamVisitor<T>& v) {
        encoder.visit("encoder", v);
        slot_attn.visit("slot", v);
        if (cfg.decoder == DecoderKind::kAr)
            ar.visit("decoder", v);
        else
            mlp.visit("decoder", v);
    }

    std::vector<AdamParam<T>> adam_params() {
        std::vector<AdamParam<T>> out;
        visit([&](const std::string& name, TensorData<T>& t) { out.push_back({name, &t}); });
        return out;
    }

    void zero_grads() {
        visit([](const std::string&, TensorData<T>& t) {
            t.ensure_grad();
            t.zero_grad();
        });
    }
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct RngStates {
    std::vector<std::array<uint64_t, 4>> streams;
};

inline nlohmann::ordered_json rng_states_to_json(const RngStates& s) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& st : s.streams) {
        nlohmann::ordered_json one = nlohmann::ordered_json::array();
        for (uint64_t w : st) {
            char buf[17];
            std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(w));
            one.push_back(std::string(buf));
        }
        arr.push_back(one);
    }
    return arr;
}

inline RngStates rng_states_from_json(const nlohmann::json& j) {
    RngStates s;
    for (const auto& one : j) {
        std::array<uint64_t, 4> st{};
        for (int i = 0; i < 4; ++i)
            st[static_cast<size_t>(i)] =
                std::stoull(one[i].get<std::string>(), nullptr, 16);
        s.streams.push_back(st);
    }
    return s;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, SpotModel<T>& model, int64_t step,
                     int epoch, const RngStates& rng, Adam<T>* opt = nullptr,
                     const nlohmann::ordered_json& extra = {}) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "params");
    nlohmann::ordered_json meta;
    meta["format"] = 1;
    meta["config"] = model_config_to_json(model.cfg);
    meta["step"] = step;
    meta["epoch"] = epoch;
    meta["rng"] = rng_states_to_json(rng);
    nlohmann::ordered_json names = nlohmann::ordered_json::array();
    model.visit([&](const std::string& name, TensorData<T>& p) {
        names.push_back(name);
        std::vector<float> data(p.value.size());
        for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(p.value[i]);
        write_tensor_file(dir / "params" / (name + ".f32"), p.shape, data);
    });
    meta["params"] = names;
    meta["adam_steps"] = opt ? opt->steps_taken() : -1;
    if (!extra.is_null() && !extra.empty()) meta["extra"] = extra;
    if (opt) {
        fs::create_directories(dir / "opt");
        for (size_t i = 0; i < opt->num_params(); ++i) {
            const auto& ap = opt->param(i);
            auto dump = [&](const std::vector<T>& v, const std::string& suffix) {
                std::vector<float> data(v.size());
                for (size_t q = 0; q < v.size(); ++q) data[q] = static_cast<float>(v[q]);
                write_tensor_file(dir / "opt" / (ap.name + suffix), ap.tensor->shape, data);
            };
            dump(opt->moment1(i), ".m.f32");
            dump(opt->moment2(i), ".v.f32");
        }
    }
    std::ofstream out(dir / "meta.json");
    if (!out) throw std::runtime_error("save_checkpoint: cannot write meta in " + dir.string());
    out << meta.dump(2) << "\n";
}

struct CheckpointMeta {
    ModelConfig config;
    int64_t step = 0;
    int epoch = 0;
    RngStates rng;
    int64_t adam_steps = -1;
    nlohmann::json extra;
};

inline CheckpointMeta read_checkpoint_meta(const std::filesystem::path& dir) {
    std::ifstream in(dir / "meta.json");
    if (!in) throw std::runtime_error("read_checkpoint_meta: missing " + (dir / "meta.json").string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("read_checkpoint_meta: corrupt meta.json: " + std::string(e.what()));
    }
    CheckpointMeta m;
    m.config = model_config_from_json(j["config"]);
    m.step = j["step"].get<int64_t>();
    m.epoch = j.value("epoch", 0);
    m.rng = rng_states_from_json(j["rng"]);
    m.adam_steps = j.value("adam_steps", -1);
    if (j.contains("extra")) m.extra = j["extra"];
    return m;
}

/// Rebuilds the model from the stored config and loads every parameter.
/// Shape or listing mismatches are integrity errors naming the tensor.
template <typename T>
CheckpointMeta load_checkpoint(const std::filesystem::path& dir, SpotModel<T>& model,
                               Adam<T>* opt = nullptr) {
    CheckpointMeta meta = read_checkpoint_meta(dir);
    model.init(meta.config, 0);
    model.visit([&](const std::string& name, TensorData<T>& p) {
        const auto path = dir / "params" / (name + ".f32");
        TensorFile tf = read_tensor_file(path);
        if (tf.shape != p.shape)
            throw std::runtime_error("load_checkpoint: shape mismatch for '" + name + "': stored " +
                                     shape_str(tf.shape) + " vs expected " + shape_str(p.shape));
        for (size_t i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<T>(tf.data[i]);
    });
    if (opt) {
        if (meta.adam_steps < 0)
            throw std::runtime_error("load_checkpoint: checkpoint has no optimizer state");
        opt->set_steps_taken(meta.adam_steps);
        for (size_t i = 0; i < opt->num_params(); ++i) {
            const auto& ap = opt->param(i);
            auto fill = [&](std::vector<T>& v, const std::string& suffix) {
                TensorFile tf = read_tensor_file(dir / "opt" / (ap.name + suffix));
                if (tf.data.size() != v.size())
                    throw std::runtime_error("load_checkpoint: optimizer state size mismatch for '" +
                                             ap.name + "'");
                for (size_t q = 0; q < v.size(); ++q) v[q] = static_cast<T>(tf.data[q]);
            };
            fill(opt->moment1(i), ".m.f32");
            fill(opt->moment2(i), ".v.f32");
        }
    }
    return meta;
}

}  // namespace spot
