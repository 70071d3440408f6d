#pragma once

// Training configuration, read from a UTF-8 text file of `key = value`
// lines with `#` comments. Unknown keys are errors.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>

#include "spot/model.hpp"

namespace spot {

enum class PermMode { kRandom, kDefaultOnly };

inline PermMode perm_mode_from_name(const std::string& s) {
    if (s == "random") return PermMode::kRandom;
    if (s == "default_only") return PermMode::kDefaultOnly;
    throw std::invalid_argument("unknown permutation mode: " + s);
}

struct TrainConfig {
    int stage = 1;
    std::string data;
    int epochs = 20;
    int batch_size = 32;
    double peak_lr = 4e-4;
    double low_lr = 4e-7;
    int warmup_steps = 500;
    double lambda = -1.0;  // resolved from the decoder kind when unset
    int k = 5;
    DecoderKind decoder = DecoderKind::kAr;
    PermMode permutations = PermMode::kRandom;
    uint64_t seed = 0;
    std::string teacher;
    int trainable_blocks = -1;  // resolved from the stage when unset

    int d_enc = 64;
    int depth = 2;
    int heads = 4;
    int d_u = -1;             // defaults to d_enc
    int slot_iters = 3;
    int slot_mlp_hidden = -1;  // defaults to 4 * d_u
    int d_p = -1;              // defaults to d_u
    int d_dec = 48;
    int dec_heads = 6;
    int dec_blocks = 4;
    int dec_ff = -1;  // defaults to 4 * d_dec
    int mlp_hidden = 256;
};

inline void resolve_train_defaults(TrainConfig& c) {
    if (c.stage != 1 && c.stage != 2)
        throw std::invalid_argument("train config: stage must be 1 or 2");
    if (c.stage == 2 && c.teacher.empty())
        throw std::invalid_argument("train config: stage 2 requires a teacher checkpoint");
    if (c.data.empty()) throw std::invalid_argument("train config: data path is required");
    if (c.peak_lr <= c.low_lr || c.low_lr < 0)
        throw std::invalid_argument("train config: need peak_lr > low_lr >= 0");
    if (c.warmup_steps < 0) throw std::invalid_argument("train config: warmup_steps must be >= 0");
    if (c.d_u < 0) c.d_u = c.d_enc;
    if (c.slot_mlp_hidden < 0) c.slot_mlp_hidden = 4 * c.d_u;
    if (c.d_p < 0) c.d_p = c.d_u;
    if (c.dec_ff < 0) c.dec_ff = 4 * c.d_dec;
    if (c.lambda < 0) c.lambda = c.decoder == DecoderKind::kAr ? 0.005 : 0.001;
    if (c.trainable_blocks < 0) c.trainable_blocks = c.stage == 1 ? 0 : c.depth;
}

inline TrainConfig parse_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path.string());
    TrainConfig c;
    std::map<std::string, std::function<void(const std::string&)>> setters;
    auto as_int = [](const std::string& v) { return std::stoi(v); };
    auto as_double = [](const std::string& v) { return std::stod(v); };
    setters["stage"] = [&](const std::string& v) { c.stage = as_int(v); };
    setters["data"] = [&](const std::string& v) { c.data = v; };
    setters["epochs"] = [&](const std::string& v) { c.epochs = as_int(v); };
    setters["batch_size"] = [&](const std::string& v) { c.batch_size = as_int(v); };
    setters["peak_lr"] = [&](const std::string& v) { c.peak_lr = as_double(v); };
    setters["low_lr"] = [&](const std::string& v) { c.low_lr = as_double(v); };
    setters["warmup_steps"] = [&](const std::string& v) { c.warmup_steps = as_int(v); };
    setters["lambda"] = [&](const std::string& v) { c.lambda = as_double(v); };
    setters["k"] = [&](const std::string& v) { c.k = as_int(v); };
    setters["decoder"] = [&](const std::string& v) { c.decoder = decoder_kind_from_name(v); };
    setters["permutations"] = [&](const std::string& v) { c.permutations = perm_mode_from_name(v); };
    setters["seed"] = [&](const std::string& v) { c.seed = std::stoull(v); };
    setters["teacher"] = [&](const std::string& v) { c.teacher = v; };
    setters["trainable_blocks"] = [&](const std::string& v) { c.trainable_blocks = as_int(v); };
    setters["d_enc"] = [&](const std::string& v) { c.d_enc = as_int(v); };
    setters["depth"] = [&](const std::string& v) { c.depth = as_int(v); };
    setters["heads"] = [&](const std::string& v) { c.heads = as_int(v); };
    setters["d_u"] = [&](const std::string& v) { c.d_u = as_int(v); };
    setters["slot_iters"] = [&](const std::string& v) { c.slot_iters = as_int(v); };
    setters["slot_mlp_hidden"] = [&](const std::string& v) { c.slot_mlp_hidden = as_int(v); };
    setters["d_p"] = [&](const std::string& v) { c.d_p = as_int(v); };
    setters["d_dec"] = [&](const std::string& v) { c.d_dec = as_int(v); };
    setters["dec_heads"] = [&](const std::string& v) { c.dec_heads = as_int(v); };
    setters["dec_blocks"] = [&](const std::string& v) { c.dec_blocks = as_int(v); };
    setters["dec_ff"] = [&](const std::string& v) { c.dec_ff = as_int(v); };
    setters["mlp_hidden"] = [&](const std::string& v) { c.mlp_hidden = as_int(v); };

    std::string line;
    int line_no = 0;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = setters.find(key);
        if (it == setters.end())
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": unknown key '" + key + "'");
        it->second(value);
    }
    return c;
}

}  // namespace spot
