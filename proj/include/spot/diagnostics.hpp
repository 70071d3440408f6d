#pragma once

// Gradient-flow diagnostic and mask rendering.
//
// The gradient map measures, for each canonical patch position, the L1
// norm of that patch's reconstruction-loss gradient with respect to the
// slot tensor entering the decoder (absolute entries summed over all slots
// and dimensions), averaged over samples. Decoders trained only in the
// default order lean on the slots mostly for early positions; permutation
// training evens the reliance out.

#include <cmath>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "spot/eval.hpp"
#include "spot/metrics.hpp"
#include "spot/model.hpp"
#include "spot/png.hpp"
#include "spot/scene.hpp"
#include "spot/train.hpp"

namespace spot {

enum class GradMapMode { kDefault, kRandom };

inline std::string grad_map_mode_name(GradMapMode m) {
    return m == GradMapMode::kDefault ? "default" : "random";
}

inline GradMapMode grad_map_mode_from_name(const std::string& s) {
    if (s == "default") return GradMapMode::kDefault;
    if (s == "random") return GradMapMode::kRandom;
    throw std::invalid_argument("unknown grad-map mode: " + s);
}

struct GradNormMap {
    int grid_h = 0;
    int grid_w = 0;
    std::string mode;
    int count = 0;
    std::vector<double> values;  // grid_h * grid_w, mean L1 grad norm per position

    double mean() const {
        double acc = 0;
        for (double v : values) acc += v;
        return acc / static_cast<double>(values.size());
    }

    double coefficient_of_variation() const {
        const double mu = mean();
        double var = 0;
        for (double v : values) var += (v - mu) * (v - mu);
        var /= static_cast<double>(values.size());
        return std::sqrt(var) / mu;
    }
};

inline nlohmann::ordered_json grad_norm_map_to_json(const GradNormMap& g) {
    nlohmann::ordered_json j;
    j["grid_h"] = g.grid_h;
    j["grid_w"] = g.grid_w;
    j["mode"] = g.mode;
    j["count"] = g.count;
    j["values"] = g.values;
    return j;
}

/// Per-position slot-gradient norms, averaged over up to `limit` samples.
/// mode=default probes with the raster order; mode=random draws a fresh
/// permutation per sample.
inline GradNormMap grad_norm_map(SpotModel<float>& model, const Dataset& ds, GradMapMode mode,
                                 int limit = 128, uint64_t seed = 0x96ad) {
    if (model.cfg.decoder != DecoderKind::kAr)
        throw std::invalid_argument("grad_norm_map: needs the autoregressive decoder");
    if (ds.n_patches() != model.cfg.n() || ds.d_y() != model.cfg.d_y)
        throw std::invalid_argument("grad_norm_map: checkpoint incompatible with dataset");
    const int n = model.cfg.n();
    const int d_y = model.cfg.d_y;
    const auto& spec = ds.manifest.spec;
    const int count = std::min<int>(limit, static_cast<int>(ds.samples.size()));

    GradNormMap map;
    map.grid_h = model.cfg.grid_h;
    map.grid_w = model.cfg.grid_w;
    map.mode = grad_map_mode_name(mode);
    map.count = count;
    map.values.assign(static_cast<size_t>(n), 0.0);

    Rng perm_rng(mix_seed(seed, 1));
    for (int s = 0; s < count; ++s) {
        const auto& sample = ds.samples[static_cast<size_t>(s)];
        const auto x_patches = pixel_patches(sample, spec.patch_size);

        // slots from the encoder, then re-rooted as a leaf so the
        // per-patch backward passes stay inside the decoder graph
        std::vector<float> slot_values;
        {
            Tape<float> t(false);
            auto x = t.constant({n, model.cfg.d_patch}, x_patches);
            Rng noise(mix_seed(seed, 1000 + static_cast<uint64_t>(s)));
            Var<float> init = model.slot_attn.init_slots(t, noise);
            SlotOutput<float> enc = model.encode(t, x, init);
            slot_values.assign(enc.slots.data(), enc.slots.data() + enc.slots.numel());
        }
        TensorData<float> slots({model.cfg.slots.k, model.cfg.slots.d_u}, true);
        slots.value = slot_values;

        const PermutationSpec& perm =
            mode == GradMapMode::kDefault
                ? model.perms[0]
                : model.perms[perm_rng.next_below(model.perms.size())];

        Tape<float> t;
        auto y = t.constant({n, d_y}, sample.patch_targets);
        DecoderOutput<float> dec = model.ar.forward(t, y, t.watch(slots), perm);
        std::vector<Var<float>> patch_losses;
        patch_losses.reserve(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i)
            patch_losses.push_back(
                mse(slice_rows(dec.y_hat, i, 1), slice_rows(y, i, 1)));
        for (int i = 0; i < n; ++i) {
            t.zero_grads();
            t.backward(patch_losses[static_cast<size_t>(i)]);
            double l1 = 0;
            for (float g : slots.grad) l1 += std::abs(static_cast<double>(g));
            map.values[static_cast<size_t>(i)] += l1;
        }
    }
    for (auto& v : map.values) v /= static_cast<double>(count);
    return map;
}

/// Mean gradient norm over the first raster row and first column versus
/// the mean over all remaining positions.
struct EdgeVsRest {
    double edge_mean = 0.0;
    double rest_mean = 0.0;
};

inline EdgeVsRest first_row_col_vs_rest(const GradNormMap& m) {
    EdgeVsRest r;
    int edge_count = 0, rest_count = 0;
    for (int row = 0; row < m.grid_h; ++row)
        for (int col = 0; col < m.grid_w; ++col) {
            const double v = m.values[static_cast<size_t>(row) * m.grid_w + col];
            if (row == 0 || col == 0) {
                r.edge_mean += v;
                ++edge_count;
            } else {
                r.rest_mean += v;
                ++rest_count;
            }
        }
    r.edge_mean /= edge_count;
    r.rest_mean /= rest_count;
    return r;
}

// ---------------------------------------------------------------------------
// Mask rendering
// ---------------------------------------------------------------------------

/// Fixed 24-color palette for label overlays.
inline const std::vector<std::array<uint8_t, 3>>& render_palette() {
    static const std::vector<std::array<uint8_t, 3>> palette = {
        {230, 25, 75},   {60, 180, 75},   {255, 225, 25}, {0, 130, 200},  {245, 130, 48},
        {145, 30, 180},  {70, 240, 240},  {240, 50, 230}, {210, 245, 60}, {250, 190, 212},
        {0, 128, 128},   {220, 190, 255}, {170, 110, 40}, {255, 250, 200},{128, 0, 0},
        {170, 255, 195}, {128, 128, 0},   {255, 215, 180},{0, 0, 128},    {128, 128, 128},
        {255, 255, 255}, {100, 160, 60},  {60, 60, 220},  {200, 80, 120}};
    return palette;
}

/// Blends the sample image with flat per-label colors (50/50) and writes a
/// PNG. The label -> color mapping is fixed by label % 24.
inline void render_masks(const SceneSample& sample, const LabelMap& labels,
                         const std::filesystem::path& path) {
    if (labels.height != sample.height || labels.width != sample.width)
        throw std::invalid_argument("render_masks: label map does not match image");
    const auto& palette = render_palette();
    std::vector<uint8_t> rgb(static_cast<size_t>(sample.height) * sample.width * 3);
    for (size_t i = 0; i < labels.labels.size(); ++i) {
        const auto& color = palette[static_cast<size_t>(labels.labels[i]) % palette.size()];
        for (int c = 0; c < 3; ++c) {
            const double img = sample.image[i * 3 + static_cast<size_t>(c)] * 255.0;
            rgb[i * 3 + static_cast<size_t>(c)] =
                static_cast<uint8_t>(0.5 * img + 0.5 * color[static_cast<size_t>(c)]);
        }
    }
    write_png_rgb8(path, sample.width, sample.height, rgb);
}

}  // namespace spot
