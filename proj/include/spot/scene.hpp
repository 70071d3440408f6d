#pragma once

// Synthetic multi-object sprite scenes with exact ground-truth masks, plus
// dataset persistence. Rasterization is anti-alias free and all randomness
// flows through the portable Rng, so a (spec, seed) pair reproduces the
// same bytes on any platform.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "spot/rng.hpp"
#include "spot/serialize.hpp"

namespace spot {

enum ShapeClass : int { kRectangle = 1, kEllipse = 2, kTriangle = 3 };

struct SceneSpec {
    int image_size = 32;
    int patch_size = 4;
    int objects_min = 2;
    int objects_max = 4;
    std::vector<int> shape_classes = {kRectangle, kEllipse, kTriangle};
    std::vector<std::array<float, 3>> palette = {
        {0.90f, 0.10f, 0.10f}, {0.10f, 0.75f, 0.20f}, {0.15f, 0.30f, 0.95f},
        {0.95f, 0.80f, 0.10f}, {0.80f, 0.15f, 0.80f}, {0.10f, 0.80f, 0.85f},
        {0.95f, 0.55f, 0.10f}, {0.90f, 0.90f, 0.90f}};
    std::array<float, 3> background = {0.05f, 0.05f, 0.08f};
    bool allow_occlusion = true;

    int grid() const { return image_size / patch_size; }
    int n_patches() const { return grid() * grid(); }

    void validate() const {
        if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
            throw std::invalid_argument("SceneSpec: image_size must be a positive multiple of patch_size");
        if (objects_min < 1 || objects_max < objects_min)
            throw std::invalid_argument("SceneSpec: need 1 <= objects_min <= objects_max");
        if (shape_classes.empty() || palette.empty())
            throw std::invalid_argument("SceneSpec: shape_classes and palette must be nonempty");
    }
};

inline nlohmann::json scene_spec_to_json(const SceneSpec& s) {
    nlohmann::json j;
    j["image_size"] = s.image_size;
    j["patch_size"] = s.patch_size;
    j["objects_min"] = s.objects_min;
    j["objects_max"] = s.objects_max;
    j["shape_classes"] = s.shape_classes;
    nlohmann::json pal = nlohmann::json::array();
    for (const auto& c : s.palette) pal.push_back({c[0], c[1], c[2]});
    j["palette"] = pal;
    j["background"] = {s.background[0], s.background[1], s.background[2]};
    j["allow_occlusion"] = s.allow_occlusion;
    return j;
}

inline SceneSpec scene_spec_from_json(const nlohmann::json& j) {
    SceneSpec s;
    if (j.contains("image_size")) s.image_size = j["image_size"].get<int>();
    if (j.contains("patch_size")) s.patch_size = j["patch_size"].get<int>();
    if (j.contains("objects_min")) s.objects_min = j["objects_min"].get<int>();
    if (j.contains("objects_max")) s.objects_max = j["objects_max"].get<int>();
    if (j.contains("shape_classes")) s.shape_classes = j["shape_classes"].get<std::vector<int>>();
    if (j.contains("palette")) {
        s.palette.clear();
        for (const auto& c : j["palette"])
            s.palette.push_back({c[0].get<float>(), c[1].get<float>(), c[2].get<float>()});
    }
    if (j.contains("background"))
        s.background = {j["background"][0].get<float>(), j["background"][1].get<float>(),
                        j["background"][2].get<float>()};
    if (j.contains("allow_occlusion")) s.allow_occlusion = j["allow_occlusion"].get<bool>();
    s.validate();
    return s;
}

struct SceneSample {
    int height = 0;
    int width = 0;
    std::vector<float> image;           // H*W*3, values in [0,1]
    std::vector<int> instance_labels;   // H*W, 0 = background
    std::vector<int> class_labels;      // H*W, 0 = background
    std::vector<float> patch_targets;   // n * d_y
    std::vector<int> patch_instance_labels;  // n
    int d_y = 0;
};

namespace detail {

inline std::vector<uint8_t> rasterize_shape(int cls, int x0, int y0, int w, int h, int W, int H) {
    std::vector<uint8_t> mask(static_cast<size_t>(W) * H, 0);
    if (cls == kRectangle) {
        for (int y = y0; y < y0 + h; ++y)
            for (int x = x0; x < x0 + w; ++x) mask[static_cast<size_t>(y) * W + x] = 1;
    } else if (cls == kEllipse) {
        const double cx = x0 + (w - 1) / 2.0, cy = y0 + (h - 1) / 2.0;
        const double rx = w / 2.0, ry = h / 2.0;
        for (int y = y0; y < y0 + h; ++y)
            for (int x = x0; x < x0 + w; ++x) {
                const double dx = (x - cx) / rx, dy = (y - cy) / ry;
                if (dx * dx + dy * dy <= 1.0) mask[static_cast<size_t>(y) * W + x] = 1;
            }
    } else if (cls == kTriangle) {
        // isoceles: apex top-center, base along the bottom edge
        const double ax = x0 + (w - 1) / 2.0, ay = y0;
        const double bx = x0, by = y0 + h - 1;
        const double cx2 = x0 + w - 1, cy2 = y0 + h - 1;
        auto edge = [](double px, double py, double qx, double qy, double rx2, double ry2) {
            return (qx - px) * (ry2 - py) - (qy - py) * (rx2 - px);
        };
        for (int y = y0; y < y0 + h; ++y)
            for (int x = x0; x < x0 + w; ++x) {
                const double d1 = edge(ax, ay, bx, by, x, y);
                const double d2 = edge(bx, by, cx2, cy2, x, y);
                const double d3 = edge(cx2, cy2, ax, ay, x, y);
                const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
                const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
                if (!(neg && pos)) mask[static_cast<size_t>(y) * W + x] = 1;
            }
    } else {
        throw std::invalid_argument("rasterize_shape: unknown class " + std::to_string(cls));
    }
    return mask;
}

}  // namespace detail

constexpr int kMinVisiblePixels = 12;
constexpr int kMaxPlacementAttempts = 1000;

/// Deterministic scene generation for (spec, seed). Objects are placed with
/// rejection sampling so that every instance keeps at least
/// kMinVisiblePixels visible pixels after occlusion.
inline SceneSample generate_scene(const SceneSpec& spec, uint64_t seed) {
    spec.validate();
    Rng rng(mix_seed(0x5ce9e5a17ull, seed));
    const int W = spec.image_size, H = spec.image_size;

    SceneSample s;
    s.height = H;
    s.width = W;
    s.instance_labels.assign(static_cast<size_t>(W) * H, 0);
    s.class_labels.assign(static_cast<size_t>(W) * H, 0);

    const int count = rng.next_int(spec.objects_min, spec.objects_max);
    std::vector<int> color_of(static_cast<size_t>(count) + 1, 0);
    std::vector<int> class_of(static_cast<size_t>(count) + 1, 0);
    const int min_extent = 5;
    const int max_extent = std::max(min_extent, W / 2);

    for (int obj = 1; obj <= count; ++obj) {
        bool placed = false;
        for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
            const int cls = spec.shape_classes[rng.next_below(spec.shape_classes.size())];
            const int color = static_cast<int>(rng.next_below(spec.palette.size()));
            const int w = rng.next_int(min_extent, max_extent);
            const int h = rng.next_int(min_extent, max_extent);
            const int x0 = rng.next_int(0, W - w);
            const int y0 = rng.next_int(0, H - h);
            const auto mask = detail::rasterize_shape(cls, x0, y0, w, h, W, H);

            int own = 0;
            for (auto m : mask) own += m;
            if (own < kMinVisiblePixels) continue;

            if (!spec.allow_occlusion) {
                bool overlaps = false;
                for (size_t i = 0; i < mask.size() && !overlaps; ++i)
                    if (mask[i] && s.instance_labels[i] != 0) overlaps = true;
                if (overlaps) continue;
            } else {
                // drawing on top: every earlier instance must stay visible
                std::vector<int> remaining(static_cast<size_t>(obj), 0);
                for (size_t i = 0; i < mask.size(); ++i) {
                    const int prev = s.instance_labels[i];
                    if (prev != 0 && !mask[i]) remaining[static_cast<size_t>(prev) - 1]++;
                }
                bool ok = true;
                for (int p = 0; p < obj - 1; ++p)
                    if (remaining[static_cast<size_t>(p)] < kMinVisiblePixels) ok = false;
                if (!ok) continue;
            }

            for (size_t i = 0; i < mask.size(); ++i) {
                if (mask[i]) {
                    s.instance_labels[i] = obj;
                    s.class_labels[i] = cls;
                }
            }
            color_of[static_cast<size_t>(obj)] = color;
            class_of[static_cast<size_t>(obj)] = cls;
            placed = true;
        }
        if (!placed)
            throw std::runtime_error("generate_scene: placement failed after " +
                                     std::to_string(kMaxPlacementAttempts) +
                                     " attempts (spec too crowded)");
    }

    s.image.resize(static_cast<size_t>(W) * H * 3);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const size_t i = static_cast<size_t>(y) * W + x;
            const int inst = s.instance_labels[i];
            const float* rgb =
                inst == 0 ? spec.background.data()
                          : spec.palette[static_cast<size_t>(color_of[static_cast<size_t>(inst)])].data();
            for (int c = 0; c < 3; ++c) s.image[i * 3 + c] = rgb[c];
        }
    return s;
}

/// Fixed, never-trained patch encoder for frozen_features targets:
/// tanh(flat_patch . W) with W drawn once from the given seed.
struct FrozenPatchEncoder {
    int in_dim = 0;
    int out_dim = 0;
    std::vector<float> weights;  // [in_dim, out_dim]

    FrozenPatchEncoder() = default;
    FrozenPatchEncoder(int in, int out, uint64_t seed) : in_dim(in), out_dim(out) {
        weights.resize(static_cast<size_t>(in) * out);
        Rng rng(mix_seed(0xf407e5ull, seed));
        rng.fill_normal(weights, 1.0 / std::sqrt(static_cast<double>(in)));
    }

    void apply(const float* patch, float* out) const {
        for (int j = 0; j < out_dim; ++j) {
            double acc = 0;
            for (int i = 0; i < in_dim; ++i) acc += patch[i] * weights[static_cast<size_t>(i) * out_dim + j];
            out[j] = static_cast<float>(std::tanh(acc));
        }
    }
};

enum class TargetMode { kPixels, kFrozenFeatures };

inline std::string target_mode_name(TargetMode m) {
    return m == TargetMode::kPixels ? "pixels" : "frozen_features";
}

inline TargetMode target_mode_from_name(const std::string& s) {
    if (s == "pixels") return TargetMode::kPixels;
    if (s == "frozen_features") return TargetMode::kFrozenFeatures;
    throw std::invalid_argument("unknown target mode: " + s);
}

/// Flattens each patch_size x patch_size block (row-major within the patch,
/// RGB interleaved) into one target row. Exact inverse exists in pixels mode.
inline void patchify_targets(SceneSample& s, const SceneSpec& spec, TargetMode mode,
                             const FrozenPatchEncoder* frozen = nullptr) {
    const int ps = spec.patch_size;
    const int g = spec.grid();
    const int n = g * g;
    const int flat = 3 * ps * ps;
    std::vector<float> patch(static_cast<size_t>(flat));
    if (mode == TargetMode::kFrozenFeatures && (!frozen || frozen->in_dim != flat))
        throw std::invalid_argument("patchify_targets: frozen encoder missing or mismatched");
    s.d_y = mode == TargetMode::kPixels ? flat : frozen->out_dim;
    s.patch_targets.assign(static_cast<size_t>(n) * s.d_y, 0.0f);
    for (int pr = 0; pr < g; ++pr)
        for (int pc = 0; pc < g; ++pc) {
            const int p = pr * g + pc;
            for (int dy = 0; dy < ps; ++dy)
                for (int dx = 0; dx < ps; ++dx)
                    for (int c = 0; c < 3; ++c)
                        patch[static_cast<size_t>((dy * ps + dx) * 3 + c)] =
                            s.image[(static_cast<size_t>(pr * ps + dy) * s.width + pc * ps + dx) * 3 + c];
            float* row = s.patch_targets.data() + static_cast<size_t>(p) * s.d_y;
            if (mode == TargetMode::kPixels)
                std::copy(patch.begin(), patch.end(), row);
            else
                frozen->apply(patch.data(), row);
        }
}

/// Reassembles an image from pixels-mode targets (the inverse of patchify).
inline std::vector<float> unpatchify(const std::vector<float>& y, const SceneSpec& spec) {
    const int ps = spec.patch_size;
    const int g = spec.grid();
    const int W = spec.image_size;
    std::vector<float> img(static_cast<size_t>(W) * W * 3);
    for (int pr = 0; pr < g; ++pr)
        for (int pc = 0; pc < g; ++pc) {
            const float* row = y.data() + static_cast<size_t>(pr * g + pc) * 3 * ps * ps;
            for (int dy = 0; dy < ps; ++dy)
                for (int dx = 0; dx < ps; ++dx)
                    for (int c = 0; c < 3; ++c)
                        img[(static_cast<size_t>(pr * ps + dy) * W + pc * ps + dx) * 3 + c] =
                            row[(dy * ps + dx) * 3 + c];
        }
    return img;
}

/// Per-patch majority vote; ties resolve to the smallest label id.
inline std::vector<int> majority_vote_labels(const std::vector<int>& labels, int height, int width,
                                             int patch_size) {
    if (height % patch_size != 0 || width % patch_size != 0)
        throw std::invalid_argument("majority_vote_labels: image not divisible by patch size");
    const int gh = height / patch_size, gw = width / patch_size;
    std::vector<int> out(static_cast<size_t>(gh) * gw, 0);
    for (int pr = 0; pr < gh; ++pr)
        for (int pc = 0; pc < gw; ++pc) {
            std::vector<std::pair<int, int>> counts;  // (label, count)
            for (int dy = 0; dy < patch_size; ++dy)
                for (int dx = 0; dx < patch_size; ++dx) {
                    const int lab = labels[static_cast<size_t>(pr * patch_size + dy) * width +
                                           pc * patch_size + dx];
                    bool found = false;
                    for (auto& kv : counts)
                        if (kv.first == lab) {
                            kv.second++;
                            found = true;
                        }
                    if (!found) counts.push_back({lab, 1});
                }
            int best_label = 0, best_count = -1;
            for (const auto& kv : counts)
                if (kv.second > best_count || (kv.second == best_count && kv.first < best_label)) {
                    best_label = kv.first;
                    best_count = kv.second;
                }
            out[static_cast<size_t>(pr) * gw + pc] = best_label;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset persistence
// ---------------------------------------------------------------------------

struct DatasetManifest {
    uint64_t seed = 0;
    SceneSpec spec;
    int count = 0;
    TargetMode target_mode = TargetMode::kPixels;
    uint64_t frozen_seed = 0;
    int frozen_width = 32;
    std::vector<std::vector<std::string>> files;
};

inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string spec_hash(const SceneSpec& spec) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(scene_spec_to_json(spec).dump())));
    return buf;
}

inline SceneSample make_sample(const SceneSpec& spec, uint64_t dataset_seed, int index,
                               TargetMode mode, const FrozenPatchEncoder* frozen = nullptr) {
    SceneSample s = generate_scene(spec, mix_seed(dataset_seed, static_cast<uint64_t>(index)));
    patchify_targets(s, spec, mode, frozen);
    s.patch_instance_labels =
        majority_vote_labels(s.instance_labels, s.height, s.width, spec.patch_size);
    return s;
}

inline void write_dataset(const std::vector<SceneSample>& samples, const DatasetManifest& m,
                          const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json j;
    j["format"] = 1;
    j["seed"] = m.seed;
    j["count"] = static_cast<int>(samples.size());
    j["target_mode"] = target_mode_name(m.target_mode);
    j["frozen_seed"] = m.frozen_seed;
    j["frozen_width"] = m.frozen_width;
    j["spec"] = scene_spec_to_json(m.spec);
    j["spec_hash"] = spec_hash(m.spec);
    nlohmann::json files = nlohmann::json::array();

    auto as_f32 = [](const std::vector<int>& v) {
        std::vector<float> f(v.size());
        for (size_t i = 0; i < v.size(); ++i) f[i] = static_cast<float>(v[i]);
        return f;
    };

    for (size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        char stem[32];
        std::snprintf(stem, sizeof stem, "s%05zu", i);
        const std::string base(stem);
        const int n = static_cast<int>(s.patch_instance_labels.size());
        std::vector<std::string> names = {base + "_image.f32", base + "_ilab.f32",
                                          base + "_clab.f32", base + "_y.f32",
                                          base + "_plab.f32"};
        write_tensor_file(dir / names[0], {s.height, s.width, 3}, s.image);
        write_tensor_file(dir / names[1], {s.height, s.width}, as_f32(s.instance_labels));
        write_tensor_file(dir / names[2], {s.height, s.width}, as_f32(s.class_labels));
        write_tensor_file(dir / names[3], {n, s.d_y}, s.patch_targets);
        write_tensor_file(dir / names[4], {n}, as_f32(s.patch_instance_labels));
        files.push_back(names);
    }
    j["files"] = files;
    std::ofstream out(dir / "manifest.json");
    if (!out) throw std::runtime_error("write_dataset: cannot write manifest in " + dir.string());
    out << j.dump(2) << "\n";
}

struct Dataset {
    DatasetManifest manifest;
    std::vector<SceneSample> samples;

    int n_patches() const {
        return samples.empty() ? 0 : static_cast<int>(samples[0].patch_instance_labels.size());
    }
    int d_y() const { return samples.empty() ? 0 : samples[0].d_y; }
};

inline Dataset read_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    const fs::path mpath = dir / "manifest.json";
    std::ifstream in(mpath);
    if (!in) throw std::runtime_error("read_dataset: missing manifest " + mpath.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("read_dataset: corrupt manifest " + mpath.string() + ": " +
                                 e.what());
    }
    Dataset ds;
    ds.manifest.seed = j["seed"].get<uint64_t>();
    ds.manifest.count = j["count"].get<int>();
    ds.manifest.target_mode = target_mode_from_name(j["target_mode"].get<std::string>());
    ds.manifest.frozen_seed = j.value("frozen_seed", 0ull);
    ds.manifest.frozen_width = j.value("frozen_width", 32);
    ds.manifest.spec = scene_spec_from_json(j["spec"]);
    if (j["spec_hash"].get<std::string>() != spec_hash(ds.manifest.spec))
        throw std::runtime_error("read_dataset: spec hash mismatch in " + mpath.string());
    const auto& files = j["files"];
    if (static_cast<int>(files.size()) != ds.manifest.count)
        throw std::runtime_error("read_dataset: manifest count " +
                                 std::to_string(ds.manifest.count) + " does not match " +
                                 std::to_string(files.size()) + " file entries in " +
                                 mpath.string());
    auto as_int = [](const std::vector<float>& v) {
        std::vector<int> r(v.size());
        for (size_t i = 0; i < v.size(); ++i) r[i] = static_cast<int>(v[i]);
        return r;
    };
    for (const auto& entry : files) {
        if (entry.size() != 5)
            throw std::runtime_error("read_dataset: malformed file entry in " + mpath.string());
        ds.manifest.files.push_back(entry.get<std::vector<std::string>>());
        SceneSample s;
        const auto img = read_tensor_file(dir / entry[0].get<std::string>());
        if (img.shape.size() != 3 || img.shape[2] != 3)
            throw std::runtime_error("read_dataset: bad image shape in " +
                                     entry[0].get<std::string>());
        s.height = img.shape[0];
        s.width = img.shape[1];
        s.image = img.data;
        s.instance_labels = as_int(read_tensor_file(dir / entry[1].get<std::string>()).data);
        s.class_labels = as_int(read_tensor_file(dir / entry[2].get<std::string>()).data);
        const auto y = read_tensor_file(dir / entry[3].get<std::string>());
        if (y.shape.size() != 2)
            throw std::runtime_error("read_dataset: bad target shape in " +
                                     entry[3].get<std::string>());
        s.d_y = y.shape[1];
        s.patch_targets = y.data;
        s.patch_instance_labels =
            as_int(read_tensor_file(dir / entry[4].get<std::string>()).data);
        if (static_cast<int>(s.patch_instance_labels.size()) != y.shape[0])
            throw std::runtime_error("read_dataset: patch label count mismatch in " +
                                     entry[4].get<std::string>());
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace spot
