#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "spot/scene.hpp"

using namespace spot;
namespace fs = std::filesystem;

TEST_CASE("single-object spec yields exactly one instance id") {
    SceneSpec spec;
    spec.objects_min = 1;
    spec.objects_max = 1;
    auto s = generate_scene(spec, 7);
    std::set<int> ids;
    for (int v : s.instance_labels)
        if (v != 0) ids.insert(v);
    REQUIRE(ids == std::set<int>{1});
}

TEST_CASE("generation is deterministic per (spec, seed)") {
    SceneSpec spec;
    auto a = generate_scene(spec, 123);
    auto b = generate_scene(spec, 123);
    REQUIRE(a.image == b.image);
    REQUIRE(a.instance_labels == b.instance_labels);
    REQUIRE(a.class_labels == b.class_labels);
    auto c = generate_scene(spec, 124);
    REQUIRE(a.instance_labels != c.instance_labels);
}

TEST_CASE("label census over many scenes stays within configured counts") {
    SceneSpec spec;  // defaults: 2..4 objects
    for (int seed = 0; seed < 1000; ++seed) {
        auto s = generate_scene(spec, static_cast<uint64_t>(seed));
        std::set<int> ids;
        for (int v : s.instance_labels)
            if (v != 0) ids.insert(v);
        REQUIRE(ids.size() >= 2);
        REQUIRE(ids.size() <= 4);
        // every placed instance keeps at least the minimum visible pixels
        for (int id : ids) {
            int count = 0;
            for (int v : s.instance_labels) count += v == id;
            REQUIRE(count >= kMinVisiblePixels);
        }
        // instance and class maps agree on background
        for (size_t i = 0; i < s.instance_labels.size(); ++i)
            REQUIRE((s.instance_labels[i] == 0) == (s.class_labels[i] == 0));
    }
}

TEST_CASE("pixels-mode patchify is lossless and background rows are constant") {
    SceneSpec spec;
    auto s = generate_scene(spec, 55);
    patchify_targets(s, spec, TargetMode::kPixels);
    REQUIRE(s.d_y == 3 * spec.patch_size * spec.patch_size);
    auto img = unpatchify(s.patch_targets, spec);
    REQUIRE(img == s.image);

    // an all-background image gives identical rows equal to the background
    SceneSample bg;
    bg.height = bg.width = spec.image_size;
    bg.image.assign(static_cast<size_t>(spec.image_size) * spec.image_size * 3, 0.0f);
    for (size_t i = 0; i < bg.image.size(); i += 3) {
        bg.image[i] = spec.background[0];
        bg.image[i + 1] = spec.background[1];
        bg.image[i + 2] = spec.background[2];
    }
    bg.instance_labels.assign(static_cast<size_t>(spec.image_size) * spec.image_size, 0);
    patchify_targets(bg, spec, TargetMode::kPixels);
    for (int p = 0; p < spec.n_patches(); ++p)
        for (int j = 0; j < bg.d_y; ++j)
            REQUIRE(bg.patch_targets[static_cast<size_t>(p) * bg.d_y + j] ==
                    bg.patch_targets[static_cast<size_t>(j)]);
}

TEST_CASE("frozen-feature targets differ across encoder seeds") {
    SceneSpec spec;
    auto s1 = generate_scene(spec, 9);
    auto s2 = s1;
    const int flat = 3 * spec.patch_size * spec.patch_size;
    FrozenPatchEncoder enc_a(flat, 32, 1);
    FrozenPatchEncoder enc_b(flat, 32, 2);
    patchify_targets(s1, spec, TargetMode::kFrozenFeatures, &enc_a);
    patchify_targets(s2, spec, TargetMode::kFrozenFeatures, &enc_b);
    REQUIRE(s1.patch_targets != s2.patch_targets);
    REQUIRE(s1.d_y == 32);
}

TEST_CASE("majority vote labels") {
    // uniform patch
    std::vector<int> labels(16, 3);
    auto out = majority_vote_labels(labels, 4, 4, 4);
    REQUIRE(out == std::vector<int>{3});

    // 9 of 16 pixels label 2, rest 0 -> 2
    std::vector<int> mixed(16, 0);
    for (int i = 0; i < 9; ++i) mixed[static_cast<size_t>(i)] = 2;
    REQUIRE(majority_vote_labels(mixed, 4, 4, 4) == std::vector<int>{2});

    // 8/8 tie between labels 1 and 3 -> smaller label wins
    std::vector<int> tie(16);
    for (int i = 0; i < 8; ++i) tie[static_cast<size_t>(i)] = 3;
    for (int i = 8; i < 16; ++i) tie[static_cast<size_t>(i)] = 1;
    REQUIRE(majority_vote_labels(tie, 4, 4, 4) == std::vector<int>{1});

    // labels cover all patches and stay within the observed id set
    SceneSpec spec;
    auto s = generate_scene(spec, 31);
    auto patch_labels = majority_vote_labels(s.instance_labels, s.height, s.width, spec.patch_size);
    REQUIRE(static_cast<int>(patch_labels.size()) == spec.n_patches());
    int max_id = 0;
    for (int v : s.instance_labels) max_id = std::max(max_id, v);
    for (int v : patch_labels) {
        REQUIRE(v >= 0);
        REQUIRE(v <= max_id);
    }
}

TEST_CASE("dataset round-trip and integrity errors") {
    const fs::path dir = fs::temp_directory_path() / "spot_test_dataset";
    fs::remove_all(dir);
    SceneSpec spec;
    DatasetManifest m;
    m.seed = 77;
    m.spec = spec;
    std::vector<SceneSample> samples;
    for (int i = 0; i < 10; ++i) samples.push_back(make_sample(spec, 77, i, TargetMode::kPixels));
    write_dataset(samples, m, dir);

    auto ds = read_dataset(dir);
    REQUIRE(ds.samples.size() == 10);
    for (int i = 0; i < 10; ++i) {
        REQUIRE(ds.samples[static_cast<size_t>(i)].image == samples[static_cast<size_t>(i)].image);
        REQUIRE(ds.samples[static_cast<size_t>(i)].patch_targets ==
                samples[static_cast<size_t>(i)].patch_targets);
        REQUIRE(ds.samples[static_cast<size_t>(i)].instance_labels ==
                samples[static_cast<size_t>(i)].instance_labels);
    }

    SECTION("wrong sample count in manifest") {
        nlohmann::json j;
        {
            std::ifstream in(dir / "manifest.json");
            in >> j;
        }
        j["count"] = 11;
        std::ofstream out(dir / "manifest.json");
        out << j.dump(2);
        out.close();
        REQUIRE_THROWS_WITH(read_dataset(dir), Catch::Matchers::ContainsSubstring("count"));
    }

    SECTION("truncated tensor file names the file") {
        const fs::path victim = dir / "s00003_y.f32";
        const auto size = fs::file_size(victim);
        fs::resize_file(victim, size - 8);
        REQUIRE_THROWS_WITH(read_dataset(dir), Catch::Matchers::ContainsSubstring("s00003_y.f32"));
    }

    fs::remove_all(dir);
}

TEST_CASE("dataset regeneration is byte-identical") {
    SceneSpec spec;
    auto a = make_sample(spec, 5, 3, TargetMode::kPixels);
    auto b = make_sample(spec, 5, 3, TargetMode::kPixels);
    REQUIRE(a.image == b.image);
    REQUIRE(a.patch_targets == b.patch_targets);
    REQUIRE(a.patch_instance_labels == b.patch_instance_labels);
}

TEST_CASE("crowded spec fails with a generation error") {
    SceneSpec spec;
    spec.image_size = 8;
    spec.patch_size = 4;
    spec.objects_min = 6;
    spec.objects_max = 6;
    spec.allow_occlusion = false;
    REQUIRE_THROWS_WITH(generate_scene(spec, 1),
                        Catch::Matchers::ContainsSubstring("attempts"));
}
