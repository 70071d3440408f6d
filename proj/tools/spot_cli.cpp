// Command-line surface: dataset generation, two-stage training, metric
// evaluation, the gradient-flow diagnostic, mask rendering, and the
// self-test table. Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "spot/diagnostics.hpp"
#include "spot/eval.hpp"
#include "spot/selfcheck.hpp"
#include "spot/train.hpp"

namespace fs = std::filesystem;
using namespace spot;

namespace {

SceneSpec load_scene_spec(const std::string& path) {
    if (path.empty()) return SceneSpec{};
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scene spec " + path);
    nlohmann::json j;
    in >> j;
    return scene_spec_from_json(j);
}

int cmd_gen_data(const std::string& spec_path, const std::string& out, int count, uint64_t seed,
                 const std::string& mode_name, int frozen_width, uint64_t frozen_seed) {
    SceneSpec spec = load_scene_spec(spec_path);
    const TargetMode mode = target_mode_from_name(mode_name);
    FrozenPatchEncoder frozen;
    const FrozenPatchEncoder* frozen_ptr = nullptr;
    if (mode == TargetMode::kFrozenFeatures) {
        frozen = FrozenPatchEncoder(3 * spec.patch_size * spec.patch_size, frozen_width, frozen_seed);
        frozen_ptr = &frozen;
    }
    DatasetManifest manifest;
    manifest.seed = seed;
    manifest.spec = spec;
    manifest.target_mode = mode;
    manifest.frozen_seed = frozen_seed;
    manifest.frozen_width = frozen_width;
    std::vector<SceneSample> samples;
    samples.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        samples.push_back(make_sample(spec, seed, i, mode, frozen_ptr));
        if ((i + 1) % 500 == 0) std::fprintf(stderr, "generated %d/%d scenes\n", i + 1, count);
    }
    write_dataset(samples, manifest, out);
    std::fprintf(stderr, "wrote %d samples to %s\n", count, out.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out, bool resume, bool quiet) {
    Trainer trainer(parse_train_config(config_path));
    if (resume) trainer.resume_from(out);
    const TrainResult result = trainer.run(out, -1, !quiet);
    if (!result.epochs.empty())
        std::fprintf(stderr, "final epoch: rec %.6f att %.6f total %.6f\n",
                     result.epochs.back().mean_rec, result.epochs.back().mean_att,
                     result.epochs.back().mean_total);
    std::fprintf(stderr, "checkpoint saved to %s\n", out.c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& source_name,
             const std::string& json_path, uint64_t eval_seed) {
    SpotModel<float> model;
    load_checkpoint(ckpt, model);
    const Dataset ds = read_dataset(data);
    const MaskSource source = mask_source_from_name(source_name);
    const MetricReport report = evaluate_model(model, ds, source, eval_seed);
    const std::string line = metric_report_to_json(report).dump();
    std::cout << line << "\n";
    if (!json_path.empty()) {
        std::ofstream out(json_path);
        if (!out) throw std::runtime_error("cannot write report to " + json_path);
        out << line << "\n";
    }
    return 0;
}

int cmd_grad_map(const std::string& ckpt, const std::string& data, const std::string& mode_name,
                 const std::string& out_path, int limit, uint64_t seed) {
    SpotModel<float> model;
    load_checkpoint(ckpt, model);
    const Dataset ds = read_dataset(data);
    const GradNormMap map = grad_norm_map(model, ds, grad_map_mode_from_name(mode_name), limit, seed);
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write grad map to " + out_path);
    out << grad_norm_map_to_json(map).dump(2) << "\n";
    const EdgeVsRest edge = first_row_col_vs_rest(map);
    std::fprintf(stderr,
                 "grad map (%s, %d samples): mean %.3e, cov %.4f, first row+col %.3e vs rest %.3e\n",
                 map.mode.c_str(), map.count, map.mean(), map.coefficient_of_variation(),
                 edge.edge_mean, edge.rest_mean);
    return 0;
}

int cmd_render(const std::string& ckpt, const std::string& data, int index,
               const std::string& source_name, const std::string& out_path) {
    SpotModel<float> model;
    load_checkpoint(ckpt, model);
    const Dataset ds = read_dataset(data);
    if (index < 0 || index >= static_cast<int>(ds.samples.size()))
        throw std::runtime_error("sample index " + std::to_string(index) + " out of range (have " +
                                 std::to_string(ds.samples.size()) + ")");
    const MaskSource source = mask_source_from_name(source_name);
    if (source != MaskSource::kDecoder && source != MaskSource::kSlotAttention)
        throw std::runtime_error("render supports sources: decoder, slot");
    const auto& sample = ds.samples[static_cast<size_t>(index)];
    const auto x = pixel_patches(sample, ds.manifest.spec.patch_size);
    Rng noise(mix_seed(0xe7a1, static_cast<uint64_t>(index)));
    const auto attn = eval_sample_masks(model, sample, x, source, noise);
    const LabelMap pred =
        masks_from_attention(attn.data(), model.cfg.n(), model.cfg.slots.k, model.cfg.grid_h,
                             model.cfg.grid_w, sample.height, sample.width);
    render_masks(sample, pred, out_path);
    std::fprintf(stderr, "wrote %s\n", out_path.c_str());
    return 0;
}

int cmd_selftest() {
    const auto results = spot::selfcheck::run_fast_checks();
    size_t failed = 0;
    std::printf("%-62s  %s\n", "check", "result");
    std::printf("%s\n", std::string(78, '-').c_str());
    for (const auto& r : results) {
        std::printf("%-62s  %s\n", r.name.c_str(), r.pass ? "PASS" : "FAIL");
        std::printf("    %s\n", r.detail.c_str());
        if (!r.pass) ++failed;
    }
    std::printf("%s\n", std::string(78, '-').c_str());
    std::printf("%zu/%zu checks passed\n", results.size() - failed, results.size());
    return failed == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Object-centric learning on synthetic sprite scenes: slot attention, "
                 "permuted autoregressive decoding, and attention-mask self-distillation"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic sprite dataset");
    std::string gen_spec, gen_out, gen_mode = "pixels";
    int gen_count = 2000, gen_frozen_width = 32;
    uint64_t gen_seed = 0, gen_frozen_seed = 0;
    gen->add_option("--spec", gen_spec, "Scene spec JSON file (defaults when omitted)");
    gen->add_option("--out", gen_out, "Output dataset directory")->required();
    gen->add_option("--count", gen_count, "Number of scenes");
    gen->add_option("--seed", gen_seed, "Dataset seed");
    gen->add_option("--mode", gen_mode, "Target mode: pixels|frozen_features");
    gen->add_option("--frozen-width", gen_frozen_width, "Frozen-feature width");
    gen->add_option("--frozen-seed", gen_frozen_seed, "Frozen-encoder seed");

    // train
    auto* train = app.add_subcommand("train", "Train stage 1 or stage 2 per the config file");
    std::string train_config, train_out;
    bool train_resume = false, train_quiet = false;
    train->add_option("--config", train_config, "Training config file")->required();
    train->add_option("--out", train_out, "Checkpoint directory")->required();
    train->add_flag("--resume", train_resume, "Resume from the checkpoint in --out");
    train->add_flag("--quiet", train_quiet, "Suppress per-epoch logging");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    std::string eval_ckpt, eval_data, eval_source = "decoder", eval_json;
    uint64_t eval_seed = 0xe7a1;
    eval->add_option("--ckpt", eval_ckpt, "Checkpoint directory")->required();
    eval->add_option("--data", eval_data, "Dataset directory")->required();
    eval->add_option("--source", eval_source, "Mask source: decoder|slot|max|ens");
    eval->add_option("--json", eval_json, "Also write the report to this file");
    eval->add_option("--seed", eval_seed, "Evaluation noise seed");

    // grad-map
    auto* gm = app.add_subcommand("grad-map", "Per-position slot-gradient-norm diagnostic");
    std::string gm_ckpt, gm_data, gm_mode = "default", gm_out;
    int gm_limit = 128;
    uint64_t gm_seed = 0x96ad;
    gm->add_option("--ckpt", gm_ckpt, "Checkpoint directory")->required();
    gm->add_option("--data", gm_data, "Dataset directory")->required();
    gm->add_option("--mode", gm_mode, "Permutation mode: default|random");
    gm->add_option("--out", gm_out, "Output JSON file")->required();
    gm->add_option("--limit", gm_limit, "Max samples to aggregate");
    gm->add_option("--seed", gm_seed, "Diagnostic seed");

    // render
    auto* render = app.add_subcommand("render", "Render predicted masks over a sample");
    std::string r_ckpt, r_data, r_source = "decoder", r_out;
    int r_index = 0;
    render->add_option("--ckpt", r_ckpt, "Checkpoint directory")->required();
    render->add_option("--data", r_data, "Dataset directory")->required();
    render->add_option("--index", r_index, "Sample index");
    render->add_option("--source", r_source, "Mask source: decoder|slot");
    render->add_option("--out", r_out, "Output PNG file")->required();

    // selftest
    auto* st = app.add_subcommand("selftest", "Run the oracle/gradient/invariant suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gen->parsed())
            return cmd_gen_data(gen_spec, gen_out, gen_count, gen_seed, gen_mode, gen_frozen_width,
                                gen_frozen_seed);
        if (train->parsed()) return cmd_train(train_config, train_out, train_resume, train_quiet);
        if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_source, eval_json, eval_seed);
        if (gm->parsed()) return cmd_grad_map(gm_ckpt, gm_data, gm_mode, gm_out, gm_limit, gm_seed);
        if (render->parsed()) return cmd_render(r_ckpt, r_data, r_index, r_source, r_out);
        if (st->parsed()) return cmd_selftest();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
