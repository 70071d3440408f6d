#pragma once

// Two-stage training. Stage 1 trains from scratch with Gaussian slot
// initialization on the reconstruction loss alone, encoder frozen. Stage 2
// loads a frozen teacher, initializes a fresh student with learnable query
// slots, and adds the attention-distillation loss; the student's encoder
// fine-tunes its trailing blocks. One decoding permutation is drawn per
// training step (teacher and student draws are independent streams).

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spot/distill.hpp"
#include "spot/model.hpp"
#include "spot/scene.hpp"
#include "spot/train_config.hpp"

namespace spot {

struct EpochStats {
    double mean_rec = 0.0;
    double mean_att = 0.0;
    double mean_total = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> epochs;
    int64_t steps = 0;
};

/// Flattened pixel patches of a sample image (the encoder input).
inline std::vector<float> pixel_patches(const SceneSample& s, int patch_size) {
    const int g = s.width / patch_size;
    const int flat = 3 * patch_size * patch_size;
    std::vector<float> x(static_cast<size_t>(g) * g * flat);
    for (int pr = 0; pr < g; ++pr)
        for (int pc = 0; pc < g; ++pc)
            for (int dy = 0; dy < patch_size; ++dy)
                for (int dx = 0; dx < patch_size; ++dx)
                    for (int c = 0; c < 3; ++c)
                        x[static_cast<size_t>(pr * g + pc) * flat + (dy * patch_size + dx) * 3 + c] =
                            s.image[(static_cast<size_t>(pr * patch_size + dy) * s.width +
                                     pc * patch_size + dx) * 3 + c];
    return x;
}

class Trainer {
public:
    explicit Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
        resolve_train_defaults(cfg_);
        dataset_ = read_dataset(cfg_.data);
        if (dataset_.samples.empty()) throw std::runtime_error("train: empty dataset");
        const auto& spec = dataset_.manifest.spec;
        if (spec.objects_max > cfg_.k - 1)
            throw std::invalid_argument(
                "train: spec allows up to " + std::to_string(spec.objects_max) +
                " objects but k = " + std::to_string(cfg_.k) +
                " leaves only k-1 foreground slots");

        model_cfg_ = assemble_model_config();
        model_.init(model_cfg_, mix_seed(cfg_.seed, 0x40de1ull));
        if (cfg_.stage == 2) {
            teacher_.emplace();
            load_checkpoint(cfg_.teacher, *teacher_);
            if (teacher_->cfg.slots.k != cfg_.k)
                throw std::invalid_argument("train: teacher has k = " +
                                            std::to_string(teacher_->cfg.slots.k) +
                                            " but config asks for k = " + std::to_string(cfg_.k));
            if (teacher_->cfg.n() != model_cfg_.n() || teacher_->cfg.d_y != model_cfg_.d_y)
                throw std::invalid_argument("train: teacher geometry does not match dataset");
        }

        opt_.emplace(model_.adam_params());
        shuffle_rng_.reseed(mix_seed(cfg_.seed, 1));
        perm_rng_.reseed(mix_seed(cfg_.seed, 2));
        noise_rng_.reseed(mix_seed(cfg_.seed, 3));
        teacher_perm_rng_.reseed(mix_seed(cfg_.seed, 4));
        teacher_noise_rng_.reseed(mix_seed(cfg_.seed, 5));

        inputs_.reserve(dataset_.samples.size());
        for (const auto& s : dataset_.samples) inputs_.push_back(pixel_patches(s, spec.patch_size));

        steps_per_epoch_ = static_cast<int>(dataset_.samples.size()) / cfg_.batch_size;
        if (steps_per_epoch_ < 1)
            throw std::invalid_argument("train: batch size exceeds the dataset");
        schedule_.peak = cfg_.peak_lr;
        schedule_.low = cfg_.low_lr;
        schedule_.warmup_steps = cfg_.warmup_steps;
        schedule_.total_steps = cfg_.epochs * steps_per_epoch_;
    }

    /// Continue a previously saved run in `dir` (must hold a checkpoint
    /// written by this trainer with the same config).
    void resume_from(const std::filesystem::path& dir) {
        CheckpointMeta meta = load_checkpoint(dir, model_, &*opt_);
        if (meta.rng.streams.size() != 5)
            throw std::runtime_error("resume: checkpoint does not carry the training streams");
        shuffle_rng_.set_state(meta.rng.streams[0]);
        perm_rng_.set_state(meta.rng.streams[1]);
        noise_rng_.set_state(meta.rng.streams[2]);
        teacher_perm_rng_.set_state(meta.rng.streams[3]);
        teacher_noise_rng_.set_state(meta.rng.streams[4]);
        global_step_ = meta.step;
        start_epoch_ = meta.epoch;
    }

    /// Trains until cfg.epochs (or stop_after_epochs, when smaller), saves a
    /// checkpoint into out_dir, and returns per-epoch mean losses.
    TrainResult run(const std::filesystem::path& out_dir, int stop_after_epochs = -1,
                    bool verbose = false) {
        const int stop = stop_after_epochs < 0
                             ? cfg_.epochs
                             : std::min(cfg_.epochs, stop_after_epochs);
        TrainResult result;
        std::vector<int> order(dataset_.samples.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

        const double lambda = cfg_.stage == 2 ? cfg_.lambda : 0.0;
        for (int epoch = start_epoch_; epoch < stop; ++epoch) {
            // shuffle from identity so the order is a pure function of the
            // stream state (resume-safe)
            for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
            shuffle_rng_.shuffle(order);
            double epoch_rec = 0.0, epoch_att = 0.0, epoch_total = 0.0;
            for (int step = 0; step < steps_per_epoch_; ++step) {
                const PermutationSpec& student_perm =
                    cfg_.permutations == PermMode::kRandom
                        ? model_.perms[perm_rng_.next_below(model_.perms.size())]
                        : model_.perms[0];
                const PermutationSpec* teacher_perm = nullptr;
                if (cfg_.stage == 2)
                    teacher_perm = cfg_.permutations == PermMode::kRandom
                                       ? &teacher_->perms[teacher_perm_rng_.next_below(
                                             teacher_->perms.size())]
                                       : &teacher_->perms[0];

                double batch_rec = 0.0, batch_att = 0.0, batch_total = 0.0;
                for (int b = 0; b < cfg_.batch_size; ++b) {
                    const int idx = order[static_cast<size_t>(step * cfg_.batch_size + b)];
                    const auto& sample = dataset_.samples[static_cast<size_t>(idx)];
                    Tape<float> tape;
                    auto x = tape.constant({model_cfg_.n(), model_cfg_.d_patch},
                                           inputs_[static_cast<size_t>(idx)]);
                    auto y = tape.constant({model_cfg_.n(), model_cfg_.d_y}, sample.patch_targets);
                    Var<float> init = model_.slot_attn.init_slots(tape, noise_rng_);
                    SlotOutput<float> enc = model_.encode(tape, x, init);
                    DecoderOutput<float> dec = model_.decode(tape, y, enc.slots, student_perm);
                    Var<float> l_rec = reconstruction_loss(y, dec.y_hat);

                    Var<float> loss = l_rec;
                    double att_value = 0.0;
                    if (cfg_.stage == 2) {
                        const auto teacher_hard = teacher_masks(sample, idx, *teacher_perm);
                        const auto iou = iou_cost(teacher_hard, enc.a_slot.data(),
                                                  model_cfg_.n(), cfg_.k);
                        const auto match = hungarian_match(iou, cfg_.k);
                        const auto matched = apply_column_permutation(teacher_hard, model_cfg_.n(),
                                                                      cfg_.k, match.perm);
                        Var<float> l_att = attn_distill_loss(tape, matched, enc.a_slot);
                        att_value = static_cast<double>(l_att.item());
                        loss = add(l_rec, scale(l_att, static_cast<float>(lambda)));
                    }
                    Var<float> contribution =
                        scale(loss, static_cast<float>(1.0 / cfg_.batch_size));
                    const double rec_value = static_cast<double>(l_rec.item());
                    const double total_value = total_loss(rec_value, att_value, lambda).total;
                    if (!std::isfinite(total_value))
                        throw std::runtime_error("train: non-finite loss at step " +
                                                 std::to_string(global_step_));
                    tape.backward(contribution);
                    batch_rec += rec_value;
                    batch_att += att_value;
                    batch_total += total_value;
                }
                opt_->step(lr_at(static_cast<int>(global_step_), schedule_));
                model_.zero_grads();
                ++global_step_;
                epoch_rec += batch_rec / cfg_.batch_size;
                epoch_att += batch_att / cfg_.batch_size;
                epoch_total += batch_total / cfg_.batch_size;
            }
            EpochStats stats{epoch_rec / steps_per_epoch_, epoch_att / steps_per_epoch_,
                             epoch_total / steps_per_epoch_};
            result.epochs.push_back(stats);
            if (verbose)
                std::fprintf(stderr, "epoch %3d  rec %.6f  att %.6f  total %.6f\n", epoch + 1,
                             stats.mean_rec, stats.mean_att, stats.mean_total);
            save(out_dir, epoch + 1);
        }
        result.steps = global_step_;
        return result;
    }

    SpotModel<float>& model() { return model_; }
    SpotModel<float>* teacher() { return teacher_ ? &*teacher_ : nullptr; }
    const TrainConfig& config() const { return cfg_; }
    const Dataset& dataset() const { return dataset_; }
    int steps_per_epoch() const { return steps_per_epoch_; }

private:
    ModelConfig assemble_model_config() const {
        const auto& spec = dataset_.manifest.spec;
        ModelConfig mc;
        mc.grid_h = spec.grid();
        mc.grid_w = spec.grid();
        mc.d_y = dataset_.d_y();
        mc.d_patch = 3 * spec.patch_size * spec.patch_size;
        mc.enc.d_enc = cfg_.d_enc;
        mc.enc.depth = cfg_.depth;
        mc.enc.heads = cfg_.heads;
        mc.enc.trainable_blocks = cfg_.trainable_blocks;
        mc.slots.k = cfg_.k;
        mc.slots.d_u = cfg_.d_u;
        mc.slots.iterations = cfg_.slot_iters;
        mc.slots.mlp_hidden = cfg_.slot_mlp_hidden;
        mc.slots.d_p = cfg_.d_p;
        mc.slots.init_mode = cfg_.stage == 1 ? SlotInit::kGaussian : SlotInit::kLearnable;
        mc.dec.d_dec = cfg_.d_dec;
        mc.dec.heads = cfg_.dec_heads;
        mc.dec.blocks = cfg_.dec_blocks;
        mc.dec.ff_hidden = cfg_.dec_ff;
        mc.dec.mlp_hidden = cfg_.mlp_hidden;
        mc.decoder = cfg_.decoder;
        return mc;
    }

    /// Teacher forward (no gradients) producing hardened decoder masks.
    std::vector<uint8_t> teacher_masks(const SceneSample& sample, int idx,
                                       const PermutationSpec& perm) {
        Tape<float> t(false);
        auto x = t.constant({model_cfg_.n(), model_cfg_.d_patch}, inputs_[static_cast<size_t>(idx)]);
        auto y = t.constant({model_cfg_.n(), model_cfg_.d_y}, sample.patch_targets);
        Var<float> init = teacher_->slot_attn.init_slots(t, teacher_noise_rng_);
        SlotOutput<float> enc = teacher_->encode(t, x, init);
        DecoderOutput<float> dec = teacher_->decode(t, y, enc.slots, perm);
        return harden_masks(dec.a_dec);
    }

    void save(const std::filesystem::path& dir, int epoch) {
        RngStates rng;
        rng.streams = {shuffle_rng_.state(), perm_rng_.state(), noise_rng_.state(),
                       teacher_perm_rng_.state(), teacher_noise_rng_.state()};
        nlohmann::ordered_json extra;
        extra["stage"] = cfg_.stage;
        extra["train_seed"] = cfg_.seed;
        extra["lambda"] = cfg_.lambda;
        extra["permutations"] = cfg_.permutations == PermMode::kRandom ? "random" : "default_only";
        save_checkpoint(dir, model_, global_step_, epoch, rng, &*opt_, extra);
    }

    TrainConfig cfg_;
    Dataset dataset_;
    ModelConfig model_cfg_;
    SpotModel<float> model_;
    std::optional<SpotModel<float>> teacher_;
    std::optional<Adam<float>> opt_;
    std::vector<std::vector<float>> inputs_;
    LrSchedule schedule_;
    Rng shuffle_rng_, perm_rng_, noise_rng_, teacher_perm_rng_, teacher_noise_rng_;
    int steps_per_epoch_ = 0;
    int64_t global_step_ = 0;
    int start_epoch_ = 0;
};

}  // namespace spot
