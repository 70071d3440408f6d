// Acceptance suite: one binary, one line per criterion. Criteria 1-5 run
// the oracle/invariant checks in-process; 6-8 run short training
// experiments at desk scale; 9-10 drive the installed CLI end to end.
//
// Usage: spot_acceptance <path-to-spot-cli> [work-dir]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "spot/diagnostics.hpp"
#include "spot/eval.hpp"
#include "spot/selfcheck.hpp"
#include "spot/train.hpp"

namespace fs = std::filesystem;
using namespace spot;

namespace {

std::string g_cli;
fs::path g_work;

struct Criterion {
    int id;
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = g_cli + " " + args + " > " + log.string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    return rc == -1 ? -1 : WEXITSTATUS(rc);
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

Criterion from_checks(int id, const std::string& name, const std::vector<CheckResult>& checks,
                      double limit_seconds, double elapsed) {
    Criterion c{id, name};
    c.pass = true;
    std::ostringstream os;
    for (const auto& r : checks) {
        if (!r.pass) {
            c.pass = false;
            os << "FAILED " << r.name << " (" << r.detail << "); ";
        }
    }
    if (c.pass) {
        os << checks.size() << " checks passed";
        if (elapsed > limit_seconds) {
            c.pass = false;
            os << "; exceeded runtime limit of " << limit_seconds << "s";
        }
    }
    c.seconds = elapsed;
    c.detail = os.str();
    return c;
}

void ensure_dataset(const fs::path& dir, int count, uint64_t seed) {
    if (fs::exists(dir / "manifest.json")) return;
    SceneSpec spec;  // defaults: 32x32, 4x4 patches, 2-4 objects
    DatasetManifest m;
    m.seed = seed;
    m.spec = spec;
    std::vector<SceneSample> samples;
    samples.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i)
        samples.push_back(make_sample(spec, seed, i, TargetMode::kPixels));
    write_dataset(samples, m, dir);
}

TrainConfig desk_config(const fs::path& data, int stage, uint64_t seed) {
    TrainConfig c;
    c.stage = stage;
    c.data = data.string();
    c.batch_size = 32;
    c.warmup_steps = 100;
    c.seed = seed;
    return c;  // model dims stay at desk-scale defaults
}

// --- criterion 6 -------------------------------------------------------------

Criterion criterion6() {
    const double t0 = now_seconds();
    Criterion c{6, "stage-1 learning: final-epoch L_REC <= 0.5 x first-epoch L_REC, 3 seeds"};
    const fs::path ds = g_work / "ds_default";
    ensure_dataset(ds, 2000, 1000);
    std::ostringstream os;
    c.pass = true;
    double worst_seed_time = 0.0;
    for (uint64_t seed = 0; seed < 3; ++seed) {
        const double s0 = now_seconds();
        TrainConfig cfg = desk_config(ds, 1, seed);
        cfg.epochs = 4;
        Trainer trainer(cfg);
        const TrainResult r = trainer.run(g_work / ("c6_ck_" + std::to_string(seed)));
        const double first = r.epochs.front().mean_rec;
        const double final = r.epochs.back().mean_rec;
        const double seed_time = now_seconds() - s0;
        worst_seed_time = std::max(worst_seed_time, seed_time);
        os << "seed " << seed << ": " << first << " -> " << final;
        if (!(final <= 0.5 * first)) {
            c.pass = false;
            os << " (NOT halved)";
        }
        os << "; ";
    }
    if (worst_seed_time > 300.0) {
        c.pass = false;
        os << "slowest seed took " << worst_seed_time << "s (> 300s)";
    }
    c.detail = os.str();
    c.seconds = now_seconds() - t0;
    return c;
}

// --- criterion 7 -------------------------------------------------------------

struct TrendRun {
    double teacher_slot_mbo = 0.0;
    double student_slot_mbo = 0.0;
    double student_dec_mbo = 0.0;
};

TrendRun run_trend_seed(const fs::path& train_ds, const Dataset& held, PermMode mode,
                        uint64_t seed, const std::string& tag) {
    TrendRun out;
    const fs::path teacher_dir = g_work / ("c7_s1_" + tag + "_" + std::to_string(seed));
    {
        TrainConfig cfg = desk_config(train_ds, 1, seed);
        cfg.epochs = 6;
        cfg.permutations = mode;
        Trainer trainer(cfg);
        trainer.run(teacher_dir);
        out.teacher_slot_mbo =
            evaluate_model(trainer.model(), held, MaskSource::kSlotAttention).mbo_i;
    }
    const fs::path student_dir = g_work / ("c7_s2_" + tag + "_" + std::to_string(seed));
    {
        TrainConfig cfg = desk_config(train_ds, 2, seed + 10);
        cfg.epochs = 8;
        cfg.permutations = mode;
        cfg.teacher = teacher_dir.string();
        Trainer trainer(cfg);
        trainer.run(student_dir);
        out.student_slot_mbo =
            evaluate_model(trainer.model(), held, MaskSource::kSlotAttention).mbo_i;
        out.student_dec_mbo = evaluate_model(trainer.model(), held, MaskSource::kDecoder).mbo_i;
    }
    return out;
}

double median3(double a, double b, double c) {
    return std::max(std::min(a, b), std::min(std::max(a, b), c));
}

Criterion criterion7() {
    const double t0 = now_seconds();
    Criterion c{7, "self-training trend: student slot mBO_i >= teacher's; permuted decoder >= unpermuted"};
    const fs::path train_ds = g_work / "ds_trend_train";
    const fs::path held_ds = g_work / "ds_trend_held";
    ensure_dataset(train_ds, 1000, 100);
    ensure_dataset(held_ds, 200, 200);
    const Dataset held = read_dataset(held_ds);

    std::ostringstream os;
    double perm_time = 0.0, noperm_time = 0.0;
    std::vector<TrendRun> perm_runs, noperm_runs;
    {
        const double s0 = now_seconds();
        for (uint64_t seed = 0; seed < 3; ++seed)
            perm_runs.push_back(run_trend_seed(train_ds, held, PermMode::kRandom, seed, "perm"));
        perm_time = now_seconds() - s0;
    }
    {
        const double s0 = now_seconds();
        for (uint64_t seed = 0; seed < 3; ++seed)
            noperm_runs.push_back(
                run_trend_seed(train_ds, held, PermMode::kDefaultOnly, seed, "noperm"));
        noperm_time = now_seconds() - s0;
    }

    const double teacher_med = median3(perm_runs[0].teacher_slot_mbo, perm_runs[1].teacher_slot_mbo,
                                       perm_runs[2].teacher_slot_mbo);
    const double student_med = median3(perm_runs[0].student_slot_mbo, perm_runs[1].student_slot_mbo,
                                       perm_runs[2].student_slot_mbo);
    const double dec_perm_med = median3(perm_runs[0].student_dec_mbo, perm_runs[1].student_dec_mbo,
                                        perm_runs[2].student_dec_mbo);
    const double dec_noperm_med =
        median3(noperm_runs[0].student_dec_mbo, noperm_runs[1].student_dec_mbo,
                noperm_runs[2].student_dec_mbo);

    c.pass = true;
    os << "slot-attention mBO_i median: teacher " << teacher_med << " -> student " << student_med;
    if (!(student_med >= teacher_med)) {
        c.pass = false;
        os << " (REGRESSED)";
    }
    os << "; decoder mBO_i median: unpermuted " << dec_noperm_med << " vs permuted "
       << dec_perm_med;
    if (!(dec_perm_med >= dec_noperm_med)) {
        c.pass = false;
        os << " (permutation gain missing)";
    }
    if (perm_time > 900.0 || noperm_time > 900.0) {
        c.pass = false;
        os << "; configuration exceeded 900s (perm " << perm_time << "s, noperm " << noperm_time
           << "s)";
    }
    c.detail = os.str();
    c.seconds = now_seconds() - t0;
    return c;
}

// --- criterion 8 -------------------------------------------------------------

Criterion criterion8() {
    const double t0 = now_seconds();
    Criterion c{8, "gradient-uniformity: CoV(random) < CoV(default) on permuted model; first row+col dominance on default model"};
    const Dataset held = read_dataset(g_work / "ds_trend_held");
    std::ostringstream os;
    c.pass = true;

    SpotModel<float> perm_model;
    load_checkpoint(g_work / "c7_s1_perm_0", perm_model);
    const GradNormMap rnd = grad_norm_map(perm_model, held, GradMapMode::kRandom, 64);
    const GradNormMap dft = grad_norm_map(perm_model, held, GradMapMode::kDefault, 64);
    os << "permuted model CoV: random " << rnd.coefficient_of_variation() << " vs default "
       << dft.coefficient_of_variation();
    if (!(rnd.coefficient_of_variation() < dft.coefficient_of_variation())) {
        c.pass = false;
        os << " (NOT more uniform)";
    }

    SpotModel<float> plain_model;
    load_checkpoint(g_work / "c7_s1_noperm_0", plain_model);
    const GradNormMap plain = grad_norm_map(plain_model, held, GradMapMode::kDefault, 64);
    const EdgeVsRest edge = first_row_col_vs_rest(plain);
    os << "; default-only model first row+col " << edge.edge_mean << " vs rest " << edge.rest_mean;
    if (!(edge.edge_mean > edge.rest_mean)) {
        c.pass = false;
        os << " (NO edge dominance)";
    }
    c.seconds = now_seconds() - t0;
    if (c.seconds > 300.0) {
        c.pass = false;
        os << "; exceeded 300s";
    }
    c.detail = os.str();
    return c;
}

// --- criterion 9 -------------------------------------------------------------

Criterion criterion9() {
    const double t0 = now_seconds();
    Criterion c{9, "ensembling: eval --source ens runs and differs from --source decoder"};
    const fs::path ckpt = g_work / "c7_s2_perm_0";
    const fs::path data = g_work / "ds_trend_held";
    const fs::path r_ens = g_work / "c9_ens.json";
    const fs::path r_dec = g_work / "c9_dec.json";
    const int rc1 = run_cli("eval --ckpt " + ckpt.string() + " --data " + data.string() +
                                " --source ens --json " + r_ens.string(),
                            g_work / "c9_ens.log");
    const int rc2 = run_cli("eval --ckpt " + ckpt.string() + " --data " + data.string() +
                                " --source decoder --json " + r_dec.string(),
                            g_work / "c9_dec.log");
    std::ostringstream os;
    if (rc1 != 0 || rc2 != 0) {
        c.pass = false;
        os << "CLI exit codes " << rc1 << ", " << rc2;
    } else {
        const std::string ens = read_file(r_ens);
        const std::string dec = read_file(r_dec);
        c.pass = !ens.empty() && ens != dec;
        os << (c.pass ? "reports differ: " : "reports identical: ") << ens.substr(0, 120);
    }
    c.seconds = now_seconds() - t0;
    c.detail = os.str();
    return c;
}

// --- criterion 10 ------------------------------------------------------------

Criterion criterion10() {
    const double t0 = now_seconds();
    Criterion c{10, "determinism: two full CLI pipelines produce bytewise-identical reports"};
    std::ostringstream os;
    c.pass = true;
    std::vector<std::string> reports;
    for (const std::string run : {"a", "b"}) {
        const fs::path dir = g_work / ("c10_" + run);
        fs::remove_all(dir);
        fs::create_directories(dir);
        const fs::path ds = dir / "ds";
        int rc = run_cli("gen-data --out " + ds.string() + " --count 200 --seed 7",
                         dir / "gen.log");
        if (rc != 0) {
            c.pass = false;
            os << "gen-data failed (" << rc << "); ";
            break;
        }
        write_file(dir / "s1.cfg", "stage = 1\ndata = " + ds.string() +
                                       "\nepochs = 2\nbatch_size = 32\nwarmup_steps = 10\nseed = 5\n");
        rc = run_cli("train --config " + (dir / "s1.cfg").string() + " --out " +
                         (dir / "ck1").string() + " --quiet",
                     dir / "s1.log");
        if (rc != 0) {
            c.pass = false;
            os << "stage-1 training failed (" << rc << "); ";
            break;
        }
        write_file(dir / "s2.cfg", "stage = 2\ndata = " + ds.string() + "\nteacher = " +
                                       (dir / "ck1").string() +
                                       "\nepochs = 2\nbatch_size = 32\nwarmup_steps = 10\nseed = 6\n");
        rc = run_cli("train --config " + (dir / "s2.cfg").string() + " --out " +
                         (dir / "ck2").string() + " --quiet",
                     dir / "s2.log");
        if (rc != 0) {
            c.pass = false;
            os << "stage-2 training failed (" << rc << "); ";
            break;
        }
        rc = run_cli("eval --ckpt " + (dir / "ck2").string() + " --data " + ds.string() +
                         " --source max --json " + (dir / "report.json").string(),
                     dir / "eval.log");
        if (rc != 0) {
            c.pass = false;
            os << "eval failed (" << rc << "); ";
            break;
        }
        reports.push_back(read_file(dir / "report.json"));
    }
    if (c.pass) {
        if (reports.size() == 2 && !reports[0].empty() && reports[0] == reports[1]) {
            os << "identical reports: " << reports[0].substr(0, 100);
        } else {
            c.pass = false;
            os << "reports differ";
        }
    }
    c.seconds = now_seconds() - t0;
    c.detail = os.str();
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: spot_acceptance <path-to-spot-cli> [work-dir]\n");
        return 2;
    }
    g_cli = argv[1];
    g_work = argc > 2 ? fs::path(argv[2]) : fs::path("acceptance_work");
    fs::create_directories(g_work);

    std::vector<Criterion> results;
    auto timed_checks = [&](int id, const std::string& name, auto&& fn, double limit) {
        const double t0 = now_seconds();
        const auto checks = fn();
        results.push_back(from_checks(id, name, checks, limit, now_seconds() - t0));
    };

    timed_checks(1, "gradient correctness: primitives and micro-model end-to-end vs finite differences",
                 selfcheck::check_gradient_correctness, 60.0);
    timed_checks(2, "permutation suite: bijections, inverses, causality perturbations",
                 selfcheck::check_permutation_suite, 60.0);
    timed_checks(3, "mask normalization: row-stochastic within 1e-6 on 100 forwards",
                 selfcheck::check_mask_normalization, 60.0);
    timed_checks(4, "assignment oracle: hungarian equals factorial brute force",
                 selfcheck::check_assignment_oracle, 60.0);
    timed_checks(5, "metric oracles: definitional equality and the FG-ARI pathology",
                 selfcheck::check_metric_oracles, 60.0);
    results.push_back(criterion6());
    results.push_back(criterion7());
    results.push_back(criterion8());
    results.push_back(criterion9());
    results.push_back(criterion10());

    int failures = 0;
    std::printf("\n");
    for (const auto& r : results) {
        std::printf("[%s] criterion %d: %s (%.1fs)\n        %s\n", r.pass ? "PASS" : "FAIL", r.id,
                    r.name.c_str(), r.seconds, r.detail.c_str());
        if (!r.pass) ++failures;
    }
    std::printf("\n%d/10 acceptance criteria passed\n", 10 - failures);
    return failures == 0 ? 0 : 1;
}
