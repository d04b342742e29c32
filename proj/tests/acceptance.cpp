// Acceptance gate: eight end-to-end checks covering gradients, the gating
// unit, complexity accounting, the scaling sweep, fusion necessity on the
// parity task, stagewise probes, order sensitivity, and determinism. Prints
// one PASS/FAIL line per check and exits nonzero if any fail.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "grf/bench.hpp"
#include "grf/embed.hpp"
#include "grf/gradcheck.hpp"
#include "grf/model.hpp"
#include "grf/probe.hpp"
#include "grf/train.hpp"

using namespace grf;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Check {
    bool ok = false;
    std::string detail;
};

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return std::string(buf);
}

Tensor<double> random_tensor(const std::vector<int>& shape, Rng& rng, double scale) {
    Tensor<double> t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-scale, scale);
    return t;
}

template <typename S>
ModalityBatch<S> unit_batch(const GrfConfig& cfg, Rng& rng) {
    ModalityBatch<S> batch;
    for (const auto& m : cfg.modalities) {
        batch.names.push_back(m.name);
        Tensor<S> x({1, m.seq_len, m.feat_dim});
        for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<S>(rng.uniform(-1.0, 1.0));
        batch.streams.push_back(std::move(x));
    }
    batch.labels = Tensor<S>({1});
    batch.ids.push_back(0);
    return batch;
}

// The three-modality parity protocol shared by checks 5 and 6.
GrfConfig parity_model_config() {
    GrfConfig cfg;
    cfg.d_model = 16;
    cfg.num_layers = 1;
    cfg.heads = 4;
    cfg.d_ff = 64;
    cfg.dropout = 0.0;
    cfg.modalities = {{"A", 8, 6}, {"V", 8, 6}, {"T", 8, 6}};
    cfg.fusion_order = {"A", "V", "T"};
    return cfg;
}

SyntheticTaskSpec parity_task_spec() {
    SyntheticTaskSpec spec;
    spec.modalities = parity_model_config().modalities;
    spec.mode = TaskMode::parity;
    spec.noise_std = 0.05;
    spec.n_train = 2000;
    spec.n_val = 500;
    spec.n_test = 500;
    return spec;
}

TrainConfig parity_train_config() {
    TrainConfig tc;
    tc.epochs = 100;
    tc.patience = 20;
    tc.batch_size = 32;
    tc.lr_max = 1e-3;
    tc.lr_min = 1e-6;
    tc.seed = 7;
    return tc;
}

// ---- check 1: gradient fidelity ------------------------------------------

Check check_gradients() {
    auto t0 = Clock::now();

    GrfConfig cfg;
    cfg.d_model = 8;
    cfg.num_layers = 1;
    cfg.heads = 2;
    cfg.d_ff = 16;
    cfg.dropout = 0.0;
    cfg.modalities = {{"A", 5, 3}, {"V", 5, 3}, {"T", 5, 3}};
    cfg.fusion_order = {"A", "V", "T"};
    cfg.validate();

    SyntheticTaskSpec spec;
    spec.modalities = cfg.modalities;
    spec.mode = TaskMode::parity;
    spec.n_train = 4;
    spec.n_val = 0;
    spec.n_test = 0;
    SyntheticData<double> data = generate_synthetic<double>(spec, 7);

    GrfModel<double> model(cfg, 7);
    Mode eval_mode;
    auto run = [&](bool with_grad) {
        Tape<double> tape;
        Var pred = model.forward(tape, data.train, eval_mode);
        Var loss = l1_loss(tape, pred, data.train.labels);
        if (with_grad) tape.backward(loss);
        return tape.value(loss)[0];
    };

    GradCheckReport rep = gradient_check<double>([&] { return run(false); }, [&] { run(true); },
                                                 model.params(), 1e-6);
    const double el = seconds_since(t0);
    const double tol = 1e-4;
    Check c;
    c.ok = rep.checked > 0 && rep.passed(tol) && el < 60.0;
    c.detail = fmt("worst rel %.3e over %lld entries in %.1f s (tol %.0e, budget 60 s)",
                   rep.worst_rel, rep.checked, el, tol);
    return c;
}

// ---- check 2: gate limits --------------------------------------------------

Check check_gate_limits() {
    Rng rng(101);
    const int d = 8;
    ParamStore<double> ps;
    auto gfu = GatedFusionUnit<double>::create(ps, "g", d, rng);

    double worst_closed = 0.0, worst_open = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        Tensor<double> s = random_tensor({1, d}, rng, 2.0);
        Tensor<double> m = random_tensor({1, d}, rng, 2.0);

        gfu.wz.weight->value.fill(0.0);
        gfu.wz.bias->value.fill(-50.0);  // z ~ 2e-22: output must hold the state
        {
            Tape<double> t;
            Var out = gfu.forward(t, t.leaf(s), t.leaf(m));
            for (int j = 0; j < d; ++j)
                worst_closed = std::max(worst_closed, std::abs(t.value(out)[j] - s[j]));
        }

        gfu.wz.bias->value.fill(50.0);  // z ~ 1: output must take the candidate
        {
            Tape<double> t;
            Var out = gfu.forward(t, t.leaf(s), t.leaf(m));
            const Tensor<double>& w = gfu.wh.weight->value;
            const Tensor<double>& b = gfu.wh.bias->value;
            for (int j = 0; j < d; ++j) {
                double acc = b[j];
                for (int i = 0; i < d; ++i) acc += s[i] * w.at({i, j});
                for (int i = 0; i < d; ++i) acc += m[i] * w.at({d + i, j});
                worst_open = std::max(worst_open, std::abs(t.value(out)[j] - std::tanh(acc)));
            }
        }
    }

    Check c;
    c.ok = worst_closed <= 1e-15 && worst_open <= 1e-15;
    c.detail = fmt("1000 trials: closed-gate dev %.2e, open-gate dev %.2e (tol 1e-15)",
                   worst_closed, worst_open);
    return c;
}

// ---- check 3: exact complexity accounting ----------------------------------

Check check_complexity_counts() {
    BenchConfig bc;  // reference dims: T=32, d=64, L=2, H=4, d_ff=256, F=32
    Mode eval_mode;

    int mismatches = 0;
    long long pair_curv_params = 0, pair_curv_flops = 0;
    bool growth_ok = true;

    for (ModelKind kind : {ModelKind::grf, ModelKind::pairwise}) {
        std::vector<long long> params, flops;
        for (int n = 2; n <= bc.n_max; ++n) {
            GrfConfig cfg = make_bench_config(bc, n);
            Rng rng(17);
            ModalityBatch<float> batch = unit_batch<float>(cfg, rng);

            long long enumerated = 0, macs = 0;
            if (kind == ModelKind::grf) {
                GrfModel<float> model(cfg, 1);
                enumerated = model.params().total_count();
                Tape<float> t;
                model.forward(t, batch, eval_mode);
                macs = t.macs();
            } else {
                PairwiseModel<float> model(cfg, 1);
                enumerated = model.params().total_count();
                Tape<float> t;
                model.forward(t, batch, eval_mode);
                macs = t.macs();
            }
            if (closed_form_params(kind, bc, n) != enumerated) ++mismatches;
            if (closed_form_flops(kind, bc, n) != macs) ++mismatches;
            params.push_back(enumerated);
            flops.push_back(macs);
        }

        for (const auto& series : {second_differences(params), second_differences(flops)}) {
            for (long long dd : series) {
                if (kind == ModelKind::grf && dd != 0) growth_ok = false;
                if (kind == ModelKind::pairwise && (dd <= 0 || dd != series.front()))
                    growth_ok = false;
            }
        }
        if (kind == ModelKind::pairwise) {
            pair_curv_params = second_differences(params).front();
            pair_curv_flops = second_differences(flops).front();
        }
    }

    Check c;
    c.ok = mismatches == 0 && growth_ok;
    c.detail = fmt("closed forms vs enumeration/instrumentation: %d mismatches over n in [2,10]; "
                   "grf second differences 0, pairwise +%lld params / +%lld flops",
                   mismatches, pair_curv_params, pair_curv_flops);
    return c;
}

// ---- check 4: scaling sweep -------------------------------------------------

Check check_scaling_sweep() {
    auto t0 = Clock::now();
    BenchConfig bc;  // n up to 10 at T=32, d=64, L=2
    SweepResult sweep = run_sweep<float>(bc);
    const double el = seconds_since(t0);

    auto series = [&](ModelKind kind) { return records_for(sweep.records, model_kind_name(kind)); };
    auto grf_rows = series(ModelKind::grf);
    auto pair_rows = series(ModelKind::pairwise);
    if (grf_rows.size() < 3 || pair_rows.size() < 3)
        return {false, "sweep produced too few records"};

    const double grf_ratio = grf_rows.back().wall_ms / grf_rows.front().wall_ms;
    const double pair_ratio = pair_rows.back().wall_ms / pair_rows.front().wall_ms;

    auto flops_fit = [&](const std::vector<BenchRecord>& rows) {
        std::vector<double> xs, ys;
        for (const auto& r : rows) {
            xs.push_back(static_cast<double>(r.n));
            ys.push_back(static_cast<double>(r.flops));
        }
        return fit_quadratic(xs, ys);
    };
    const QuadraticFit gf = flops_fit(grf_rows);
    const QuadraticFit pf = flops_fit(pair_rows);

    Check c;
    c.ok = pair_ratio > grf_ratio && pf.c > 0.0 && std::abs(gf.c) <= 1e-3 && el < 600.0;
    c.detail = fmt("wall n=10/n=2: pairwise %.2fx vs grf %.2fx; flops curvature %.4g vs %.4g; "
                   "%.1f s (budget 600 s)",
                   pair_ratio, grf_ratio, pf.c, gf.c, el);
    return c;
}

// ---- checks 5 and 6: fusion necessity, stagewise probe ---------------------

struct ParityArtifacts {
    std::unique_ptr<GrfModel<double>> model;  // trained full model
    SyntheticData<double> data;
};

Check check_fusion_necessity(ParityArtifacts& out) {
    auto t0 = Clock::now();
    const GrfConfig cfg = parity_model_config();
    const TrainConfig tc = parity_train_config();
    out.data = generate_synthetic<double>(parity_task_spec(), 7);

    out.model = std::make_unique<GrfModel<double>>(cfg, 7);
    TrainReport full = train_loop(*out.model, out.data, tc);

    double worst_ablation = 0.0;
    for (const std::string& mod : {"A", "V", "T"}) {
        GrfConfig ablated = cfg;
        ablated.fusion_order = {mod};
        GrfModel<double> single(ablated, 7);
        TrainReport rep = train_loop(single, out.data, tc);
        worst_ablation = std::max(worst_ablation, rep.test.acc2);
    }
    const double el = seconds_since(t0);

    Check c;
    c.ok = full.test.acc2 >= 0.95 && worst_ablation <= 0.60 && el < 900.0;
    c.detail = fmt("parity acc2: full model %.4f (need >= 0.95), best single modality %.4f "
                   "(need <= 0.60); %.0f s (budget 900 s)",
                   full.test.acc2, worst_ablation, el);
    return c;
}

Check check_stage_probe(const ParityArtifacts& art) {
    if (!art.model) return {false, "no trained model from the parity check"};

    StageEmbeddings<double> fit_set = compute_stage_embeddings(*art.model, art.data.train, 64);
    StageEmbeddings<double> eval_set = compute_stage_embeddings(*art.model, art.data.test, 64);

    std::vector<double> acc;
    for (size_t k = 0; k < fit_set.stages.size(); ++k) {
        LinearProbe<double> probe = LinearProbe<double>::fit(fit_set.stages[k], fit_set.labels);
        acc.push_back(probe.accuracy(eval_set.stages[k], eval_set.labels));
    }

    bool monotone = true;
    for (size_t k = 0; k + 1 < acc.size(); ++k)
        if (acc[k + 1] < acc[k] - 0.05) monotone = false;

    std::ostringstream chain;
    for (size_t k = 0; k < acc.size(); ++k) chain << (k ? " -> " : "") << fmt("%.3f", acc[k]);

    Check c;
    c.ok = !acc.empty() && acc.front() <= 0.60 && acc.back() >= 0.90 && monotone;
    c.detail = "probe accuracy by stage: " + chain.str() +
               " (first <= 0.60, last >= 0.90, nondecreasing within 0.05)";
    return c;
}

// ---- check 7: order sensitivity --------------------------------------------

Check check_order_sensitivity() {
    const GrfConfig base = parity_model_config();
    const std::vector<std::vector<std::string>> orders = {
        {"A", "V", "T"}, {"T", "V", "A"}, {"T", "A", "V"}};

    SyntheticTaskSpec spec = parity_task_spec();
    spec.n_train = 4;
    spec.n_val = 0;
    spec.n_test = 0;

    Mode eval_mode;
    double min_gap = std::numeric_limits<double>::infinity();
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        SyntheticData<double> data = generate_synthetic<double>(spec, 200 + seed);
        std::vector<Tensor<double>> finals;
        for (const auto& order : orders) {
            GrfConfig cfg = base;
            cfg.fusion_order = order;
            GrfModel<double> model(cfg, seed);
            Tape<double> tape;
            FusionTrace<double> trace;
            model.forward(tape, data.train, eval_mode, &trace);
            finals.push_back(tape.value(trace.stages.back()));
        }
        for (size_t i = 0; i < finals.size(); ++i)
            for (size_t j = i + 1; j < finals.size(); ++j)
                min_gap = std::min(min_gap, static_cast<double>(
                                                finals[i].max_abs_diff(finals[j])));
    }

    Check c;
    c.ok = min_gap > 1e-9;
    c.detail = fmt("3 orders x 10 random-weight seeds: smallest pairwise final-embedding gap "
                   "%.3g (need > 1e-9)",
                   min_gap);
    return c;
}

// ---- check 8: determinism ---------------------------------------------------

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return {};
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args, const std::string& tag) {
    const std::string cmd = std::string(GRF_CLI_PATH) + " " + args + " >acc_tmp/" + tag +
                            ".out 2>acc_tmp/" + tag + ".err";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Check check_determinism() {
    namespace fs = std::filesystem;
    fs::remove_all("acc_tmp");
    fs::create_directories("acc_tmp");

    {
        std::ofstream cfg("acc_tmp/tiny.cfg");
        cfg << "seed = 21\n"
               "model.d_model = 8\n"
               "model.layers = 1\n"
               "model.heads = 2\n"
               "model.d_ff = 16\n"
               "model.dropout = 0.0\n"
               "model.modalities = A:3:2,V:3:2\n"
               "model.order = A,V\n"
               "data.task = sum\n"
               "data.noise_std = 0.05\n"
               "data.train = 48\n"
               "data.val = 16\n"
               "data.test = 16\n"
               "train.epochs = 3\n"
               "train.patience = 3\n"
               "train.batch_size = 16\n"
               "bench.n_max = 3\n"
               "bench.seq_len = 4\n"
               "bench.d_model = 8\n"
               "bench.layers = 1\n"
               "bench.heads = 2\n"
               "bench.d_ff = 16\n"
               "bench.feat_dim = 4\n";
    }

    std::vector<std::string> problems;
    auto expect_zero = [&](const std::string& args, const std::string& tag) {
        const int code = run_cli(args, tag);
        if (code != 0) problems.push_back(tag + " exited " + std::to_string(code));
    };
    auto expect_same = [&](const std::string& a, const std::string& b) {
        const std::string ba = slurp(a), bb = slurp(b);
        if (ba.empty() || ba != bb)
            problems.push_back(fs::path(a).filename().string() + " differs between reruns");
    };

    expect_zero("train --config acc_tmp/tiny.cfg --out acc_tmp/t1", "t1");
    expect_zero("train --config acc_tmp/tiny.cfg --out acc_tmp/t2", "t2");
    expect_same("acc_tmp/t1/best.ckpt", "acc_tmp/t2/best.ckpt");
    expect_same("acc_tmp/t1/report.csv", "acc_tmp/t2/report.csv");
    expect_same("acc_tmp/t1/resolved.cfg", "acc_tmp/t2/resolved.cfg");

    expect_zero("gradcheck --config acc_tmp/tiny.cfg --out acc_tmp/g1", "g1");
    expect_zero("gradcheck --config acc_tmp/tiny.cfg --out acc_tmp/g2", "g2");
    expect_same("acc_tmp/g1/resolved.cfg", "acc_tmp/g2/resolved.cfg");
    expect_same("acc_tmp/g1.out", "acc_tmp/g2.out");

    expect_zero("embed --config acc_tmp/tiny.cfg --checkpoint acc_tmp/t1/best.ckpt --out acc_tmp/e1",
                "e1");
    expect_zero("embed --config acc_tmp/tiny.cfg --checkpoint acc_tmp/t1/best.ckpt --out acc_tmp/e2",
                "e2");
    expect_same("acc_tmp/e1/stage1.csv", "acc_tmp/e2/stage1.csv");
    expect_same("acc_tmp/e1/stage2.csv", "acc_tmp/e2/stage2.csv");

    // Bench reruns must agree on every reported quantity except wall_ms,
    // which is a physical measurement; it only has to be positive.
    expect_zero("bench --config acc_tmp/tiny.cfg --out acc_tmp/b1", "b1");
    expect_zero("bench --config acc_tmp/tiny.cfg --out acc_tmp/b2", "b2");
    try {
        auto r1 = parse_report("acc_tmp/b1/bench.csv");
        auto r2 = parse_report("acc_tmp/b2/bench.csv");
        if (r1.size() != r2.size()) {
            problems.push_back("bench.csv row counts differ");
        } else {
            for (size_t i = 0; i < r1.size(); ++i) {
                const bool fixed_fields_equal =
                    r1[i].model == r2[i].model && r1[i].n == r2[i].n &&
                    r1[i].params == r2[i].params && r1[i].flops == r2[i].flops &&
                    r1[i].alloc_bytes == r2[i].alloc_bytes;
                if (!fixed_fields_equal || r1[i].wall_ms <= 0.0 || r2[i].wall_ms <= 0.0) {
                    problems.push_back("bench.csv row " + std::to_string(i) + " differs");
                    break;
                }
            }
        }
    } catch (const std::exception& e) {
        problems.push_back(std::string("bench.csv parse: ") + e.what());
    }

    Check c;
    c.ok = problems.empty();
    c.detail = c.ok ? "train/gradcheck/embed outputs byte-identical across reruns; bench "
                      "identical except measured wall_ms"
                    : problems.front();
    return c;
}

}  // namespace

int main() {
    bool all_ok = true;
    int index = 0;
    auto run = [&](const char* name, auto&& fn) {
        Check c;
        try {
            c = fn();
        } catch (const std::exception& e) {
            c.ok = false;
            c.detail = std::string("exception: ") + e.what();
        }
        ++index;
        std::printf("criterion %d [%s] %s: %s\n", index, c.ok ? "PASS" : "FAIL", name,
                    c.detail.c_str());
        std::fflush(stdout);
        if (!c.ok) all_ok = false;
    };

    ParityArtifacts parity;
    run("gradient fidelity", check_gradients);
    run("gate limits", check_gate_limits);
    run("complexity accounting", check_complexity_counts);
    run("scaling sweep", check_scaling_sweep);
    run("fusion necessity", [&] { return check_fusion_necessity(parity); });
    run("stagewise probe", [&] { return check_stage_probe(parity); });
    run("order sensitivity", check_order_sensitivity);
    run("determinism", check_determinism);

    std::printf(all_ok ? "acceptance: all 8 checks passed\n"
                       : "acceptance: at least one check FAILED\n");
    return all_ok ? 0 : 1;
}
