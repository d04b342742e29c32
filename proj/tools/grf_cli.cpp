// Command-line front end: train / gradcheck / bench / embed on the fusion
// models. Exit codes: 0 success, 1 check failure, 2 usage error, 3 I/O error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "grf/bench.hpp"
#include "grf/config.hpp"
#include "grf/embed.hpp"
#include "grf/gradcheck.hpp"
#include "grf/model.hpp"
#include "grf/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

struct CliOptions {
    std::string config_path;
    std::string model_kind;
    std::string order;
    std::string out_dir = "out";
    std::string checkpoint;
    std::string split = "test";
    std::optional<uint64_t> seed;
    std::optional<int> n_max;
};

grf::RunConfig resolve_config(const CliOptions& opt) {
    grf::RunConfig rc;
    if (!opt.config_path.empty()) rc = grf::load_run_config(opt.config_path);
    if (!opt.model_kind.empty()) rc.kind = grf::parse_model_kind(opt.model_kind);
    if (!opt.order.empty()) {
        rc.model.fusion_order.clear();
        std::istringstream in(opt.order);
        std::string name;
        while (std::getline(in, name, ',')) rc.model.fusion_order.push_back(name);
    }
    if (opt.seed) rc.seed = *opt.seed;
    if (opt.n_max) rc.bench.n_max = *opt.n_max;
    rc.train.seed = rc.seed;
    rc.bench.seed = rc.seed;
    rc.finalize();
    rc.model.validate();
    return rc;
}

void prepare_out_dir(const grf::RunConfig& rc, const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw grf::IoError("cannot create output directory " + dir + ": " + ec.message());
    grf::write_config_echo(rc, dir + "/resolved.cfg");
}

int cmd_train(const CliOptions& opt) {
    grf::RunConfig rc = resolve_config(opt);
    rc.train.validate();
    prepare_out_dir(rc, opt.out_dir);

    grf::SyntheticData<double> data = grf::generate_synthetic<double>(rc.data, rc.seed);
    grf::TrainReport report;
    if (rc.kind == grf::ModelKind::grf) {
        grf::GrfModel<double> model(rc.model, rc.seed);
        report = grf::train_loop(model, data, rc.train);
        grf::save_checkpoint(model.params(), opt.out_dir + "/best.ckpt");
    } else {
        grf::PairwiseModel<double> model(rc.model, rc.seed);
        report = grf::train_loop(model, data, rc.train);
        grf::save_checkpoint(model.params(), opt.out_dir + "/best.ckpt");
    }
    grf::write_report_csv(report, opt.out_dir + "/report.csv");

    std::printf("trained %s for %d epochs (best epoch %d, val MAE %.6f)\n",
                grf::model_kind_name(rc.kind).c_str(), report.stop_epoch, report.best_epoch,
                report.best_val_mae);
    std::printf("test: mae %.6f corr %s acc2 %.4f acc7 %.4f f1 %.4f\n", report.test.mae,
                report.test.corr_str().c_str(), report.test.acc2, report.test.acc7,
                report.test.f1);
    return kExitOk;
}

int cmd_gradcheck(const CliOptions& opt) {
    grf::RunConfig rc = resolve_config(opt);
    if (rc.model.d_model > 16)
        throw grf::ConfigError("gradcheck requires d_model <= 16, got " +
                               std::to_string(rc.model.d_model));
    prepare_out_dir(rc, opt.out_dir);

    // A small eval-mode batch; dropout stays off so the loss is a
    // deterministic function of the parameters.
    grf::SyntheticTaskSpec probe_spec = rc.data;
    probe_spec.n_train = 4;
    probe_spec.n_val = 0;
    probe_spec.n_test = 0;
    grf::SyntheticData<double> data = grf::generate_synthetic<double>(probe_spec, rc.seed);
    const grf::ModalityBatch<double>& batch = data.train;

    auto run = [&](auto& model, bool with_grad) {
        grf::Tape<double> tape;
        grf::Mode eval_mode;
        grf::Var pred = model.forward(tape, batch, eval_mode);
        grf::Var loss = grf::l1_loss(tape, pred, batch.labels);
        if (with_grad) tape.backward(loss);
        return tape.value(loss)[0];
    };

    grf::GradCheckReport report;
    if (rc.kind == grf::ModelKind::grf) {
        grf::GrfModel<double> model(rc.model, rc.seed);
        report = grf::gradient_check<double>([&]() { return run(model, false); },
                                             [&]() { run(model, true); }, model.params(), 1e-6);
    } else {
        grf::PairwiseModel<double> model(rc.model, rc.seed);
        report = grf::gradient_check<double>([&]() { return run(model, false); },
                                             [&]() { run(model, true); }, model.params(), 1e-6);
    }

    if (report.checked == 0) {
        std::printf("warning: no parameters to check; vacuous pass\n");
        return kExitOk;
    }
    const double tol = 1e-4;
    std::printf("checked %lld entries, worst relative error %.3e (%s[%lld])\n", report.checked,
                report.worst_rel, report.worst_param.c_str(),
                static_cast<long long>(report.worst_index));
    if (!report.passed(tol)) {
        std::printf("FAIL: exceeds tolerance %.1e\n", tol);
        return kExitCheckFailed;
    }
    std::printf("PASS: below tolerance %.1e\n", tol);
    return kExitOk;
}

int cmd_bench(const CliOptions& opt) {
    grf::RunConfig rc = resolve_config(opt);
    rc.bench.validate();
    prepare_out_dir(rc, opt.out_dir);

    grf::SweepResult sweep = grf::run_sweep<float>(rc.bench);
    for (const auto& w : sweep.warnings) std::printf("warning: %s\n", w.c_str());

    std::ostringstream summary;
    grf::emit_report(sweep.records, opt.out_dir + "/bench.csv", summary);
    std::ofstream sfile(opt.out_dir + "/summary.txt");
    if (!sfile) throw grf::IoError("cannot open summary for writing");
    sfile << summary.str();
    std::fputs(summary.str().c_str(), stdout);
    return kExitOk;
}

int cmd_embed(const CliOptions& opt) {
    grf::RunConfig rc = resolve_config(opt);
    if (rc.kind != grf::ModelKind::grf)
        throw grf::ConfigError("embed exports fusion stages and only applies to --model grf");
    if (opt.checkpoint.empty()) throw grf::ConfigError("embed requires --checkpoint");
    prepare_out_dir(rc, opt.out_dir);

    grf::GrfModel<double> model(rc.model, rc.seed);
    grf::load_checkpoint(model.params(), opt.checkpoint);

    grf::SyntheticData<double> data = grf::generate_synthetic<double>(rc.data, rc.seed);
    const grf::ModalityBatch<double>* split = nullptr;
    if (opt.split == "train") split = &data.train;
    else if (opt.split == "val") split = &data.val;
    else if (opt.split == "test") split = &data.test;
    else throw grf::ConfigError("unknown split: " + opt.split + " (expected train/val/test)");

    auto emb = grf::compute_stage_embeddings(model, *split, rc.train.batch_size);
    auto paths = grf::write_stage_files(emb, opt.out_dir);
    if (emb.count() == 0) std::printf("warning: split %s is empty; header-only files\n",
                                      opt.split.c_str());
    std::printf("wrote %zu stage files for split %s (%lld samples)\n", paths.size(),
                opt.split.c_str(), static_cast<long long>(emb.count()));
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gated recurrent fusion toolkit"};
    app.require_subcommand(1);

    CliOptions opt;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config_path, "flat key = value config file");
        sub->add_option("--model", opt.model_kind, "grf or pairwise");
        sub->add_option("--order", opt.order, "fusion order, e.g. T,A,V");
        sub->add_option("--seed", opt.seed, "run seed");
        sub->add_option("--out", opt.out_dir, "output directory (default: out)");
        sub->add_option("--n-max", opt.n_max, "bench sweep upper modality count");
    };

    CLI::App* train = app.add_subcommand("train", "train a model on the synthetic task");
    add_common(train);
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "compare analytic gradients to finite differences");
    add_common(gradcheck);
    CLI::App* bench = app.add_subcommand("bench", "run the scaling sweep");
    add_common(bench);
    CLI::App* embed = app.add_subcommand("embed", "export per-stage fusion embeddings");
    add_common(embed);
    embed->add_option("--checkpoint", opt.checkpoint, "trained checkpoint to load");
    embed->add_option("--split", opt.split, "train, val, or test (default: test)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (train->parsed()) return cmd_train(opt);
        if (gradcheck->parsed()) return cmd_gradcheck(opt);
        if (bench->parsed()) return cmd_bench(opt);
        if (embed->parsed()) return cmd_embed(opt);
        std::fprintf(stderr, "no subcommand given\n");
        return kExitUsage;
    } catch (const grf::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitIo;
    } catch (const grf::DivergenceError& e) {
        std::fprintf(stderr, "check failed: %s\n", e.what());
        return kExitCheckFailed;
    } catch (const grf::ConfigError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kExitUsage;
    } catch (const grf::InputError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kExitUsage;
    } catch (const grf::DimError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitCheckFailed;
    }
}
