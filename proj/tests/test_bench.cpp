#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "grf/bench.hpp"

using grf::BenchConfig;
using grf::BenchRecord;
using grf::ConfigError;
using grf::GrfConfig;
using grf::GrfModel;
using grf::InputError;
using grf::Mode;
using grf::ModalityBatch;
using grf::ModelKind;
using grf::PairwiseModel;
using grf::Rng;
using grf::Tape;
using grf::Tensor;

namespace {

// Small geometry keeps the n = 2..10 model constructions cheap.
BenchConfig small_bench() {
    BenchConfig bc;
    bc.n_max = 10;
    bc.seq_len = 3;
    bc.d_model = 8;
    bc.layers = 2;
    bc.heads = 2;
    bc.d_ff = 16;
    bc.feat_dim = 4;
    bc.seed = 3;
    return bc;
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

}  // namespace

TEST_CASE("closed-form parameter counts equal enumeration for every n") {
    BenchConfig bc = small_bench();
    for (int n = 2; n <= 10; ++n) {
        GrfConfig cfg = grf::make_bench_config(bc, n);
        GrfModel<float> grf_model(cfg, 1);
        PairwiseModel<float> pair_model(cfg, 1);
        REQUIRE(grf::closed_form_params(ModelKind::grf, bc, n) ==
                grf_model.params().total_count());
        REQUIRE(grf::closed_form_params(ModelKind::pairwise, bc, n) ==
                pair_model.params().total_count());
    }
}

TEST_CASE("closed-form flops equal the instrumented MAC count for every n") {
    BenchConfig bc = small_bench();
    Mode eval_mode;
    for (int n = 2; n <= 10; ++n) {
        GrfConfig cfg = grf::make_bench_config(bc, n);
        Rng rng(bc.seed + static_cast<uint64_t>(n));
        ModalityBatch<float> batch = unit_batch<float>(cfg, rng);

        GrfModel<float> grf_model(cfg, 1);
        Tape<float> t1;
        grf_model.forward(t1, batch, eval_mode);
        REQUIRE(t1.macs() == grf::closed_form_flops(ModelKind::grf, bc, n));

        PairwiseModel<float> pair_model(cfg, 1);
        Tape<float> t2;
        pair_model.forward(t2, batch, eval_mode);
        REQUIRE(t2.macs() == grf::closed_form_flops(ModelKind::pairwise, bc, n));
    }
}

TEST_CASE("parameter growth is linear for the shared block, quadratic for pairs") {
    BenchConfig bc = small_bench();
    std::vector<long long> grf_params, pair_params, grf_flops, pair_flops;
    for (int n = 2; n <= 10; ++n) {
        grf_params.push_back(grf::closed_form_params(ModelKind::grf, bc, n));
        pair_params.push_back(grf::closed_form_params(ModelKind::pairwise, bc, n));
        grf_flops.push_back(grf::closed_form_flops(ModelKind::grf, bc, n));
        pair_flops.push_back(grf::closed_form_flops(ModelKind::pairwise, bc, n));
    }
    for (long long d2 : grf::second_differences(grf_params)) REQUIRE(d2 == 0);
    for (long long d2 : grf::second_differences(grf_flops)) REQUIRE(d2 == 0);

    const auto pair_param_curv = grf::second_differences(pair_params);
    const auto pair_flop_curv = grf::second_differences(pair_flops);
    for (long long d2 : pair_param_curv) {
        REQUIRE(d2 > 0);
        REQUIRE(d2 == pair_param_curv.front());  // constant curvature
    }
    for (long long d2 : pair_flop_curv) {
        REQUIRE(d2 > 0);
        REQUIRE(d2 == pair_flop_curv.front());
    }

    // consecutive GRF counts differ by exactly one projection layer
    const long long proj = grf::cf_linear_params(bc.feat_dim, bc.d_model);
    for (size_t i = 1; i < grf_params.size(); ++i)
        REQUIRE(grf_params[i] - grf_params[i - 1] == proj);
}

TEST_CASE("gated unit term inside the closed form is 2(2d^2 + d)") {
    BenchConfig bc = small_bench();
    // strip projections, block, and head from the GRF count at n = 2
    const long long d = bc.d_model, h = d / 2;
    const long long total = grf::closed_form_params(ModelKind::grf, bc, 2);
    const long long without_gfu = 2 * grf::cf_linear_params(bc.feat_dim, d) +
                                  2 * bc.layers * grf::cf_layer_params(bc) +
                                  grf::cf_linear_params(d, h) + grf::cf_linear_params(h, 1);
    REQUIRE(total - without_gfu == 2 * (2 * d * d + d));
}

TEST_CASE("quadratic fit recovers exact polynomials") {
    std::vector<double> xs, lin, quad;
    for (int n = 2; n <= 10; ++n) {
        xs.push_back(n);
        lin.push_back(3.0 + 2.0 * n);
        quad.push_back(1.0 + 2.0 * n + 5.0 * n * n);
    }
    grf::QuadraticFit lf = grf::fit_quadratic(xs, lin);
    REQUIRE(std::abs(lf.a - 3.0) < 1e-6);
    REQUIRE(std::abs(lf.b - 2.0) < 1e-6);
    REQUIRE(std::abs(lf.c) < 1e-9);
    REQUIRE(lf.linear_r2 > 1.0 - 1e-12);

    grf::QuadraticFit qf = grf::fit_quadratic(xs, quad);
    REQUIRE(std::abs(qf.a - 1.0) < 1e-5);
    REQUIRE(std::abs(qf.b - 2.0) < 1e-5);
    REQUIRE(std::abs(qf.c - 5.0) < 1e-6);
    REQUIRE(qf.linear_r2 < 1.0);

    REQUIRE_THROWS_AS(grf::fit_quadratic({1, 2}, {1, 2}), InputError);
}

TEST_CASE("second differences flag curvature exactly") {
    REQUIRE(grf::second_differences({1, 4, 9, 16}) == std::vector<long long>{2, 2});
    REQUIRE(grf::second_differences({5, 7, 9, 11}) == std::vector<long long>{0, 0});
    REQUIRE(grf::second_differences({1, 2}).empty());
}

TEST_CASE("bench csv round-trips records exactly") {
    std::vector<BenchRecord> records = {
        {"grf", 2, 123456, 789012, 1.0625, 4096},
        {"grf", 3, 130000, 900000, 0.1234567890123456789, 8192},
        {"pairwise", 2, 220000, 1500000, 2.5, 16384},
    };
    const std::string path = "bench_roundtrip_tmp.csv";
    std::ostringstream summary;
    grf::emit_report(records, path, summary);

    std::vector<BenchRecord> back = grf::parse_report(path);
    REQUIRE(back.size() == records.size());
    for (size_t i = 0; i < records.size(); ++i) REQUIRE(back[i] == records[i]);
    std::remove(path.c_str());

    REQUIRE_THROWS_AS(grf::emit_report({}, path, summary), InputError);
    REQUIRE_THROWS_AS(grf::parse_report("no_such_bench_file.csv"), grf::IoError);
}

TEST_CASE("bench csv has the pinned header and one row per record") {
    std::vector<BenchRecord> records = {{"grf", 2, 10, 20, 0.5, 30},
                                        {"pairwise", 2, 11, 21, 0.6, 31}};
    const std::string path = "bench_header_tmp.csv";
    std::ostringstream summary;
    grf::emit_report(records, path, summary);
    std::ifstream in(path);
    std::string line;
    REQUIRE(std::getline(in, line));
    REQUIRE(line == "model,n,params,flops,wall_ms,alloc_bytes");
    int rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    REQUIRE(rows == 2);
    in.close();
    std::remove(path.c_str());
}

TEST_CASE("the sweep produces ordered records with live measurements") {
    BenchConfig bc = small_bench();
    bc.n_max = 4;
    grf::SweepResult result = grf::run_sweep<float>(bc);
    REQUIRE(result.records.size() == 6);  // 2 kinds x n in {2, 3, 4}

    for (size_t i = 0; i < 3; ++i) {
        REQUIRE(result.records[i].model == "grf");
        REQUIRE(result.records[i].n == static_cast<int>(i) + 2);
        REQUIRE(result.records[i + 3].model == "pairwise");
        REQUIRE(result.records[i + 3].n == static_cast<int>(i) + 2);
    }
    for (const auto& r : result.records) {
        const ModelKind kind = grf::parse_model_kind(r.model);
        REQUIRE(r.params == grf::closed_form_params(kind, bc, r.n));
        REQUIRE(r.flops == grf::closed_form_flops(kind, bc, r.n));
        REQUIRE(r.wall_ms > 0.0);
        REQUIRE(r.alloc_bytes > 0);
    }
}

TEST_CASE("bench configuration rejects out-of-range sweeps") {
    BenchConfig bc;
    bc.n_max = 1;
    REQUIRE_THROWS_AS(bc.validate(), ConfigError);
    bc.n_max = 11;
    REQUIRE_THROWS_AS(bc.validate(), ConfigError);
    bc = BenchConfig{};
    bc.reps = 4;
    REQUIRE_THROWS_AS(bc.validate(), ConfigError);
    bc = BenchConfig{};
    REQUIRE_NOTHROW(bc.validate());

    REQUIRE(grf::parse_model_kind("grf") == ModelKind::grf);
    REQUIRE(grf::parse_model_kind("pairwise") == ModelKind::pairwise);
    REQUIRE_THROWS_AS(grf::parse_model_kind("mlp"), ConfigError);
}

TEST_CASE("bench model configs enumerate uniform modalities") {
    BenchConfig bc = small_bench();
    GrfConfig cfg = grf::make_bench_config(bc, 5);
    REQUIRE(cfg.modalities.size() == 5);
    REQUIRE(cfg.fusion_order.size() == 5);
    REQUIRE(cfg.modalities.front().name == "m1");
    REQUIRE(cfg.modalities.back().name == "m5");
    REQUIRE(cfg.dropout == 0.0);
    for (const auto& m : cfg.modalities) {
        REQUIRE(m.feat_dim == bc.feat_dim);
        REQUIRE(m.seq_len == bc.seq_len);
    }
}
