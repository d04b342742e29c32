#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "grf/model.hpp"

namespace grf {

enum class ModelKind { grf, pairwise };

inline std::string model_kind_name(ModelKind k) {
    return k == ModelKind::grf ? "grf" : "pairwise";
}

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "grf") return ModelKind::grf;
    if (s == "pairwise") return ModelKind::pairwise;
    throw ConfigError("unknown model kind: " + s + " (expected grf or pairwise)");
}

// Sweep geometry: every modality gets the same synthetic width and length
// so cost depends on n alone.
struct BenchConfig {
    int n_max = 10;
    int reps = 5;
    int warmups = 2;
    int seq_len = 32;
    int d_model = 64;
    int layers = 2;
    int heads = 4;
    int d_ff = 256;
    int feat_dim = 32;
    uint64_t seed = 1;

    void validate() const {
        if (n_max < 2 || n_max > 10) throw ConfigError("bench n_max must lie in [2, 10]");
        if (reps < 5) throw ConfigError("bench needs at least 5 timed repetitions");
        if (warmups < 0) throw ConfigError("bench warmups must be non-negative");
        if (seq_len < 1 || feat_dim < 1) throw ConfigError("bench dims must be positive");
    }
};

struct BenchRecord {
    std::string model;
    int n = 0;
    long long params = 0;
    long long flops = 0;       // forward multiply-accumulates at batch 1
    double wall_ms = 0.0;      // median of timed repetitions
    long long alloc_bytes = 0; // peak live tensor bytes above the pre-forward baseline

    bool operator==(const BenchRecord& o) const {
        return model == o.model && n == o.n && params == o.params && flops == o.flops &&
               wall_ms == o.wall_ms && alloc_bytes == o.alloc_bytes;
    }
};

inline GrfConfig make_bench_config(const BenchConfig& bc, int n) {
    GrfConfig cfg;
    cfg.d_model = bc.d_model;
    cfg.num_layers = bc.layers;
    cfg.heads = bc.heads;
    cfg.d_ff = bc.d_ff;
    cfg.dropout = 0.0;
    for (int i = 1; i <= n; ++i) {
        cfg.modalities.push_back({"m" + std::to_string(i), bc.feat_dim, bc.seq_len});
        cfg.fusion_order.push_back("m" + std::to_string(i));
    }
    return cfg;
}

// ---- closed-form cost model ----
//
// Shapes (d = d_model, f = d_ff, F = feat_dim, T = seq_len, L = layers,
// h = d/2 the head hidden width):
//   linear(i, o) params        = i*o + o
//   attention params           = 4*(d*d + d)              (wq wk wv wo)
//   cross-attn layer params    = attention + (d*f + f) + (f*d + d) + 2*(2d)
//   gated unit params          = 2*(2d*d + d)             (z and candidate)
//   head(w) params             = (w*h + h) + (h + 1)
//
// MACs for one forward pass at batch 1 (matmuls only, by definition):
//   linear over a rows         = a*i*o
//   attention(a query rows, b key rows)
//                              = 2(a+b)*d^2 + 2*a*b*d
//     (four d x d projections cost (2a+2b)d^2; the score and mix products
//      cost a*b*d each regardless of the head split)
//   cross-attn layer(a, b)     = attention(a, b) + 2*a*d*f
//   gated unit                 = 2 * (2d*d) = 4d^2
//   head(w)                    = w*h + h
//
// GRF: every fusion step runs each layer twice, once per direction. The
// context stream is a single row, so its direction costs layer(1, T) and
// the modality direction costs layer(T, 1); neither contains a T^2 term,
// which is the whole point:
//   grf(n) = n*T*F*d                                   projections
//          + (n-1) * L * [layer(1, T) + layer(T, 1)]   fusion steps
//          + (n-1) * 4d^2                              gated unit
//          + d*h + h                                   head
// Pairwise runs a dedicated stack per ordered pair where both streams are
// full length-T sequences, so each layer carries a 2*T^2*d term and there
// are n(n-1) stacks:
//   pair(n) = n*T*F*d + n(n-1) * L * layer(T, T) + n(n-1)*d*h + h

inline long long cf_linear_params(long long i, long long o) { return i * o + o; }

inline long long cf_layer_params(const BenchConfig& bc) {
    const long long d = bc.d_model, f = bc.d_ff;
    return 4 * (d * d + d) + cf_linear_params(d, f) + cf_linear_params(f, d) + 2 * (2 * d);
}

inline long long closed_form_params(ModelKind kind, const BenchConfig& bc, int n) {
    const long long d = bc.d_model, F = bc.feat_dim, L = bc.layers, h = d / 2;
    const long long proj = n * cf_linear_params(F, d);
    if (kind == ModelKind::grf) {
        const long long gfu = 2 * (2 * d * d + d);
        const long long head = cf_linear_params(d, h) + cf_linear_params(h, 1);
        return proj + 2 * L * cf_layer_params(bc) + gfu + head;
    }
    const long long pairs = static_cast<long long>(n) * (n - 1);
    const long long head = cf_linear_params(pairs * d, h) + cf_linear_params(h, 1);
    return proj + pairs * L * cf_layer_params(bc) + head;
}

inline long long cf_layer_flops(const BenchConfig& bc, long long a, long long b) {
    const long long d = bc.d_model, f = bc.d_ff;
    return 2 * (a + b) * d * d + 2 * a * b * d + 2 * a * d * f;
}

inline long long closed_form_flops(ModelKind kind, const BenchConfig& bc, int n) {
    const long long d = bc.d_model, F = bc.feat_dim, T = bc.seq_len, L = bc.layers, h = d / 2;
    const long long proj = static_cast<long long>(n) * T * F * d;
    if (kind == ModelKind::grf) {
        const long long per_step = L * (cf_layer_flops(bc, 1, T) + cf_layer_flops(bc, T, 1)) +
                                   4 * d * d;
        return proj + (n - 1) * per_step + d * h + h;
    }
    const long long pairs = static_cast<long long>(n) * (n - 1);
    return proj + pairs * L * cf_layer_flops(bc, T, T) + pairs * d * h + h;
}

// ---- sweep driver ----

struct SweepResult {
    std::vector<BenchRecord> records;
    std::vector<std::string> warnings;
};

namespace detail {

template <typename S>
ModalityBatch<S> random_bench_batch(const GrfConfig& cfg, Rng& rng) {
    ModalityBatch<S> batch;
    for (const auto& m : cfg.modalities) {
        batch.names.push_back(m.name);
        Tensor<S> x({1, m.seq_len, m.feat_dim});
        for (int64_t i = 0; i < x.numel(); ++i)
            x[i] = static_cast<S>(rng.uniform(-1.0, 1.0));
        batch.streams.push_back(std::move(x));
    }
    batch.labels = Tensor<S>({1});
    batch.ids.push_back(0);
    return batch;
}

template <typename S, typename Model>
BenchRecord bench_one(const Model& model, const ModalityBatch<S>& batch, ModelKind kind, int n,
                      const BenchConfig& bc, std::vector<std::string>& warnings) {
    Mode eval_mode;

    // One instrumented pass for the MAC count and the allocation high-water
    // mark above the standing model + input footprint.
    memtrack::reset_peak();
    const long long baseline = memtrack::live_bytes();
    long long macs = 0;
    {
        Tape<S> tape;
        Var out = model.forward(tape, batch, eval_mode);
        (void)out;
        macs = tape.macs();
    }
    const long long alloc = memtrack::peak_bytes() - baseline;

    for (int w = 0; w < bc.warmups; ++w) {
        Tape<S> tape;
        model.forward(tape, batch, eval_mode);
    }
    std::vector<double> times;
    for (int r = 0; r < bc.reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        Tape<S> tape;
        model.forward(tape, batch, eval_mode);
        const auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    const double median = times[times.size() / 2];
    if (!times.empty() && times.back() - times.front() > 0.2 * median)
        warnings.push_back(model_kind_name(kind) + " n=" + std::to_string(n) +
                           ": timing spread " + std::to_string(times.back() - times.front()) +
                           " ms exceeds 20% of median " + std::to_string(median) + " ms");

    BenchRecord rec;
    rec.model = model_kind_name(kind);
    rec.n = n;
    rec.params = model.params().total_count();
    rec.flops = macs;
    rec.wall_ms = median;
    rec.alloc_bytes = alloc;
    return rec;
}

}  // namespace detail

// Times both architectures for n = 2..n_max on identical random inputs.
// Records are ordered grf n=2.., then pairwise n=2...
template <typename S>
SweepResult run_sweep(const BenchConfig& bc) {
    bc.validate();
    SweepResult result;
    for (ModelKind kind : {ModelKind::grf, ModelKind::pairwise}) {
        for (int n = 2; n <= bc.n_max; ++n) {
            GrfConfig cfg = make_bench_config(bc, n);
            Rng data_rng(bc.seed + static_cast<uint64_t>(n));
            ModalityBatch<S> batch = detail::random_bench_batch<S>(cfg, data_rng);
            if (kind == ModelKind::grf) {
                GrfModel<S> model(cfg, bc.seed);
                result.records.push_back(detail::bench_one<S>(model, batch, kind, n, bc,
                                                              result.warnings));
            } else {
                PairwiseModel<S> model(cfg, bc.seed);
                result.records.push_back(detail::bench_one<S>(model, batch, kind, n, bc,
                                                              result.warnings));
            }
        }
    }
    return result;
}

// ---- fits and reporting ----

struct QuadraticFit {
    double a = 0.0, b = 0.0, c = 0.0;  // y ~ a + b n + c n^2
    double linear_r2 = 0.0;            // goodness of the pure a + b n fit
};

inline QuadraticFit fit_quadratic(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 3)
        throw InputError("quadratic fit needs at least three points");
    const size_t m = xs.size();
    // normal equations for [1, x, x^2]
    double s[5] = {0, 0, 0, 0, 0}, t[3] = {0, 0, 0};
    for (size_t i = 0; i < m; ++i) {
        double p = 1.0;
        for (int k = 0; k < 5; ++k) {
            s[k] += p;
            if (k < 3) t[k] += p * ys[i];
            p *= xs[i];
        }
    }
    double A[3][4] = {{s[0], s[1], s[2], t[0]}, {s[1], s[2], s[3], t[1]}, {s[2], s[3], s[4], t[2]}};
    for (int col = 0; col < 3; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 3; ++r)
            if (std::abs(A[r][col]) > std::abs(A[pivot][col])) pivot = r;
        std::swap(A[col], A[pivot]);
        for (int r = 0; r < 3; ++r) {
            if (r == col) continue;
            const double factor = A[r][col] / A[col][col];
            for (int k = col; k < 4; ++k) A[r][k] -= factor * A[col][k];
        }
    }
    QuadraticFit fit;
    fit.a = A[0][3] / A[0][0];
    fit.b = A[1][3] / A[1][1];
    fit.c = A[2][3] / A[2][2];

    // linear fit residuals for R^2
    const double xbar = s[1] / double(m), ybar = t[0] / double(m);
    double sxx = 0, sxy = 0, syy = 0;
    for (size_t i = 0; i < m; ++i) {
        sxx += (xs[i] - xbar) * (xs[i] - xbar);
        sxy += (xs[i] - xbar) * (ys[i] - ybar);
        syy += (ys[i] - ybar) * (ys[i] - ybar);
    }
    const double slope = sxy / sxx;
    double ss_res = 0;
    for (size_t i = 0; i < m; ++i) {
        const double r = ys[i] - (ybar + slope * (xs[i] - xbar));
        ss_res += r * r;
    }
    fit.linear_r2 = syy > 0 ? 1.0 - ss_res / syy : 1.0;
    return fit;
}

// Exact discrete curvature: y(n+1) - 2 y(n) + y(n-1) per interior point.
inline std::vector<long long> second_differences(const std::vector<long long>& ys) {
    std::vector<long long> out;
    for (size_t i = 1; i + 1 < ys.size(); ++i)
        out.push_back(ys[i + 1] - 2 * ys[i] + ys[i - 1]);
    return out;
}

inline std::vector<BenchRecord> records_for(const std::vector<BenchRecord>& records,
                                            const std::string& model) {
    std::vector<BenchRecord> out;
    for (const auto& r : records)
        if (r.model == model) out.push_back(r);
    return out;
}

inline void emit_report(const std::vector<BenchRecord>& records, const std::string& csv_path,
                        std::ostream& summary) {
    if (records.empty()) throw InputError("bench report: no records to emit");
    std::ofstream out(csv_path);
    if (!out) throw IoError("cannot open bench csv for writing: " + csv_path);
    out << "model,n,params,flops,wall_ms,alloc_bytes\n";
    char buf[256];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof(buf), "%s,%d,%lld,%lld,%.17g,%lld\n", r.model.c_str(), r.n,
                      r.params, r.flops, r.wall_ms, r.alloc_bytes);
        out << buf;
    }
    if (!out) throw IoError("write failure on bench csv: " + csv_path);

    for (const std::string& model : {std::string("grf"), std::string("pairwise")}) {
        auto rows = records_for(records, model);
        if (rows.size() < 3) continue;
        std::vector<double> ns, params, flops, wall;
        for (const auto& r : rows) {
            ns.push_back(r.n);
            params.push_back(double(r.params));
            flops.push_back(double(r.flops));
            wall.push_back(r.wall_ms);
        }
        const QuadraticFit pf = fit_quadratic(ns, params);
        const QuadraticFit ff = fit_quadratic(ns, flops);
        const QuadraticFit wf = fit_quadratic(ns, wall);
        summary << model << " params fit: a=" << pf.a << " b=" << pf.b << " c=" << pf.c
                << " (linear R2=" << pf.linear_r2 << ")\n";
        summary << model << " flops  fit: a=" << ff.a << " b=" << ff.b << " c=" << ff.c
                << " (linear R2=" << ff.linear_r2 << ")\n";
        summary << model << " wall   fit: a=" << wf.a << " b=" << wf.b << " c=" << wf.c
                << " ms\n";
        const double ratio = rows.back().wall_ms / rows.front().wall_ms;
        summary << model << " wall(n=" << rows.back().n << ")/wall(n=" << rows.front().n
                << ") = " << ratio << "\n";
    }
}

inline std::vector<BenchRecord> parse_report(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw IoError("cannot open bench csv: " + csv_path);
    std::string line;
    if (!std::getline(in, line) || line != "model,n,params,flops,wall_ms,alloc_bytes")
        throw IoError("bench csv has an unexpected header: " + csv_path);
    std::vector<BenchRecord> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        BenchRecord r;
        std::string field;
        if (!std::getline(row, r.model, ',')) throw IoError("bench csv: bad row: " + line);
        auto next = [&](const char* what) {
            if (!std::getline(row, field, ','))
                throw IoError(std::string("bench csv: missing ") + what + ": " + line);
            return field;
        };
        r.n = std::stoi(next("n"));
        r.params = std::stoll(next("params"));
        r.flops = std::stoll(next("flops"));
        r.wall_ms = std::stod(next("wall_ms"));
        r.alloc_bytes = std::stoll(next("alloc_bytes"));
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace grf
