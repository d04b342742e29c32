#pragma once

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "grf/data.hpp"
#include "grf/metrics.hpp"
#include "grf/nn.hpp"
#include "grf/optim.hpp"

namespace grf {

struct EpochRow {
    int epoch = 0;
    double train_loss = 0.0;
    Metrics val;
    double lr = 0.0;
};

struct TrainReport {
    std::vector<EpochRow> rows;
    int best_epoch = 0;       // 1-based epoch whose weights were restored
    double best_val_mae = 0.0;
    int stop_epoch = 0;       // last epoch actually run
    Metrics test;
};

// Runs the model over a whole split in eval mode and returns predictions.
template <typename S, typename Model>
Tensor<S> predict_split(const Model& model, const ModalityBatch<S>& split, int batch_size) {
    const int64_t n = split.size();
    Tensor<S> preds({static_cast<int>(n)});
    Mode eval_mode;
    for (int64_t lo = 0; lo < n; lo += batch_size) {
        const int64_t hi = std::min(n, lo + batch_size);
        std::vector<int64_t> rows(static_cast<size_t>(hi - lo));
        std::iota(rows.begin(), rows.end(), lo);
        ModalityBatch<S> mb = split.gather(rows);
        Tape<S> tape;
        Var out = model.forward(tape, mb, eval_mode);
        const Tensor<S>& v = tape.value(out);
        for (int64_t i = lo; i < hi; ++i) preds[i] = v[i - lo];
    }
    return preds;
}

// Mean absolute error as a differentiable scalar: mean(|pred - y|).
template <typename S>
Var l1_loss(Tape<S>& t, Var pred, const Tensor<S>& y) {
    if (!t.value(pred).same_shape(y))
        throw DimError("loss: prediction/label shapes disagree, " +
                       format_shape(t.value(pred).shape()) + " vs " + format_shape(y.shape()));
    Tensor<S> neg_y(y.shape());
    for (int64_t i = 0; i < y.numel(); ++i) neg_y[i] = -y[i];
    return t.mean_all(t.abs(t.add_const(pred, neg_y)));
}

// The full protocol: AdamW with cosine annealing and gradient clipping,
// early stopping on validation MAE, best-epoch weights restored at the end.
// Deterministic for a fixed seed and config.
template <typename S, typename Model>
TrainReport train_loop(Model& model, const SyntheticData<S>& data, const TrainConfig& tc) {
    tc.validate();
    const int64_t n_train = data.train.size();
    if (n_train < 1) throw ConfigError("training split is empty");
    if (data.val.size() < 2) throw ConfigError("validation split needs at least two samples");

    Rng rng(tc.seed);
    AdamW<S> opt(model.params(), tc);
    const long long batches_per_epoch = (n_train + tc.batch_size - 1) / tc.batch_size;
    const long long total_steps = batches_per_epoch * tc.epochs;

    std::vector<int64_t> order(static_cast<size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);

    TrainReport report;
    std::vector<Tensor<S>> best_values;
    double best_mae = std::numeric_limits<double>::infinity();
    int best_epoch = 0, since_improve = 0;
    long long step = 0;

    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        // Fisher-Yates driven by the run RNG keeps the whole loop seeded.
        for (int64_t i = n_train - 1; i > 0; --i) {
            const int64_t j = static_cast<int64_t>(rng.next_u64() % uint64_t(i + 1));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }

        double loss_sum = 0.0;
        int64_t seen = 0;
        Mode train_mode{true, &rng};
        for (int64_t lo = 0; lo < n_train; lo += tc.batch_size) {
            const int64_t hi = std::min(n_train, lo + tc.batch_size);
            std::vector<int64_t> rows(order.begin() + lo, order.begin() + hi);
            ModalityBatch<S> mb = data.train.gather(rows);

            Tape<S> tape;
            Var pred = model.forward(tape, mb, train_mode);
            Var loss = l1_loss(tape, pred, mb.labels);
            const double loss_value = double(tape.value(loss)[0]);
            if (!std::isfinite(loss_value))
                throw DivergenceError("training loss diverged at epoch " +
                                      std::to_string(epoch));
            loss_sum += loss_value * double(hi - lo);
            seen += hi - lo;

            model.params().zero_grads();
            tape.backward(loss);
            clip_grad_norm(model.params(), tc.clip_norm);
            opt.step(cosine_lr(step, total_steps, tc.lr_max, tc.lr_min));
            ++step;
        }

        EpochRow row;
        row.epoch = epoch;
        row.train_loss = loss_sum / double(seen);
        row.lr = cosine_lr(step - 1, total_steps, tc.lr_max, tc.lr_min);
        Tensor<S> val_pred = predict_split(model, data.val, tc.batch_size);
        row.val = compute_metrics(val_pred, data.val.labels);
        report.rows.push_back(row);

        if (row.val.mae < best_mae) {
            best_mae = row.val.mae;
            best_epoch = epoch;
            since_improve = 0;
            best_values.clear();
            for (const auto& p : model.params().all()) best_values.push_back(p->value);
        } else {
            ++since_improve;
        }
        report.stop_epoch = epoch;
        if (since_improve >= tc.patience) break;
    }

    const auto& params = model.params().all();
    for (size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
    report.best_epoch = best_epoch;
    report.best_val_mae = best_mae;

    if (data.test.size() >= 2) {
        Tensor<S> test_pred = predict_split(model, data.test, tc.batch_size);
        report.test = compute_metrics(test_pred, data.test.labels);
    }
    return report;
}

// Report CSV, one row per epoch. Corr prints as "undef" when degenerate.
inline void write_report_csv(const TrainReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open report for writing: " + path);
    out << "epoch,train_loss,val_mae,val_corr,val_acc2,val_acc7,val_f1,lr\n";
    char buf[256];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%s,%.9g,%.9g,%.9g,%.9g\n", r.epoch,
                      r.train_loss, r.val.mae, r.val.corr_str().c_str(), r.val.acc2, r.val.acc7,
                      r.val.f1, r.lr);
        out << buf;
    }
    if (!out) throw IoError("write failure on report: " + path);
}

}  // namespace grf
