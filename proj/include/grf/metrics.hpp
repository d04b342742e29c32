#pragma once

#include <cmath>
#include <string>

#include "grf/tensor.hpp"

namespace grf {

// The five evaluation numbers reported per epoch and at test time. Corr can
// be undefined (constant predictions or labels); corr_defined records that
// instead of letting a NaN escape into reports.
struct Metrics {
    double mae = 0.0;
    double corr = 0.0;
    bool corr_defined = false;
    double acc2 = 0.0;
    double acc7 = 0.0;
    double f1 = 0.0;

    std::string corr_str() const {
        if (!corr_defined) return "undef";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6f", corr);
        return buf;
    }
};

namespace detail {

inline int round_clamp7(double v) {
    int r = static_cast<int>(std::lround(v));
    if (r < -3) r = -3;
    if (r > 3) r = 3;
    return r;
}

}  // namespace detail

// MAE, Pearson correlation, binary accuracy at threshold 0 (true zeros are
// excluded), 7-class accuracy after round-and-clamp to [-3, 3], and macro
// F1 over the two sign classes (a class absent from both truth and
// prediction is skipped from the macro average).
template <typename S>
Metrics compute_metrics(const Tensor<S>& pred, const Tensor<S>& y) {
    if (!pred.same_shape(y))
        throw DimError("metrics: prediction/label shapes disagree, " +
                       format_shape(pred.shape()) + " vs " + format_shape(y.shape()));
    const int64_t n = pred.numel();
    if (n < 2) throw DimError("metrics: need at least two samples");

    Metrics m;

    double abs_sum = 0.0;
    for (int64_t i = 0; i < n; ++i) abs_sum += std::abs(double(pred[i]) - double(y[i]));
    m.mae = abs_sum / double(n);

    double mp = 0.0, my = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        mp += double(pred[i]);
        my += double(y[i]);
    }
    mp /= double(n);
    my /= double(n);
    double sp = 0.0, sy = 0.0, sxy = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double dp = double(pred[i]) - mp, dy = double(y[i]) - my;
        sp += dp * dp;
        sy += dy * dy;
        sxy += dp * dy;
    }
    if (sp > 0.0 && sy > 0.0) {
        m.corr = sxy / std::sqrt(sp * sy);
        m.corr_defined = true;
    }

    int64_t bin_total = 0, bin_correct = 0;
    int64_t tp[2] = {0, 0}, fp[2] = {0, 0}, fn[2] = {0, 0};  // class 0: neg, 1: pos
    for (int64_t i = 0; i < n; ++i) {
        if (y[i] == S(0)) continue;
        ++bin_total;
        const int truth = y[i] > S(0) ? 1 : 0;
        const int guess = pred[i] > S(0) ? 1 : 0;
        if (truth == guess) {
            ++bin_correct;
            ++tp[truth];
        } else {
            ++fn[truth];
            ++fp[guess];
        }
    }
    m.acc2 = bin_total > 0 ? double(bin_correct) / double(bin_total) : 0.0;

    double f1_sum = 0.0;
    int f1_classes = 0;
    for (int c = 0; c < 2; ++c) {
        if (tp[c] + fp[c] + fn[c] == 0) continue;  // class never appeared
        ++f1_classes;
        const double denom = 2.0 * double(tp[c]) + double(fp[c]) + double(fn[c]);
        f1_sum += denom > 0.0 ? 2.0 * double(tp[c]) / denom : 0.0;
    }
    m.f1 = f1_classes > 0 ? f1_sum / f1_classes : 0.0;

    int64_t acc7_correct = 0;
    for (int64_t i = 0; i < n; ++i)
        if (detail::round_clamp7(double(pred[i])) == detail::round_clamp7(double(y[i])))
            ++acc7_correct;
    m.acc7 = double(acc7_correct) / double(n);

    return m;
}

}  // namespace grf
