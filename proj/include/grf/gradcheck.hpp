#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "grf/param.hpp"

namespace grf {

struct GradCheckReport {
    double worst_rel = 0.0;     // max relative error over all checked entries
    std::string worst_param;    // parameter holding the worst entry
    int64_t worst_index = -1;   // flat index within that parameter
    long long checked = 0;      // number of scalar entries compared

    bool passed(double tol) const { return worst_rel < tol; }
};

// Compares analytic gradients against central finite differences.
//
// eval_loss    runs a pure forward pass with the store's current values
// compute_grads runs forward + backward and accumulates into param grads
//
// Relative error is |a - n| / max(|a|, |n|, 1) so tiny gradients are judged
// on an absolute scale instead of blowing up the ratio.
template <typename S>
GradCheckReport gradient_check(const std::function<S()>& eval_loss,
                               const std::function<void()>& compute_grads,
                               ParamStore<S>& params, double eps) {
    params.zero_grads();
    compute_grads();

    GradCheckReport report;
    for (const auto& p : params.all()) {
        for (int64_t i = 0; i < p->value.numel(); ++i) {
            const S saved = p->value[i];
            p->value[i] = saved + static_cast<S>(eps);
            const double lp = static_cast<double>(eval_loss());
            p->value[i] = saved - static_cast<S>(eps);
            const double lm = static_cast<double>(eval_loss());
            p->value[i] = saved;

            const double numeric = (lp - lm) / (2.0 * eps);
            const double analytic = static_cast<double>(p->grad[i]);
            const double rel = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), 1.0});
            ++report.checked;
            if (rel > report.worst_rel) {
                report.worst_rel = rel;
                report.worst_param = p->name;
                report.worst_index = i;
            }
        }
    }
    return report;
}

}  // namespace grf
