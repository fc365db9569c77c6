#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "tpinv/autodiff.hpp"

namespace tpinv {

struct GradCheckResult {
    Scalar max_abs_err = 0;
    Scalar max_rel_err = 0;
    int worst_index = -1;
    bool ok(Scalar tol = 1e-6) const { return max_rel_err < tol; }
};

// Central-difference check of d(loss)/d(param) against the analytic gradient.
// `build` must construct a fresh scalar graph from the given parameter node.
inline GradCheckResult gradcheck(Var param,
                                 const std::function<Var(const Var&)>& build,
                                 Scalar h = 1e-5) {
    Var loss = build(param);
    backward(loss);
    Tensor analytic = param->grad.empty() ? Tensor::zeros(param->value.shape())
                                          : param->grad;
    GradCheckResult res;
    const int n = param->value.size();
    for (int i = 0; i < n; ++i) {
        const Scalar orig = param->value[i];
        param->value[i] = orig + h;
        Scalar fp;
        {
            NoGradGuard ng;
            fp = build(param)->value[0];
        }
        param->value[i] = orig - h;
        Scalar fm;
        {
            NoGradGuard ng;
            fm = build(param)->value[0];
        }
        param->value[i] = orig;
        const Scalar numeric = (fp - fm) / (2 * h);
        const Scalar abs_err = std::fabs(numeric - analytic[i]);
        const Scalar rel_err =
            abs_err / std::max({std::fabs(numeric), std::fabs(analytic[i]), Scalar(1e-4)});
        if (rel_err > res.max_rel_err) {
            res.max_rel_err = rel_err;
            res.worst_index = i;
        }
        res.max_abs_err = std::max(res.max_abs_err, abs_err);
    }
    return res;
}

}  // namespace tpinv
