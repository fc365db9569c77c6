#include "tpinv/editing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tpinv/checkpoint.hpp"

namespace tpinv {

using namespace ops;

EditDirection fit_direction(const Tensor& latents, const std::vector<int>& labels,
                            const Config& cfg, const std::string& attribute) {
    if (latents.rank() != 2) throw std::invalid_argument("fit_direction: latents must be [n,d]");
    const int n = latents.dim(0), d = latents.dim(1);
    if (static_cast<size_t>(n) != labels.size())
        throw std::invalid_argument("fit_direction: label count mismatch");
    if (n < 20) throw std::invalid_argument("fit_direction: need at least 20 samples");
    int pos = 0;
    for (int l : labels) pos += l ? 1 : 0;
    if (pos == 0 || pos == n)
        throw std::invalid_argument("fit_direction: both classes required");

    std::vector<Scalar> w(d, 0.0);
    Scalar b = 0.0;
    const Scalar lr = cfg.svm_lr, lam = cfg.svm_lambda;
    for (int epoch = 0; epoch < cfg.svm_epochs; ++epoch) {
        std::vector<Scalar> gw(d, 0.0);
        Scalar gb = 0.0;
        for (int i = 0; i < n; ++i) {
            const Scalar y = labels[i] ? 1.0 : -1.0;
            Scalar margin = b;
            for (int j = 0; j < d; ++j) margin += w[j] * latents.at(i, j);
            if (y * margin < 1.0) {
                for (int j = 0; j < d; ++j) gw[j] -= y * latents.at(i, j);
                gb -= y;
            }
        }
        for (int j = 0; j < d; ++j) w[j] -= lr * (2.0 * lam * w[j] + gw[j] / n);
        b -= lr * gb / n;
    }

    Scalar norm = 0;
    for (Scalar v : w) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw std::runtime_error("fit_direction: degenerate direction");

    EditDirection dir;
    dir.attribute = attribute;
    dir.direction = Tensor({d});
    for (int j = 0; j < d; ++j) dir.direction[j] = w[j] / norm;

    int correct = 0;
    Scalar margin_sum = 0;
    for (int i = 0; i < n; ++i) {
        const Scalar y = labels[i] ? 1.0 : -1.0;
        Scalar m = b;
        for (int j = 0; j < d; ++j) m += w[j] * latents.at(i, j);
        if (y * m > 0) ++correct;
        margin_sum += y * m / norm;
    }
    dir.train_accuracy = static_cast<Scalar>(correct) / n;
    dir.mean_margin = margin_sum / n;
    return dir;
}

void quantile_split(const std::vector<Scalar>& values, Scalar q,
                    std::vector<size_t>* idx, std::vector<int>* labels) {
    if (q <= 0 || q > 0.5) throw std::invalid_argument("quantile_split: q in (0, 0.5]");
    const size_t n = values.size();
    const size_t take = static_cast<size_t>(std::floor(q * n));
    if (take == 0) throw std::invalid_argument("quantile_split: too few values");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return values[a] < values[b]; });

    std::vector<std::pair<size_t, int>> picked;
    for (size_t i = 0; i < take; ++i) picked.push_back({order[i], 0});
    for (size_t i = 0; i < take; ++i) picked.push_back({order[n - 1 - i], 1});
    std::sort(picked.begin(), picked.end());

    idx->clear();
    labels->clear();
    for (const auto& p : picked) {
        idx->push_back(p.first);
        labels->push_back(p.second);
    }
}

Tensor apply_edit(const Tensor& wp, const EditDirection& dir, Scalar strength,
                  const std::vector<int>& rows) {
    if (wp.rank() != 2 || wp.dim(1) != dir.direction.dim(0))
        throw std::invalid_argument("apply_edit: shape mismatch");
    Tensor out = wp;
    const int L = wp.dim(0), d = wp.dim(1);
    auto shift_row = [&](int r) {
        for (int j = 0; j < d; ++j) out.at(r, j) += strength * dir.direction[j];
    };
    if (rows.empty()) {
        for (int r = 0; r < L; ++r) shift_row(r);
    } else {
        for (int r : rows) {
            if (r < 0 || r >= L) throw std::invalid_argument("apply_edit: row out of range");
            shift_row(r);
        }
    }
    return out;
}

std::vector<Var> wplus_rows(const Tensor& wp) {
    if (wp.rank() != 2) throw std::invalid_argument("wplus_rows: expected [L,d]");
    std::vector<Var> rows;
    const int L = wp.dim(0), d = wp.dim(1);
    for (int r = 0; r < L; ++r) {
        Tensor row({1, d});
        for (int j = 0; j < d; ++j) row.at(0, j) = wp.at(r, j);
        rows.push_back(constant(row));
    }
    return rows;
}

Tensor edit_features(const Tensor& fstar, const Tensor& wp, const Tensor& wp_hat,
                     const Generator& gen) {
    if (!wp.same_shape(wp_hat)) throw std::invalid_argument("edit_features: w+ shape mismatch");
    NoGradGuard ng;
    const Tensor f_hat = gen.forward(wplus_rows(wp_hat)).tapped->value;
    const Tensor f_w = gen.forward(wplus_rows(wp)).tapped->value;
    if (!fstar.same_shape(f_hat))
        throw std::invalid_argument("edit_features: tapped shape mismatch");
    Tensor out = fstar;
    for (size_t i = 0; i < out.size(); ++i) out[i] += f_hat[i] - f_w[i];
    return out;
}

void save_direction(const EditDirection& dir, const std::string& path) {
    Checkpoint ck;
    ck.put("direction/vec", dir.direction, CkptDtype::F64);
    Tensor stats({2});
    stats[0] = dir.train_accuracy;
    stats[1] = dir.mean_margin;
    ck.put("direction/stats", stats, CkptDtype::F64);
    ck.put_string("direction/attribute", dir.attribute);
    ck.save(path);
}

EditDirection load_direction(const std::string& path) {
    const Checkpoint ck = Checkpoint::load(path);
    EditDirection dir;
    dir.direction = ck.get("direction/vec");
    const Tensor stats = ck.get("direction/stats");
    dir.train_accuracy = stats[0];
    dir.mean_margin = stats[1];
    dir.attribute = ck.get_string("direction/attribute");
    return dir;
}

}  // namespace tpinv
