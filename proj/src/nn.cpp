#include "tpinv/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace tpinv {

Var ParamStore::add(const std::string& name, Tensor init) {
    for (const auto& [n, v] : items_)
        if (n == name) throw std::runtime_error("duplicate parameter: " + name);
    Var p = make_param(std::move(init));
    items_.push_back({name, p});
    return p;
}

Var ParamStore::find(const std::string& name) const {
    for (const auto& [n, v] : items_)
        if (n == name) return v;
    throw std::runtime_error("parameter not found: " + name);
}

std::vector<Var> ParamStore::vars() const {
    std::vector<Var> out;
    out.reserve(items_.size());
    for (const auto& [n, v] : items_) out.push_back(v);
    return out;
}

void ParamStore::zero_grads() {
    for (auto& [n, v] : items_) v->grad = Tensor();
}

void ParamStore::save_to(Checkpoint& ck, const std::string& prefix) const {
    for (const auto& [n, v] : items_) ck.put(prefix + n, v->value, CkptDtype::F64);
}

void ParamStore::load_from(const Checkpoint& ck, const std::string& prefix) {
    for (auto& [n, v] : items_) {
        const Tensor& t = ck.get(prefix + n);
        if (!t.same_shape(v->value))
            throw std::runtime_error("checkpoint shape mismatch for " + prefix + n +
                                     ": " + t.shape_str() + " vs " +
                                     v->value.shape_str());
        v->value = t;
        v->grad = Tensor();
    }
}

Adam::Adam(std::vector<Var> params, Scalar lr_in, Scalar beta1, Scalar beta2, Scalar eps)
    : lr(lr_in), params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.push_back(Tensor::zeros(p->value.shape()));
        v_.push_back(Tensor::zeros(p->value.shape()));
    }
}

void Adam::step() {
    ++t_;
    const Scalar bc1 = 1.0 - std::pow(beta1_, static_cast<Scalar>(t_));
    const Scalar bc2 = 1.0 - std::pow(beta2_, static_cast<Scalar>(t_));
    for (size_t k = 0; k < params_.size(); ++k) {
        Var& p = params_[k];
        if (p->grad.empty()) continue;
        const int n = p->value.size();
        for (int i = 0; i < n; ++i) {
            const Scalar g = p->grad[i];
            m_[k][i] = beta1_ * m_[k][i] + (1 - beta1_) * g;
            v_[k][i] = beta2_ * v_[k][i] + (1 - beta2_) * g * g;
            const Scalar mhat = m_[k][i] / bc1;
            const Scalar vhat = v_[k][i] / bc2;
            p->value[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p->grad = Tensor();
}

Tensor normal_init(Rng& rng, std::vector<int> shape, Scalar stddev) {
    Tensor t(shape);
    for (int i = 0; i < t.size(); ++i) t[i] = rng.normal() * stddev;
    return t;
}

Tensor fan_in_init(Rng& rng, std::vector<int> shape, Scalar gain) {
    size_t fan_in = 1;
    for (size_t d = 1; d < shape.size(); ++d) fan_in *= static_cast<size_t>(shape[d]);
    const Scalar stddev = gain / std::sqrt(static_cast<Scalar>(fan_in));
    return normal_init(rng, std::move(shape), stddev);
}

}  // namespace tpinv
