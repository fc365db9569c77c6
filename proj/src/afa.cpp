#include "tpinv/afa.hpp"

#include <cmath>
#include <stdexcept>

namespace tpinv {

using namespace ops;

Var scaled_dot_attention(const Var& q, const Var& k, const Var& v) {
    if (q->value.dim(1) != k->value.dim(1))
        throw std::invalid_argument("attention: q/k dim mismatch");
    if (k->value.dim(0) != v->value.dim(0))
        throw std::invalid_argument("attention: k/v token count mismatch");
    const Scalar s = 1.0 / std::sqrt(static_cast<Scalar>(q->value.dim(1)));
    const Var weights = softmax_rows(scale(matmul(q, transpose(k)), s));
    return matmul(weights, v);
}

Var film_modulate(const Var& f, const Var& gamma, const Var& beta) {
    if (!f->value.same_shape(gamma->value) || !f->value.same_shape(beta->value))
        throw std::invalid_argument("film: shape mismatch");
    return add(mul(gamma, f), beta);
}

Afa::Afa(int input_res_, int tap_res_, int tap_channels_, int afa_channels_,
         uint64_t seed)
    : input_res(input_res_),
      tap_res(tap_res_),
      tap_channels(tap_channels_),
      afa_channels(afa_channels_) {
    if (input_res < tap_res || tap_res < 2)
        throw std::invalid_argument("afa: bad resolutions");
    int r = input_res;
    int steps = 0;
    while (r > tap_res) {
        if (r % 2 != 0) throw std::invalid_argument("afa: input_res must halve to tap_res");
        r /= 2;
        ++steps;
    }

    Rng rng(derive_seed(seed, "afa"));
    const int cf = afa_channels;
    int ci = 3;
    for (int i = 0; i < steps; ++i) {
        const std::string p = "res" + std::to_string(i + 1);
        params.add(p + "_w", fan_in_init(rng, {cf, ci, 3, 3}, std::sqrt(2.0)));
        params.add(p + "_b", Tensor::zeros({cf}));
        ci = cf;
    }
    params.add("resout_w", fan_in_init(rng, {cf, cf, 3, 3}, std::sqrt(2.0)));
    params.add("resout_b", Tensor::zeros({cf}));

    const int hw = tap_res * tap_res;
    params.add("wq", fan_in_init(rng, {tap_channels, cf}, 1.0));
    params.add("wk", fan_in_init(rng, {cf, cf}, 1.0));
    params.add("wv", fan_in_init(rng, {cf, cf}, 1.0));
    params.add("pos_f", rng.normal_tensor({hw, tap_channels}, 0.02));
    params.add("pos_d", rng.normal_tensor({hw, cf}, 0.02));

    params.add("gamma_w", Tensor::zeros({tap_channels, cf, 3, 3}));
    params.add("gamma_b", Tensor::full({tap_channels}, 1.0));
    params.add("beta_w", Tensor::zeros({tap_channels, cf, 3, 3}));
    params.add("beta_b", Tensor::zeros({tap_channels}));
}

Var Afa::residual_features(const Var& delta) const {
    if (delta->value.rank() != 3 || delta->value.dim(0) != 3 ||
        delta->value.dim(1) != input_res || delta->value.dim(2) != input_res)
        throw std::invalid_argument("afa: residual image shape mismatch");
    Var x = delta;
    int i = 1;
    int r = input_res;
    while (r > tap_res) {
        const std::string p = "res" + std::to_string(i++);
        x = leaky_relu(
            add_bias_chw(conv2d(x, params.find(p + "_w"), 2, 1), params.find(p + "_b")),
            0.2);
        r /= 2;
    }
    return add_bias_chw(conv2d(x, params.find("resout_w"), 1, 1),
                        params.find("resout_b"));
}

Var Afa::align(const Var& f, const Var& f_delta) const {
    if (f->value.dim(1) != tap_res || f_delta->value.dim(1) != tap_res)
        throw std::invalid_argument("afa: align expects tapped-resolution maps");
    const int hw = tap_res * tap_res;
    const Var tok_f = transpose(reshape(f, {tap_channels, hw}));
    const Var tok_d = transpose(reshape(f_delta, {afa_channels, hw}));
    const Var q = matmul(add(tok_f, params.find("pos_f")), params.find("wq"));
    const Var k = matmul(add(tok_d, params.find("pos_d")), params.find("wk"));
    const Var v = matmul(tok_d, params.find("wv"));
    const Var out = scaled_dot_attention(q, k, v);  // [hw, cf]
    return reshape(transpose(out), {afa_channels, tap_res, tap_res});
}

AfaOut Afa::film(const Var& f, const Var& f_align) const {
    AfaOut out;
    out.gamma = add_bias_chw(conv2d(f_align, params.find("gamma_w"), 1, 1),
                             params.find("gamma_b"));
    out.beta = add_bias_chw(conv2d(f_align, params.find("beta_w"), 1, 1),
                            params.find("beta_b"));
    out.fstar = film_modulate(f, out.gamma, out.beta);
    out.delta_f = sub(out.fstar, f);
    return out;
}

AfaOut Afa::forward(const Tensor& image, const Tensor& image_wplus, const Var& f) const {
    if (!image.same_shape(image_wplus))
        throw std::invalid_argument("afa: image shape mismatch");
    Tensor delta = image;
    for (size_t i = 0; i < delta.size(); ++i) delta[i] = image[i] - image_wplus[i];
    const Var fd = residual_features(constant(delta));
    return film(f, align(f, fd));
}

void Afa::save(Checkpoint& ck) const { params.save_to(ck, "afa/"); }

void Afa::load(const Checkpoint& ck) { params.load_from(ck, "afa/"); }

}  // namespace tpinv
