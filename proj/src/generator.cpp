#include "tpinv/generator.hpp"

#include <stdexcept>

namespace tpinv {

using namespace ops;

Generator::Generator(const Config& cfg, uint64_t seed)
    : d_z(cfg.d_z),
      d_w(cfg.d_w),
      n_layers(cfg.synth_layers),
      tap_layer(cfg.tap_layer),
      plane_channels(cfg.plane_channels),
      plane_res(cfg.plane_res),
      synth_channels(cfg.synth_channels),
      mapping_layers_(cfg.mapping_layers),
      mapping_hidden_(cfg.mapping_hidden),
      base_res_(cfg.synth_base_res),
      decoder_hidden_(cfg.decoder_hidden) {
    layer_res.resize(n_layers);
    int r = base_res_;
    for (int i = 0; i < n_layers; ++i) {
        if (i > 0 && i % 2 == 1 && r < plane_res) r *= 2;
        layer_res[i] = r;
    }
    if (layer_res.back() != plane_res)
        throw std::invalid_argument("generator: layer schedule cannot reach plane_res");

    Rng rng(derive_seed(seed, "generator_init"));
    int in = d_z + 25;
    for (int k = 0; k < mapping_layers_; ++k) {
        const int out = k + 1 == mapping_layers_ ? d_w : mapping_hidden_;
        params.add("map/l" + std::to_string(k) + "_w",
                   fan_in_init(rng, {in, out}, std::sqrt(2.0)));
        params.add("map/l" + std::to_string(k) + "_b", Tensor::zeros({out}));
        in = out;
    }
    params.add("synth/const",
               normal_init(rng, {synth_channels, base_res_, base_res_}, 1.0));
    for (int i = 0; i < n_layers; ++i) {
        const std::string p = "synth/l" + std::to_string(i) + "/";
        params.add(p + "affine_w", fan_in_init(rng, {d_w, synth_channels}, 1.0));
        params.add(p + "affine_b", Tensor::full({synth_channels}, 1.0));
        params.add(p + "conv_w",
                   fan_in_init(rng, {synth_channels, synth_channels, 3, 3},
                               std::sqrt(2.0)));
        params.add(p + "conv_b", Tensor::zeros({synth_channels}));
    }
    for (const char* plane : {"xy", "xz", "yz"}) {
        params.add(std::string("synth/to_") + plane + "_w",
                   fan_in_init(rng, {plane_channels, synth_channels, 3, 3}, 1.0));
        params.add(std::string("synth/to_") + plane + "_b",
                   Tensor::zeros({plane_channels}));
    }
    decoder.w1 = params.add("dec/w1",
                            fan_in_init(rng, {plane_channels, decoder_hidden_},
                                        std::sqrt(2.0)));
    decoder.b1 = params.add("dec/b1", Tensor::zeros({decoder_hidden_}));
    decoder.w2 = params.add("dec/w2", fan_in_init(rng, {decoder_hidden_, 4}, 1.0));
    Tensor b2 = Tensor::zeros({4});
    b2[0] = -2.0;  // start mostly transparent
    decoder.b2 = params.add("dec/b2", b2);

    w_avg = Tensor::zeros({d_w});
}

Var Generator::map_latent_var(const Var& z_row, const Tensor& label) const {
    if (z_row->value.size() != static_cast<size_t>(d_z))
        throw std::invalid_argument("map_latent: z must have d_z entries");
    if (label.size() != 25)
        throw std::invalid_argument("map_latent: label must have 25 entries");
    Var h = concat_cols(reshape(z_row, {1, d_z}),
                        constant(label.reshaped({1, 25})));
    for (int k = 0; k < mapping_layers_; ++k) {
        const std::string p = "map/l" + std::to_string(k);
        h = add_rowvec(matmul(h, params.find(p + "_w")), params.find(p + "_b"));
        if (k + 1 < mapping_layers_) h = leaky_relu(h, 0.2);
    }
    return h;  // [1, d_w]
}

Tensor Generator::map_latent(const Tensor& z, const Tensor& label) const {
    NoGradGuard ng;
    return map_latent_var(constant(z), label)->value.reshaped({d_w});
}

Var Generator::synth_layer(const Var& x_in, int layer, const Var& w_row) const {
    const std::string p = "synth/l" + std::to_string(layer) + "/";
    Var x = x_in;
    if (layer > 0 && layer_res[layer] > layer_res[layer - 1]) x = upsample2x(x);
    Var style = reshape(add_rowvec(matmul(w_row, params.find(p + "affine_w")),
                                   params.find(p + "affine_b")),
                        {synth_channels});
    Var wmod = mul_weight_in(params.find(p + "conv_w"), style);
    Var demod = reciprocal(sqrt_op(add_scalar(sum_per_out(square(wmod)), 1e-8)));
    Var wfin = mul_weight_out(wmod, demod);
    x = add_bias_chw(conv2d(x, wfin, 1, 1), params.find(p + "conv_b"));
    return leaky_relu(x, 0.2);
}

Generator::SynthResult Generator::forward(const std::vector<Var>& wp_rows) const {
    if (static_cast<int>(wp_rows.size()) != n_layers)
        throw std::invalid_argument("generator_forward: need one w row per layer");
    Var x = params.find("synth/const");
    SynthResult res;
    for (int i = 0; i < n_layers; ++i) {
        x = synth_layer(x, i, wp_rows[i]);
        if (i == tap_layer) res.tapped = x;
    }
    res.tp.channels = plane_channels;
    res.tp.res = plane_res;
    res.tp.xy = add_bias_chw(conv2d(x, params.find("synth/to_xy_w"), 1, 1),
                             params.find("synth/to_xy_b"));
    res.tp.xz = add_bias_chw(conv2d(x, params.find("synth/to_xz_w"), 1, 1),
                             params.find("synth/to_xz_b"));
    res.tp.yz = add_bias_chw(conv2d(x, params.find("synth/to_yz_w"), 1, 1),
                             params.find("synth/to_yz_b"));
    return res;
}

TriPlaneVar Generator::resume_forward(const Var& fstar,
                                      const std::vector<Var>& tail_rows) const {
    const int tail = n_layers - 1 - tap_layer;
    if (static_cast<int>(tail_rows.size()) != tail)
        throw std::invalid_argument("resume_forward: wrong tail row count");
    const Tensor& f = fstar->value;
    if (f.rank() != 3 || f.dim(0) != synth_channels ||
        f.dim(1) != layer_res[tap_layer] || f.dim(2) != layer_res[tap_layer])
        throw std::invalid_argument("resume_forward: feature shape mismatch, got " +
                                    f.shape_str());
    Var x = fstar;
    for (int i = tap_layer + 1; i < n_layers; ++i)
        x = synth_layer(x, i, tail_rows[i - tap_layer - 1]);
    TriPlaneVar tp;
    tp.channels = plane_channels;
    tp.res = plane_res;
    tp.xy = add_bias_chw(conv2d(x, params.find("synth/to_xy_w"), 1, 1),
                         params.find("synth/to_xy_b"));
    tp.xz = add_bias_chw(conv2d(x, params.find("synth/to_xz_w"), 1, 1),
                         params.find("synth/to_xz_b"));
    tp.yz = add_bias_chw(conv2d(x, params.find("synth/to_yz_w"), 1, 1),
                         params.find("synth/to_yz_b"));
    return tp;
}

void Generator::compute_w_avg(int n, uint64_t seed, const Tensor& canonical_label) {
    if (n < 1) throw std::invalid_argument("compute_w_avg: n must be >= 1");
    NoGradGuard ng;
    Rng rng(derive_seed(seed, "w_avg"));
    Tensor acc = Tensor::zeros({d_w});
    Tensor z({d_z});
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < d_z; ++k) z[k] = rng.normal();
        const Tensor w = map_latent(z, canonical_label);
        for (int k = 0; k < d_w; ++k) acc[k] += w[k];
    }
    for (int k = 0; k < d_w; ++k) acc[k] /= n;
    w_avg = acc;
}

void Generator::save(Checkpoint& ck) const {
    params.save_to(ck, "gen/");
    ck.put("gen/w_avg", w_avg, CkptDtype::F64);
}

void Generator::load(const Checkpoint& ck) {
    params.load_from(ck, "gen/");
    const Tensor& wa = ck.get("gen/w_avg");
    if (wa.size() != static_cast<size_t>(d_w))
        throw std::runtime_error("gen/w_avg size mismatch");
    w_avg = wa.reshaped({d_w});
}

std::vector<Var> repeat_rows(const Var& w_row, int count) {
    std::vector<Var> rows(count);
    for (int i = 0; i < count; ++i) rows[i] = w_row;
    return rows;
}

}  // namespace tpinv
