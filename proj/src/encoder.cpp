#include "tpinv/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace tpinv {

using namespace ops;

StageSchedule::StageSchedule(int c, int m) : coarse_until(c), mid_until(m) {
    if (c < 0 || m < c) throw std::invalid_argument("stage thresholds must be nondecreasing");
}

std::vector<Var> assemble_wplus(const Var& w0, const std::vector<Var>& deltas,
                                const std::vector<Stage>& row_stage,
                                const Tensor& w_avg, Stage active) {
    if (deltas.size() != row_stage.size())
        throw std::invalid_argument("delta groups must cover rows 1..L-1");
    const int d = w_avg.dim(0);
    Var base = add(constant(w_avg.reshaped({1, d})), w0);
    std::vector<Var> rows;
    rows.push_back(base);
    for (size_t i = 0; i < deltas.size(); ++i) {
        if (static_cast<int>(row_stage[i]) <= static_cast<int>(active))
            rows.push_back(add(base, deltas[i]));
        else
            rows.push_back(base);
    }
    return rows;
}

Var w_delta_norm(const WPlusGraph& wp) {
    Var acc;
    for (size_t i = 1; i < wp.rows.size(); ++i) {
        Var term = sum_all(square(sub(wp.rows[i], wp.rows[0])));
        acc = acc ? add(acc, term) : term;
    }
    return sqrt_op(add_scalar(acc, 1e-12));
}

namespace {

int head_rows(int group, int n_layers) {
    // Partition of rows 1..L-1: coarse | mid | fine, sized like 2/2/3 for L=8.
    const int n = n_layers - 1;
    const int base = n / 3;
    if (group == 0) return base;
    if (group == 1) return base;
    return n - 2 * base;
}

}  // namespace

Encoder::Encoder(const Config& cfg, uint64_t seed)
    : d_w(cfg.d_w), n_layers(cfg.synth_layers), channels(cfg.enc_channels),
      input_res(cfg.render_res) {
    Rng rng(derive_seed(seed, "encoder_init"));
    const int C = channels;
    auto conv = [&](const std::string& name, int co, int ci) {
        params.add(name + "_w", fan_in_init(rng, {co, ci, 3, 3}, std::sqrt(2.0)));
        params.add(name + "_b", Tensor::zeros({co}));
    };
    conv("stem1", C, 3);
    conv("stem2", C, C);
    conv("down1", C, C);
    conv("ref1", C, C);
    conv("down2", C, C);
    conv("ref2", C, C);
    conv("down3", C, C);
    conv("ref3", C, C);

    auto attn_block = [&](const std::string& prefix, int tokens) {
        params.add(prefix + "/wq", fan_in_init(rng, {C, C}, 1.0));
        params.add(prefix + "/wk", fan_in_init(rng, {C, C}, 1.0));
        params.add(prefix + "/wv", fan_in_init(rng, {C, C}, 1.0));
        params.add(prefix + "/wo", fan_in_init(rng, {C, C}, 0.1));
        params.add(prefix + "/bo", Tensor::zeros({C}));
        params.add(prefix + "/pos", normal_init(rng, {tokens, C}, 0.02));
    };
    attn_block("sa8", 64);
    attn_block("sa4", 16);

    params.add("w0_w", fan_in_init(rng, {C, d_w}, 1.0));
    params.add("w0_b", Tensor::zeros({d_w}));

    const int level_hw[3] = {8 * 8, 16 * 16, 32 * 32};
    const char* names[3] = {"head_coarse", "head_mid", "head_fine"};
    for (int g = 0; g < 3; ++g) {
        const std::string p = names[g];
        const int n = head_rows(g, n_layers);
        params.add(p + "/wq", fan_in_init(rng, {C, d_w}, 1.0));
        params.add(p + "/wk", fan_in_init(rng, {C, d_w}, 1.0));
        params.add(p + "/wv", fan_in_init(rng, {C, d_w}, 1.0));
        params.add(p + "/wo", fan_in_init(rng, {d_w, d_w}, 0.1));
        params.add(p + "/bo", Tensor::zeros({d_w}));
        params.add(p + "/qtok", normal_init(rng, {n, d_w}, 0.02));
        params.add(p + "/pos", normal_init(rng, {level_hw[g], C}, 0.02));
    }

    row_stages_.clear();
    for (int g = 0; g < 3; ++g)
        for (int i = 0; i < head_rows(g, n_layers); ++i)
            row_stages_.push_back(static_cast<Stage>(g));

    w_avg = Tensor::zeros({d_w});
}

Var Encoder::self_attention(const Var& x, const std::string& prefix) const {
    const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
    Var t = transpose(reshape(x, {C, H * W}));  // [HW,C]
    t = add(t, params.find(prefix + "/pos"));
    Var q = matmul(t, params.find(prefix + "/wq"));
    Var k = matmul(t, params.find(prefix + "/wk"));
    Var v = matmul(t, params.find(prefix + "/wv"));
    Var attn = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(Scalar(C))));
    Var o = add_rowvec(matmul(matmul(attn, v), params.find(prefix + "/wo")),
                       params.find(prefix + "/bo"));
    return add(x, reshape(transpose(o), {C, H, W}));
}

Encoder::Pyramid Encoder::backbone(const Var& image) const {
    if (image->value.shape() != std::vector<int>{3, input_res, input_res})
        throw std::invalid_argument("encoder expects a [3," + std::to_string(input_res) +
                                    "," + std::to_string(input_res) + "] image");
    auto block = [&](const Var& x, const std::string& name, int stride) {
        Var y = conv2d(x, params.find(name + "_w"), stride, 1);
        return leaky_relu(add_bias_chw(y, params.find(name + "_b")), 0.2);
    };
    Pyramid p;
    Var x = block(image, "stem1", 2);
    p.fine = block(x, "stem2", 1);               // [C,32,32]
    x = block(p.fine, "down1", 2);
    p.mid = block(x, "ref1", 1);                 // [C,16,16]
    x = block(p.mid, "down2", 2);
    x = block(x, "ref2", 1);
    p.coarse = self_attention(x, "sa8");         // [C,8,8]
    x = block(p.coarse, "down3", 2);
    x = block(x, "ref3", 1);
    p.query = self_attention(x, "sa4");          // [C,4,4]
    return p;
}

std::vector<Var> Encoder::head_deltas(const std::string& prefix, const Var& level,
                                      const Var& query, int n_rows) const {
    const int C = level->value.dim(0), H = level->value.dim(1), W = level->value.dim(2);
    Var t = transpose(reshape(level, {C, H * W}));  // [HW,C]
    t = add(t, params.find(prefix + "/pos"));
    Var k = matmul(t, params.find(prefix + "/wk"));  // [HW,d_w]
    Var v = matmul(t, params.find(prefix + "/wv"));
    Var qc = matmul(global_avg_pool(query), params.find(prefix + "/wq"));  // [1,d_w]
    Var q = add_rowvec(params.find(prefix + "/qtok"), reshape(qc, {d_w}));
    Var attn = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(Scalar(d_w))));
    Var out = add_rowvec(matmul(matmul(attn, v), params.find(prefix + "/wo")),
                         params.find(prefix + "/bo"));  // [n,d_w]
    std::vector<Var> rows;
    for (int i = 0; i < n_rows; ++i) rows.push_back(get_row(out, i));
    return rows;
}

WPlusGraph Encoder::encode(const Var& image, Stage active) const {
    Pyramid p = backbone(image);
    WPlusGraph wp;
    wp.w0 = add_rowvec(matmul(global_avg_pool(p.query), params.find("w0_w")),
                       params.find("w0_b"));
    const Var levels[3] = {p.coarse, p.mid, p.fine};
    const char* names[3] = {"head_coarse", "head_mid", "head_fine"};
    for (int g = 0; g < 3; ++g) {
        std::vector<Var> d = head_deltas(names[g], levels[g], p.query,
                                         head_rows(g, n_layers));
        wp.deltas.insert(wp.deltas.end(), d.begin(), d.end());
    }
    wp.rows = assemble_wplus(wp.w0, wp.deltas, row_stages_, w_avg, active);
    return wp;
}

WPlusGraph Encoder::encode(const Tensor& image, Stage active) const {
    return encode(constant(image), active);
}

void Encoder::save(Checkpoint& ck) const {
    params.save_to(ck, "encoder/");
    ck.put("encoder/w_avg", w_avg, CkptDtype::F64);
}

void Encoder::load(const Checkpoint& ck) {
    params.load_from(ck, "encoder/");
    w_avg = ck.get("encoder/w_avg");
    if (w_avg.size() != static_cast<size_t>(d_w))
        throw std::runtime_error("encoder/w_avg has wrong size");
}

}  // namespace tpinv
