#include "tpinv/losses.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace tpinv {

using namespace ops;

Tensor canonical_label(const Config& cfg) {
    return pose_label(canonical_pose(cfg.cam_distance),
                      Intrinsics{cfg.fx, cfg.fy, cfg.cx, cfg.cy});
}

LatentDiscriminator::LatentDiscriminator(int d, int h, int dep, uint64_t seed)
    : d_in(d), hidden(h), depth(dep) {
    Rng rng(derive_seed(seed, "disc_init"));
    int in = d;
    for (int k = 0; k < depth; ++k) {
        params.add("w" + std::to_string(k), fan_in_init(rng, {in, h}, std::sqrt(2.0)));
        params.add("b" + std::to_string(k), Tensor::zeros({h}));
        in = h;
    }
    params.add("w_out", fan_in_init(rng, {in, 1}, 1.0));
    params.add("b_out", Tensor::zeros({1}));
}

Var LatentDiscriminator::logits(const Var& x, bool detach_params) const {
    auto P = [&](const std::string& n) {
        Var v = params.find(n);
        return detach_params ? stopgrad(v) : v;
    };
    Var a = x;
    for (int k = 0; k < depth; ++k)
        a = leaky_relu(add_rowvec(matmul(a, P("w" + std::to_string(k))),
                                  P("b" + std::to_string(k))), 0.2);
    return add_rowvec(matmul(a, P("w_out")), P("b_out"));
}

LatentDiscriminator::WithGrad LatentDiscriminator::logits_with_input_grad(
    const Var& x) const {
    std::vector<Var> pre;  // pre-activations per hidden layer
    Var a = x;
    for (int k = 0; k < depth; ++k) {
        Var h = add_rowvec(matmul(a, params.find("w" + std::to_string(k))),
                           params.find("b" + std::to_string(k)));
        pre.push_back(h);
        a = leaky_relu(h, 0.2);
    }
    WithGrad out;
    out.logits = add_rowvec(matmul(a, params.find("w_out")), params.find("b_out"));

    // d logit / d input via the chain rule; leaky_relu_deriv is exact a.e.
    Var w_out = params.find("w_out");
    const int last = depth - 1;
    if (depth == 0) {
        Tensor ones({x->value.dim(0), 1});
        ones.fill(1.0);
        out.input_grad = matmul(constant(ones), transpose(w_out));
        return out;
    }
    Var gs = mul_rowvec(leaky_relu_deriv(pre[last], 0.2),
                        reshape(w_out, {hidden}));
    for (int k = last - 1; k >= 0; --k) {
        Var back = matmul(gs, transpose(params.find("w" + std::to_string(k + 1))));
        gs = mul(leaky_relu_deriv(pre[k], 0.2), back);
    }
    out.input_grad = matmul(gs, transpose(params.find("w0")));
    return out;
}

Tensor sample_canonical_w(const Generator& gen, int n, uint64_t seed,
                          const Config& cfg) {
    if (n < 1) throw std::invalid_argument("sample_canonical_w: n must be >= 1");
    Rng rng(derive_seed(seed, "canonical_w"));
    Tensor label = canonical_label(cfg);
    Tensor out({n, gen.d_w});
    for (int i = 0; i < n; ++i) {
        Tensor z = normal_init(rng, {gen.d_z}, 1.0);
        Tensor w = gen.map_latent(z, label);
        for (int j = 0; j < gen.d_w; ++j) out.at(i, j) = w[j];
    }
    return out;
}

DiscLossParts disc_loss(const LatentDiscriminator& disc, const Tensor& real,
                        const Tensor& fake, Scalar r1_gamma, bool r1_squared) {
    if (real.rank() != 2 || real.dim(0) < 1 || fake.rank() != 2 || fake.dim(0) < 1)
        throw std::invalid_argument("disc_loss: empty batch");

    auto wg = disc.logits_with_input_grad(constant(real));
    Var adv_real = mean_all(softplus(neg(wg.logits)));
    Var adv_fake = mean_all(softplus(disc.logits(constant(fake))));

    DiscLossParts parts;
    parts.adv = add(adv_real, adv_fake);
    Var sq = row_sum(square(wg.input_grad));  // [m]
    Var pen = r1_squared ? mean_all(sq)
                         : mean_all(sqrt_op(add_scalar(sq, 1e-24)));
    parts.r1 = scale(pen, r1_gamma / 2.0);
    parts.total = add(parts.adv, parts.r1);
    return parts;
}

Var enc_adv_loss(const LatentDiscriminator& disc, const Var& fake) {
    if (fake->value.rank() != 2 || fake->value.dim(0) < 1)
        throw std::invalid_argument("enc_adv_loss: empty batch");
    return mean_all(softplus(neg(disc.logits(fake, /*detach_params=*/true))));
}

DepthPrior estimate_depth_prior_with(const RenderProbe& probe, int n, Scalar tau,
                                     Scalar t_near, Scalar t_far) {
    if (n < 1) throw std::invalid_argument("estimate_depth_prior: n must be >= 1");
    Scalar sum = 0;
    long count = 0;
    for (int i = 0; i < n; ++i) {
        Tensor depth, opacity;
        probe(i, depth, opacity);
        if (!depth.same_shape(opacity))
            throw std::invalid_argument("estimate_depth_prior: shape mismatch");
        for (int p = 0; p < static_cast<int>(opacity.size()); ++p) {
            if (opacity[p] < tau) {
                sum += depth[p];
                ++count;
            }
        }
    }
    if (count == 0)
        throw std::runtime_error("estimate_depth_prior: no background pixels below tau");
    DepthPrior prior;
    prior.d_avg = sum / count;
    prior.sample_count = n;
    prior.tau = tau;
    if (prior.d_avg < t_near || prior.d_avg > t_far)
        throw std::runtime_error("estimate_depth_prior: degenerate average depth");
    return prior;
}

DepthPrior estimate_depth_prior(const Generator& gen, const Config& cfg, int n,
                                Scalar tau, uint64_t seed) {
    NoGradGuard ng;
    Rng rng(derive_seed(seed, "depth_prior"));
    Tensor label = canonical_label(cfg);
    CameraPose pose = canonical_pose(cfg.cam_distance);
    Intrinsics intr{cfg.fx, cfg.fy, cfg.cx, cfg.cy};
    RenderSettings rs;
    rs.samples_per_ray = cfg.train_samples_per_ray;
    rs.t_near = cfg.t_near;
    rs.t_far = cfg.t_far;
    const int res = cfg.train_render_res;

    auto probe = [&](int, Tensor& depth, Tensor& opacity) {
        Tensor z = normal_init(rng, {gen.d_z}, 1.0);
        Var w = constant(gen.map_latent(z, label).reshaped({1, gen.d_w}));
        auto syn = gen.forward(repeat_rows(w, gen.n_layers));
        RenderGraph g = render_triplane(syn.tp, gen.decoder, pose, intr, res, res, rs);
        depth = g.depth->value;
        opacity = g.opacity->value;
    };
    return estimate_depth_prior_with(probe, n, tau, cfg.t_near, cfg.t_far);
}

void save_depth_prior(const DepthPrior& p, const std::string& path) {
    Checkpoint ck;
    ck.put("prior/d_avg", Tensor::scalar(p.d_avg));
    ck.put("prior/sample_count", Tensor::scalar(static_cast<Scalar>(p.sample_count)));
    ck.put("prior/tau", Tensor::scalar(p.tau));
    ck.save(path);
}

DepthPrior load_depth_prior(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    DepthPrior p;
    p.d_avg = ck.get("prior/d_avg")[0];
    p.sample_count = static_cast<int>(ck.get("prior/sample_count")[0]);
    p.tau = ck.get("prior/tau")[0];
    return p;
}

Tensor background_mask(const Tensor& opacity, Scalar tau) {
    Tensor mask(opacity.shape());
    for (int i = 0; i < static_cast<int>(opacity.size()); ++i)
        mask[i] = opacity[i] < tau ? 1.0 : 0.0;
    return mask;
}

Var background_loss(const Var& depth, const Tensor& mask, const DepthPrior& prior) {
    if (!depth->value.same_shape(mask))
        throw std::invalid_argument("background_loss: shape mismatch");
    Scalar msum = 0;
    for (int i = 0; i < static_cast<int>(mask.size()); ++i) msum += mask[i];
    if (msum == 0) return constant(Tensor::scalar(0.0));
    Var diff = mul(sub(depth, constant(Tensor::full(mask.shape(), prior.d_avg))),
                   constant(mask));
    Var msq = scale(sum_all(square(diff)), 1.0 / msum);
    if (msq->value[0] == 0) return constant(Tensor::scalar(0.0));
    return sqrt_op(msq);
}

FeatureCritic::FeatureCritic() {
    // Weights pinned to a fixed stream so every run scores with the same
    // critic regardless of the experiment seed.
    Rng rng(0x5eedc217u);
    int in = 3;
    for (int k = 0; k < 4; ++k) {
        ws_.push_back(fan_in_init(rng, {16, in, 3, 3}, std::sqrt(2.0)));
        bs_.push_back(normal_init(rng, {16}, 0.1));
        in = 16;
    }
}

Var FeatureCritic::stage(const Var& x, int k) const {
    return leaky_relu(add_bias_chw(conv2d(x, constant(ws_[k]), 2, 1),
                                   constant(bs_[k])), 0.2);
}

std::vector<Var> FeatureCritic::features(const Var& img) const {
    std::vector<Var> out;
    Var x = img;
    for (int k = 0; k < 4; ++k) {
        x = stage(x, k);
        out.push_back(x);
    }
    return out;
}

Var FeatureCritic::embed(const Var& img) const {
    Var x = img;
    for (int k = 0; k < 4; ++k) x = stage(x, k);
    return global_avg_pool(x);  // [1,16]
}

RecLossParts reconstruction_loss(const Var& rec, const Tensor& target,
                                 const FeatureCritic& critic, const Config& cfg) {
    if (!rec->value.same_shape(target))
        throw std::invalid_argument("reconstruction_loss: shape mismatch");
    RecLossParts parts;
    Var tgt = constant(target);
    parts.l2 = mean_all(square(sub(rec, tgt)));

    std::vector<Var> fr = critic.features(rec);
    std::vector<Var> ft = critic.features(tgt);
    Var acc;
    for (size_t k = 0; k < fr.size(); ++k) {
        Var term = mean_all(square(sub(fr[k], ft[k])));
        acc = acc ? add(acc, term) : term;
    }
    parts.perc = scale(acc, 1.0 / fr.size());

    Var er = critic.embed(rec), et = critic.embed(tgt);
    Var dot = sum_all(mul(er, et));
    Var den = maximum_scalar(mul(sqrt_op(sum_all(square(er))),
                                 sqrt_op(sum_all(square(et)))), 1e-12);
    parts.id = add_scalar(neg(div(dot, den)), 1.0);

    parts.total = add(add(scale(parts.l2, cfg.lambda_l2), scale(parts.perc, cfg.lambda_perc)),
                      scale(parts.id, cfg.lambda_id));
    return parts;
}

Stage1LossParts stage1_encoder_loss(const RecLossParts& rec, const Var& adv_e,
                                    const Var& bg, const Var& wreg,
                                    const Config& cfg) {
    Stage1LossParts parts;
    parts.rec = rec;
    Var zero = constant(Tensor::scalar(0.0));
    parts.adv_e = cfg.use_latent_disc ? adv_e : zero;
    parts.bg = cfg.use_bg_loss ? bg : zero;
    parts.wreg = wreg;
    Var total = rec.total;
    if (cfg.use_latent_disc) total = add(total, scale(adv_e, cfg.lambda_adv));
    if (cfg.use_bg_loss) total = add(total, scale(bg, cfg.lambda_bg));
    total = add(total, scale(wreg, cfg.lambda_wreg));
    parts.total = total;
    return parts;
}

}  // namespace tpinv
