#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tpinv/config.hpp"
#include "tpinv/encoder.hpp"
#include "tpinv/generator.hpp"

namespace tpinv {

Tensor canonical_label(const Config& cfg);

// MLP over single latent rows; depth = number of hidden lrelu layers
// (depth 0 is a pure linear map, handy for analytic checks).
class LatentDiscriminator {
  public:
    LatentDiscriminator(int d_in, int hidden, int depth, uint64_t seed);

    // x [n,d_in] -> logits [n,1]. detach_params blocks gradient flow into
    // the discriminator weights (encoder adversarial step).
    Var logits(const Var& x, bool detach_params = false) const;

    struct WithGrad {
        Var logits;      // [n,1]
        Var input_grad;  // [n,d_in], exact d logit / d input per row
    };
    WithGrad logits_with_input_grad(const Var& x) const;

    void save(Checkpoint& ck) const { params.save_to(ck, "disc/"); }
    void load(const Checkpoint& ck) { params.load_from(ck, "disc/"); }

    ParamStore params;
    int d_in, hidden, depth;
};

// n codes map_latent(z_i, canonical label), rows of [n,d_w].
Tensor sample_canonical_w(const Generator& gen, int n, uint64_t seed,
                          const Config& cfg);

struct DiscLossParts {
    Var total, adv, r1;
};
// Non-saturating GAN loss + R1 on the real batch. Batches are plain tensors:
// gradients flow only into the discriminator.
DiscLossParts disc_loss(const LatentDiscriminator& disc, const Tensor& real,
                        const Tensor& fake, Scalar r1_gamma, bool r1_squared);

// -E[log sigmoid(D(w_i))] with discriminator parameters detached.
Var enc_adv_loss(const LatentDiscriminator& disc, const Var& fake);

struct DepthPrior {
    Scalar d_avg = 0;
    int sample_count = 0;
    Scalar tau = 0.5;
};
// probe(i) fills one rendered depth/opacity pair; the prior averages depth
// over pixels whose opacity falls below tau.
using RenderProbe = std::function<void(int index, Tensor& depth, Tensor& opacity)>;
DepthPrior estimate_depth_prior_with(const RenderProbe& probe, int n, Scalar tau,
                                     Scalar t_near, Scalar t_far);
DepthPrior estimate_depth_prior(const Generator& gen, const Config& cfg, int n,
                                Scalar tau, uint64_t seed);
void save_depth_prior(const DepthPrior& p, const std::string& path);
DepthPrior load_depth_prior(const std::string& path);

// RMS of (depth - d_avg) over mask=1 pixels; zero when the mask is empty.
Var background_loss(const Var& depth, const Tensor& mask, const DepthPrior& prior);

// Background mask: opacity below tau.
Tensor background_mask(const Tensor& opacity, Scalar tau);

// Fixed-random multi-scale conv features standing in for pretrained
// perceptual and identity networks. Weights are seed-pinned constants shared
// by every run, so scores are comparable across training configurations.
class FeatureCritic {
  public:
    FeatureCritic();
    std::vector<Var> features(const Var& img) const;  // one map per scale
    Var embed(const Var& img) const;                  // [1,C]

  private:
    Var stage(const Var& x, int k) const;
    std::vector<Tensor> ws_;
    std::vector<Tensor> bs_;
};

struct RecLossParts {
    Var total, l2, perc, id;
};
RecLossParts reconstruction_loss(const Var& rec, const Tensor& target,
                                 const FeatureCritic& critic, const Config& cfg);

struct Stage1LossParts {
    Var total, adv_e, bg, wreg;
    RecLossParts rec;
};
// Encoder objective: rec + l4*adv + l5*bg + l6*wreg, honoring the ablation
// switches (use_latent_disc, use_bg_loss).
Stage1LossParts stage1_encoder_loss(const RecLossParts& rec, const Var& adv_e,
                                    const Var& bg, const Var& wreg,
                                    const Config& cfg);

}  // namespace tpinv
