#pragma once

#include <string>
#include <vector>

#include "tpinv/tensor.hpp"

namespace tpinv {

// Single flat JSON document. Unknown keys are rejected; absent keys keep the
// defaults below.
struct Config {
    // Camera and world.
    Scalar cam_distance = 2.7;
    Scalar fx = 2.0, fy = 2.0, cx = 0.5, cy = 0.5;
    Scalar t_near = 1.6, t_far = 3.8;
    int render_res = 64;
    int samples_per_ray = 48;
    int train_render_res = 32;
    int train_samples_per_ray = 16;

    // Tri-plane.
    int plane_res = 32;
    int plane_channels = 16;

    // Generator.
    int d_z = 128, d_w = 128;
    int mapping_layers = 4;
    int mapping_hidden = 128;
    int synth_base_res = 4;
    int synth_channels = 24;
    int synth_layers = 8;
    int tap_layer = 4;
    int decoder_hidden = 32;
    int w_avg_samples = 10000;

    // Encoder.
    int enc_channels = 32;
    int enc_attn_window = 8;

    // AFA.
    int afa_channels = 32;

    // Dataset.
    int dataset_scenes = 12;
    std::vector<Scalar> dataset_yaws_deg = {-60, -30, 0, 30, 60};

    // Generator pre-training.
    int gen_iters = 6000;
    Scalar gen_lr = 2e-3;
    int gen_rays_per_iter = 512;
    Scalar gen_psnr_target = 26.0;

    // Depth prior.
    int prior_samples = 1024;
    Scalar prior_tau = 0.5;

    // Stage 1.
    int stage1_iters = 600;
    int batch_size = 3;
    Scalar lr_encoder = 1e-4;
    Scalar lr_disc = 2e-5;
    int disc_real_batch = 8;
    std::vector<int> stage_thresholds = {200, 400};  // mid, fine activation iters

    // Loss weights.
    Scalar lambda_l2 = 1.0;
    Scalar lambda_perc = 0.8;
    Scalar lambda_id = 0.25;
    Scalar lambda_adv = 0.05;
    Scalar lambda_bg = 5.0;
    Scalar lambda_wreg = 0.001;
    Scalar lambda_dfreg = 0.0001;
    Scalar r1_gamma = 10.0;
    bool r1_squared = true;
    Scalar bg_tau = 0.5;
    bool bg_in_stage2 = true;
    bool use_latent_disc = true;  // ablation switch
    bool use_bg_loss = true;      // ablation switch

    // Stage 2.
    int stage2_iters = 300;
    int afa_batch = 2;
    Scalar lr_afa = 2.5e-5;

    // Editing.
    int svm_epochs = 500;
    Scalar svm_lambda = 1e-3;
    Scalar svm_lr = 0.05;
    Scalar svm_quantile = 0.3;
    std::vector<int> edit_rows;  // empty = all rows

    // Bookkeeping.
    int log_every = 10;
    int eval_images = 64;
    uint64_t seed = 1234;

    static Config from_file(const std::string& path);
    static Config from_json_text(const std::string& text);
    void validate() const;
};

}  // namespace tpinv
