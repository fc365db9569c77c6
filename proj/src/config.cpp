#include "tpinv/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <stdexcept>

namespace tpinv {

namespace {

using nlohmann::json;

struct Binder {
    const json& j;
    std::set<std::string> seen;

    template <typename T>
    void bind(const char* key, T& field) {
        if (!j.contains(key)) return;
        try {
            field = j.at(key).get<T>();
        } catch (const json::exception& e) {
            throw std::invalid_argument(std::string("config key '") + key +
                                        "': " + e.what());
        }
        seen.insert(key);
    }
};

}  // namespace

Config Config::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config parse error: ") + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");

    Config c;
    Binder b{j, {}};
    b.bind("cam_distance", c.cam_distance);
    b.bind("fx", c.fx);
    b.bind("fy", c.fy);
    b.bind("cx", c.cx);
    b.bind("cy", c.cy);
    b.bind("t_near", c.t_near);
    b.bind("t_far", c.t_far);
    b.bind("render_res", c.render_res);
    b.bind("samples_per_ray", c.samples_per_ray);
    b.bind("train_render_res", c.train_render_res);
    b.bind("train_samples_per_ray", c.train_samples_per_ray);
    b.bind("plane_res", c.plane_res);
    b.bind("plane_channels", c.plane_channels);
    b.bind("d_z", c.d_z);
    b.bind("d_w", c.d_w);
    b.bind("mapping_layers", c.mapping_layers);
    b.bind("mapping_hidden", c.mapping_hidden);
    b.bind("synth_base_res", c.synth_base_res);
    b.bind("synth_channels", c.synth_channels);
    b.bind("synth_layers", c.synth_layers);
    b.bind("tap_layer", c.tap_layer);
    b.bind("decoder_hidden", c.decoder_hidden);
    b.bind("w_avg_samples", c.w_avg_samples);
    b.bind("enc_channels", c.enc_channels);
    b.bind("enc_attn_window", c.enc_attn_window);
    b.bind("afa_channels", c.afa_channels);
    b.bind("dataset_scenes", c.dataset_scenes);
    b.bind("dataset_yaws_deg", c.dataset_yaws_deg);
    b.bind("gen_iters", c.gen_iters);
    b.bind("gen_lr", c.gen_lr);
    b.bind("gen_rays_per_iter", c.gen_rays_per_iter);
    b.bind("gen_psnr_target", c.gen_psnr_target);
    b.bind("prior_samples", c.prior_samples);
    b.bind("prior_tau", c.prior_tau);
    b.bind("stage1_iters", c.stage1_iters);
    b.bind("batch_size", c.batch_size);
    b.bind("lr_encoder", c.lr_encoder);
    b.bind("lr_disc", c.lr_disc);
    b.bind("disc_real_batch", c.disc_real_batch);
    b.bind("stage_thresholds", c.stage_thresholds);
    b.bind("lambda_l2", c.lambda_l2);
    b.bind("lambda_perc", c.lambda_perc);
    b.bind("lambda_id", c.lambda_id);
    b.bind("lambda_adv", c.lambda_adv);
    b.bind("lambda_bg", c.lambda_bg);
    b.bind("lambda_wreg", c.lambda_wreg);
    b.bind("lambda_dfreg", c.lambda_dfreg);
    b.bind("r1_gamma", c.r1_gamma);
    b.bind("r1_squared", c.r1_squared);
    b.bind("bg_tau", c.bg_tau);
    b.bind("bg_in_stage2", c.bg_in_stage2);
    b.bind("use_latent_disc", c.use_latent_disc);
    b.bind("use_bg_loss", c.use_bg_loss);
    b.bind("stage2_iters", c.stage2_iters);
    b.bind("afa_batch", c.afa_batch);
    b.bind("lr_afa", c.lr_afa);
    b.bind("svm_epochs", c.svm_epochs);
    b.bind("svm_lambda", c.svm_lambda);
    b.bind("svm_lr", c.svm_lr);
    b.bind("svm_quantile", c.svm_quantile);
    b.bind("edit_rows", c.edit_rows);
    b.bind("log_every", c.log_every);
    b.bind("eval_images", c.eval_images);
    b.bind("seed", c.seed);

    for (const auto& [key, value] : j.items())
        if (!b.seen.count(key))
            throw std::invalid_argument("unknown config key: " + key);
    c.validate();
    return c;
}

Config Config::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    std::string text((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
    return from_json_text(text);
}

void Config::validate() const {
    if (!(t_near < t_far)) throw std::invalid_argument("config: t_near must be < t_far");
    if (!(fx > 0 && fy > 0)) throw std::invalid_argument("config: focal lengths must be positive");
    if (samples_per_ray < 2 || train_samples_per_ray < 2)
        throw std::invalid_argument("config: samples_per_ray must be >= 2");
    if (plane_res < 2) throw std::invalid_argument("config: plane_res must be >= 2");
    if (synth_layers < 2) throw std::invalid_argument("config: synth_layers must be >= 2");
    if (tap_layer < 1 || tap_layer >= synth_layers - 1)
        throw std::invalid_argument("config: tap_layer out of range");
    if (stage_thresholds.size() != 2 || stage_thresholds[0] > stage_thresholds[1])
        throw std::invalid_argument("config: stage_thresholds must be two nondecreasing ints");
    if (prior_tau <= 0 || prior_tau >= 1)
        throw std::invalid_argument("config: prior_tau must be in (0,1)");
    if (lambda_l2 < 0 || lambda_perc < 0 || lambda_id < 0 || lambda_adv < 0 ||
        lambda_bg < 0 || lambda_wreg < 0 || lambda_dfreg < 0 || r1_gamma < 0)
        throw std::invalid_argument("config: loss weights must be nonnegative");
    if (render_res < 4 || train_render_res < 4)
        throw std::invalid_argument("config: render resolutions must be >= 4");
}

}  // namespace tpinv
