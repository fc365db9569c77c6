#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tpinv/harness.hpp"
#include "tpinv/metrics.hpp"

namespace fs = std::filesystem;
using namespace tpinv;

namespace {

constexpr Scalar kPi = 3.14159265358979323846;

struct Common {
    std::string config_path;
    std::string out_dir = "out";
    uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
};

Config load_config(const Common& c) {
    Config cfg = c.config_path.empty() ? Config() : Config::from_file(c.config_path);
    if (c.seed_opt && c.seed_opt->count() > 0) cfg.seed = c.seed;
    cfg.validate();
    return cfg;
}

std::string joined(const Common& c, const std::string& leaf) {
    return (fs::path(c.out_dir) / leaf).string();
}

Generator load_generator(const Config& cfg, const std::string& path) {
    Generator gen(cfg, 0);
    gen.load(Checkpoint::load(path));
    return gen;
}

Encoder load_encoder(const Config& cfg, const std::string& path) {
    Encoder enc(cfg, 0);
    enc.load(Checkpoint::load(path));
    return enc;
}

Afa load_afa(const Config& cfg, const Generator& gen, const std::string& path) {
    Afa afa(cfg.render_res, gen.layer_res[gen.tap_layer], cfg.synth_channels,
            cfg.afa_channels, 0);
    afa.load(Checkpoint::load(path));
    return afa;
}

CameraPose yaw_pose(Scalar yaw_deg, const Config& cfg) {
    return orbit_pose(yaw_deg * kPi / 180.0, 0.0, cfg.cam_distance);
}

void write_render(const RenderOutput& out, const std::string& stem) {
    Image img(out.image.shape()[1], out.image.shape()[2]);
    img.chw = out.image;
    save_png(stem + ".png", img);
    save_depth(stem + ".tpd", out.depth);
}

int run_make_data(const Common& c, int scenes) {
    const Config cfg = load_config(c);
    const SceneSpec spec = scene_spec_from(cfg);
    const int n = scenes > 0 ? scenes : cfg.dataset_scenes;
    const std::string dir = joined(c, "dataset");
    make_dataset(spec, n, cfg.seed, dir);
    std::cout << "wrote " << n << " scenes to " << dir << "\n";
    return 0;
}

int run_train_gen(const Common& c, const std::string& data) {
    const Config cfg = load_config(c);
    const Dataset ds = load_dataset(data.empty() ? joined(c, "dataset") : data);
    Generator gen(cfg, derive_seed(cfg.seed, "gen-init"));
    ParamStore zs;
    fs::create_directories(c.out_dir);
    const GenTrainResult res =
        train_toy_generator(gen, zs, ds, cfg, cfg.seed, joined(c, "train_gen.csv"));
    Checkpoint ck;
    gen.save(ck);
    zs.save_to(ck, "z/");
    ck.save(joined(c, "generator.tpck"));
    std::cout << "held-out psnr " << res.heldout_psnr << " db (target "
              << cfg.gen_psnr_target << ")\n";
    if (!res.reached_target)
        std::cerr << "warning: psnr target not reached; checkpoint written anyway\n";
    return 0;
}

int run_fit_prior(const Common& c, const std::string& gen_path) {
    const Config cfg = load_config(c);
    const Generator gen =
        load_generator(cfg, gen_path.empty() ? joined(c, "generator.tpck") : gen_path);
    const DepthPrior prior = estimate_depth_prior(gen, cfg, cfg.prior_samples, cfg.prior_tau,
                                                  derive_seed(cfg.seed, "prior"));
    fs::create_directories(c.out_dir);
    save_depth_prior(prior, joined(c, "depth_prior.tpck"));
    std::cout << "d_avg " << prior.d_avg << " over " << prior.sample_count << " samples\n";
    return 0;
}

int run_train_encoder(const Common& c, const std::string& data, const std::string& gen_path,
                      const std::string& prior_path) {
    const Config cfg = load_config(c);
    const Dataset ds = load_dataset(data.empty() ? joined(c, "dataset") : data);
    const Generator gen =
        load_generator(cfg, gen_path.empty() ? joined(c, "generator.tpck") : gen_path);
    const DepthPrior prior =
        load_depth_prior(prior_path.empty() ? joined(c, "depth_prior.tpck") : prior_path);
    Encoder enc(cfg, derive_seed(cfg.seed, "enc-init"));
    LatentDiscriminator disc(cfg.d_w, kDiscHidden, kDiscDepth, derive_seed(cfg.seed, "disc-init"));
    fs::create_directories(c.out_dir);
    train_stage1(enc, disc, gen, prior, ds, cfg, cfg.seed, joined(c, "train_encoder.csv"),
                 joined(c, "encoder.tpck"));
    std::cout << "encoder checkpoint at " << joined(c, "encoder.tpck") << "\n";
    return 0;
}

int run_train_afa(const Common& c, const std::string& data, const std::string& gen_path,
                  const std::string& prior_path, const std::string& enc_path) {
    const Config cfg = load_config(c);
    const Dataset ds = load_dataset(data.empty() ? joined(c, "dataset") : data);
    const Generator gen =
        load_generator(cfg, gen_path.empty() ? joined(c, "generator.tpck") : gen_path);
    const DepthPrior prior =
        load_depth_prior(prior_path.empty() ? joined(c, "depth_prior.tpck") : prior_path);
    Encoder enc = load_encoder(cfg, enc_path.empty() ? joined(c, "encoder.tpck") : enc_path);
    Afa afa(cfg.render_res, gen.layer_res[gen.tap_layer], cfg.synth_channels, cfg.afa_channels,
            derive_seed(cfg.seed, "afa-init"));
    fs::create_directories(c.out_dir);
    train_stage2(afa, enc, gen, prior, ds, cfg, cfg.seed, joined(c, "train_afa.csv"));
    Checkpoint ck;
    afa.save(ck);
    ck.save(joined(c, "afa.tpck"));
    std::cout << "afa checkpoint at " << joined(c, "afa.tpck") << "\n";
    return 0;
}

int run_invert(const Common& c, const std::string& image_path, const std::string& cam_path,
               const std::string& gen_path, const std::string& enc_path,
               const std::string& afa_path, bool no_afa, const std::string& bundle_name) {
    const Config cfg = load_config(c);
    const Generator gen =
        load_generator(cfg, gen_path.empty() ? joined(c, "generator.tpck") : gen_path);
    const Encoder enc =
        load_encoder(cfg, enc_path.empty() ? joined(c, "encoder.tpck") : enc_path);
    const Image img = load_png(image_path);
    const Tensor label = load_cam(cam_path);

    InversionBundle b;
    if (no_afa) {
        b = invert_image(img.chw, label, enc, gen, nullptr, cfg);
    } else {
        const Afa afa = load_afa(cfg, gen, afa_path.empty() ? joined(c, "afa.tpck") : afa_path);
        b = invert_image(img.chw, label, enc, gen, &afa, cfg);
    }
    fs::create_directories(c.out_dir);
    save_bundle(b, joined(c, bundle_name));

    CameraPose pose;
    Intrinsics intr;
    parse_pose_label(label, &pose, &intr);
    const RenderOutput rec =
        render_bundle(b, gen, pose, intr, cfg.render_res, render_settings(cfg, false));
    write_render(rec, joined(c, "reconstruction"));
    std::cout << "bundle at " << joined(c, bundle_name) << "\n";
    return 0;
}

int run_render(const Common& c, const std::string& bundle_path,
               const std::string& gen_path, std::vector<Scalar> yaws) {
    const Config cfg = load_config(c);
    const Generator gen =
        load_generator(cfg, gen_path.empty() ? joined(c, "generator.tpck") : gen_path);
    const InversionBundle b = load_bundle(bundle_path);
    if (yaws.empty()) yaws = cfg.dataset_yaws_deg;
    fs::create_directories(c.out_dir);
    const RenderSettings rs = render_settings(cfg, false);
    const Intrinsics intr{cfg.fx, cfg.fy, cfg.cx, cfg.cy};
    for (size_t k = 0; k < yaws.size(); ++k) {
        const RenderOutput out =
            render_bundle(b, gen, yaw_pose(yaws[k], cfg), intr, cfg.render_res, rs);
        write_render(out, joined(c, "view_" + std::to_string(k)));
    }
    std::cout << yaws.size() << " views rendered to " << c.out_dir << "\n";
    return 0;
}

Scalar factor_value(const SceneFactors& f, const std::string& attribute) {
    if (attribute == "radius") return f.radius;
    if (attribute == "hue") return f.hue;
    if (attribute == "shade") return f.shade;
    throw std::invalid_argument("unknown attribute: " + attribute +
                                " (want radius, hue, or shade)");
}

int run_fit_direction(const Common& c, const std::string& data, const std::string& gen_path,
                      const std::string& attribute) {
    const Config cfg = load_config(c);
    const Dataset ds = load_dataset(data.empty() ? joined(c, "dataset") : data);
    const Checkpoint ck =
        Checkpoint::load(gen_path.empty() ? joined(c, "generator.tpck") : gen_path);
    Generator gen(cfg, 0);
    gen.load(ck);

    std::vector<Scalar> values;
    values.reserve(ds.scenes.size());
    for (const SceneRecord& s : ds.scenes) values.push_back(factor_value(s.factors, attribute));

    std::vector<size_t> idx;
    std::vector<int> labels;
    quantile_split(values, cfg.svm_quantile, &idx, &labels);

    const Tensor canon = canonical_label(cfg);
    Tensor latents = Tensor::zeros({static_cast<int>(idx.size()), cfg.d_w});
    for (size_t r = 0; r < idx.size(); ++r) {
        const std::string name = "z/scene" + std::to_string(idx[r]);
        if (!ck.has(name)) throw std::runtime_error("generator checkpoint lacks " + name);
        const Tensor w = gen.map_latent(ck.get(name), canon);
        for (int j = 0; j < cfg.d_w; ++j) latents.at(static_cast<int>(r), j) = w[j];
    }
    const EditDirection dir = fit_direction(latents, labels, cfg, attribute);
    fs::create_directories(c.out_dir);
    const std::string path = joined(c, "direction_" + attribute + ".tpck");
    save_direction(dir, path);
    std::cout << "direction " << attribute << ": accuracy " << dir.train_accuracy
              << ", margin " << dir.mean_margin << " -> " << path << "\n";
    return 0;
}

int run_edit(const Common& c, const std::string& bundle_path, const std::string& dir_path,
             const std::string& gen_path, Scalar strength, Scalar yaw_deg, bool use_yaw,
             const std::vector<int>& rows) {
    const Config cfg = load_config(c);
    const Generator gen =
        load_generator(cfg, gen_path.empty() ? joined(c, "generator.tpck") : gen_path);
    const InversionBundle b = load_bundle(bundle_path);
    const EditDirection dir = load_direction(dir_path);

    CameraPose pose;
    Intrinsics intr;
    parse_pose_label(b.label, &pose, &intr);
    if (use_yaw) {
        pose = yaw_pose(yaw_deg, cfg);
        intr = Intrinsics{cfg.fx, cfg.fy, cfg.cx, cfg.cy};
    }
    const RenderOutput out = edited_render(b, gen, dir, strength, rows, pose, intr,
                                           cfg.render_res, render_settings(cfg, false));
    fs::create_directories(c.out_dir);
    write_render(out, joined(c, "edited"));
    std::cout << "edited render (strength " << strength << ") in " << c.out_dir << "\n";
    return 0;
}

int run_eval(const Common& c, const std::string& data, const std::string& gen_path,
             const std::string& enc_path, const std::string& afa_path, bool no_afa,
             int max_scenes) {
    const Config cfg = load_config(c);
    const Dataset ds = load_dataset(data.empty() ? joined(c, "dataset") : data);
    const Generator gen =
        load_generator(cfg, gen_path.empty() ? joined(c, "generator.tpck") : gen_path);
    const Encoder enc =
        load_encoder(cfg, enc_path.empty() ? joined(c, "encoder.tpck") : enc_path);
    Afa afa(cfg.render_res, gen.layer_res[gen.tap_layer], cfg.synth_channels, cfg.afa_channels,
            0);
    const Afa* afa_ptr = nullptr;
    if (!no_afa) {
        afa.load(Checkpoint::load(afa_path.empty() ? joined(c, "afa.tpck") : afa_path));
        afa_ptr = &afa;
    }

    fs::create_directories(c.out_dir);
    std::ofstream csv(joined(c, "metrics.csv"), std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot write metrics.csv");
    csv << "scene,yaw,mse,psnr,ssim,geo_err\n";

    const RenderSettings rs = render_settings(cfg, false);
    const int n = max_scenes > 0
                      ? std::min<int>(max_scenes, static_cast<int>(ds.scenes.size()))
                      : static_cast<int>(ds.scenes.size());
    Scalar mse_sum = 0, psnr_sum = 0, ssim_sum = 0, geo_sum = 0;
    int count = 0;
    for (int i = 0; i < n; ++i) {
        for (const ViewRecord& view : ds.scenes[i].views) {
            const InversionBundle b =
                invert_image(view.image, view.label, enc, gen, afa_ptr, cfg);
            CameraPose pose;
            Intrinsics intr;
            parse_pose_label(view.label, &pose, &intr);
            const RenderOutput out = render_bundle(b, gen, pose, intr, ds.res, rs);
            const MetricsReport m =
                eval_metrics(out.image, view.image, out.depth.values, view.depth.values);
            csv << i << "," << view.yaw_deg << "," << m.mse << "," << m.psnr << ","
                << m.ssim << "," << m.geo_err << "\n";
            mse_sum += m.mse;
            psnr_sum += m.psnr;
            ssim_sum += m.ssim;
            geo_sum += m.geo_err;
            ++count;
        }
    }
    if (count > 0)
        std::cout << "mean over " << count << " views: mse " << mse_sum / count << ", psnr "
                  << psnr_sum / count << ", ssim " << ssim_sum / count << ", geo_err "
                  << geo_sum / count << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tri-plane inversion pipeline"};
    app.require_subcommand(1);

    Common c;
    app.add_option("--config", c.config_path, "JSON config path")->expected(1);
    c.seed_opt = app.add_option("--seed", c.seed, "override config seed");
    app.add_option("--out", c.out_dir, "output directory");
    app.fallthrough();

    int scenes = 0;
    auto* sc_make = app.add_subcommand("make-data", "render a synthetic dataset");
    sc_make->add_option("--scenes", scenes, "scene count (default from config)");

    std::string data, gen_path, enc_path, prior_path, afa_path;
    auto* sc_gen = app.add_subcommand("train-gen", "fit the toy generator");
    sc_gen->add_option("--data", data, "dataset directory");

    auto* sc_prior = app.add_subcommand("fit-depth-prior", "estimate the background depth prior");
    sc_prior->add_option("--gen", gen_path, "generator checkpoint");

    auto* sc_enc = app.add_subcommand("train-encoder", "stage-1 encoder training");
    sc_enc->add_option("--data", data, "dataset directory");
    sc_enc->add_option("--gen", gen_path, "generator checkpoint");
    sc_enc->add_option("--prior", prior_path, "depth prior file");

    auto* sc_afa = app.add_subcommand("train-afa", "stage-2 feature alignment training");
    sc_afa->add_option("--data", data, "dataset directory");
    sc_afa->add_option("--gen", gen_path, "generator checkpoint");
    sc_afa->add_option("--prior", prior_path, "depth prior file");
    sc_afa->add_option("--enc", enc_path, "encoder checkpoint");

    std::string image_path, cam_path, bundle_name = "bundle.tpck";
    bool no_afa = false;
    auto* sc_inv = app.add_subcommand("invert", "invert one image");
    sc_inv->add_option("--image", image_path, "input PNG")->required();
    sc_inv->add_option("--cam", cam_path, "camera label file")->required();
    sc_inv->add_option("--gen", gen_path, "generator checkpoint");
    sc_inv->add_option("--enc", enc_path, "encoder checkpoint");
    sc_inv->add_option("--afa", afa_path, "afa checkpoint");
    sc_inv->add_flag("--no-afa", no_afa, "w+-only inversion");
    sc_inv->add_option("--bundle", bundle_name, "bundle file name");

    std::string bundle_path;
    std::vector<Scalar> yaws;
    auto* sc_render = app.add_subcommand("render", "render a bundle from a yaw sweep");
    sc_render->add_option("--bundle", bundle_path, "inversion bundle")->required();
    sc_render->add_option("--gen", gen_path, "generator checkpoint");
    sc_render->add_option("--yaws", yaws, "yaw degrees (default from config)");

    std::string attribute;
    auto* sc_dir = app.add_subcommand("fit-direction", "fit a latent edit direction");
    sc_dir->add_option("--attribute", attribute, "radius, hue, or shade")->required();
    sc_dir->add_option("--data", data, "dataset directory");
    sc_dir->add_option("--gen", gen_path, "generator checkpoint");

    std::string dir_path;
    Scalar strength = 0, yaw_deg = 0;
    std::vector<int> rows;
    auto* sc_edit = app.add_subcommand("edit", "apply an edit to a bundle and render");
    sc_edit->add_option("--bundle", bundle_path, "inversion bundle")->required();
    sc_edit->add_option("--direction", dir_path, "direction file")->required();
    sc_edit->add_option("--strength", strength, "edit strength")->required();
    auto* yaw_opt = sc_edit->add_option("--yaw", yaw_deg, "render yaw (default: input view)");
    sc_edit->add_option("--rows", rows, "w+ rows to move (default all)");
    sc_edit->add_option("--gen", gen_path, "generator checkpoint");

    int max_scenes = 0;
    auto* sc_eval = app.add_subcommand("eval", "inversion metrics over the dataset");
    sc_eval->add_option("--data", data, "dataset directory");
    sc_eval->add_option("--gen", gen_path, "generator checkpoint");
    sc_eval->add_option("--enc", enc_path, "encoder checkpoint");
    sc_eval->add_option("--afa", afa_path, "afa checkpoint");
    sc_eval->add_flag("--no-afa", no_afa, "w+-only inversion");
    sc_eval->add_option("--max-scenes", max_scenes, "cap on scenes (0 = all)");

    try {
        app.parse(argc, argv);
        if (sc_make->parsed()) return run_make_data(c, scenes);
        if (sc_gen->parsed()) return run_train_gen(c, data);
        if (sc_prior->parsed()) return run_fit_prior(c, gen_path);
        if (sc_enc->parsed()) return run_train_encoder(c, data, gen_path, prior_path);
        if (sc_afa->parsed()) return run_train_afa(c, data, gen_path, prior_path, enc_path);
        if (sc_inv->parsed())
            return run_invert(c, image_path, cam_path, gen_path, enc_path, afa_path, no_afa,
                              bundle_name);
        if (sc_render->parsed()) return run_render(c, bundle_path, gen_path, yaws);
        if (sc_dir->parsed()) return run_fit_direction(c, data, gen_path, attribute);
        if (sc_edit->parsed())
            return run_edit(c, bundle_path, dir_path, gen_path, strength, yaw_deg,
                            yaw_opt->count() > 0, rows);
        if (sc_eval->parsed())
            return run_eval(c, data, gen_path, enc_path, afa_path, no_afa, max_scenes);
        std::cerr << "no subcommand\n";
        return 2;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return 2;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
