#include "tpinv/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "tpinv/metrics.hpp"
#include "tpinv/rng.hpp"

namespace tpinv {

using namespace ops;

RenderSettings render_settings(const Config& cfg, bool train) {
    RenderSettings rs;
    rs.samples_per_ray = train ? cfg.train_samples_per_ray : cfg.samples_per_ray;
    rs.t_near = cfg.t_near;
    rs.t_far = cfg.t_far;
    return rs;
}

Tensor downsample_chw(const Tensor& img, int factor) {
    const auto& sh = img.shape();
    if (sh.size() != 3) throw std::invalid_argument("downsample_chw: want [C,H,W]");
    if (factor < 1 || sh[1] % factor != 0 || sh[2] % factor != 0)
        throw std::invalid_argument("downsample_chw: bad factor");
    if (factor == 1) return img;
    const int c = sh[0], ho = sh[1] / factor, wo = sh[2] / factor;
    Tensor out = Tensor::zeros({c, ho, wo});
    const Scalar inv = 1.0 / (factor * factor);
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                Scalar s = 0;
                for (int di = 0; di < factor; ++di)
                    for (int dj = 0; dj < factor; ++dj)
                        s += img.at(ch, i * factor + di, j * factor + dj);
                out.at(ch, i, j) = s * inv;
            }
    return out;
}

namespace {

constexpr Scalar kPi = 3.14159265358979323846;

void set_requires_grad(const ParamStore& store, bool on) {
    for (const auto& it : store.items()) it.second->requires_grad = on;
}

Scalar tensor_mse(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("tensor_mse: shape mismatch");
    Scalar s = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const Scalar d = a[i] - b[i];
        s += d * d;
    }
    return s / static_cast<Scalar>(a.size());
}

Scalar value_of(const Var& v) { return v->value[0]; }

Intrinsics config_intr(const Config& cfg) { return {cfg.fx, cfg.fy, cfg.cx, cfg.cy}; }

std::ofstream open_csv(const std::string& path, const std::string& header) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << header << "\n";
    return out;
}

struct SampleRef {
    int scene = 0, view = 0;
};

std::vector<SampleRef> pick_batch(Rng& rng, const Dataset& ds, int n) {
    std::vector<SampleRef> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        SampleRef s;
        s.scene = rng.uniform_int(static_cast<int>(ds.scenes.size()));
        s.view = rng.uniform_int(static_cast<int>(ds.scenes[s.scene].views.size()));
        out.push_back(s);
    }
    return out;
}

Tensor stack_row_values(const std::vector<Var>& rows) {
    const int d = rows[0]->value.shape()[1];
    Tensor out = Tensor::zeros({static_cast<int>(rows.size()), d});
    for (size_t r = 0; r < rows.size(); ++r)
        for (int j = 0; j < d; ++j) out.at(static_cast<int>(r), j) = rows[r]->value.at(0, j);
    return out;
}

}  // namespace

ParamFreeze::ParamFreeze(const ParamStore& store) : store_(store) {
    set_requires_grad(store_, false);
}
ParamFreeze::~ParamFreeze() { set_requires_grad(store_, true); }

GenTrainResult train_toy_generator(Generator& gen, ParamStore& scene_latents,
                                   const Dataset& ds, const Config& cfg,
                                   uint64_t seed, const std::string& csv_path) {
    if (ds.scenes.empty()) throw std::invalid_argument("train_toy_generator: empty dataset");
    const int n_scenes = static_cast<int>(ds.scenes.size());
    const int res = ds.res;
    const Tensor canon = canonical_label(cfg);

    Rng zrng(derive_seed(seed, "gen-z"));
    std::vector<Var> zs;
    zs.reserve(n_scenes);
    for (int i = 0; i < n_scenes; ++i)
        zs.push_back(scene_latents.add("scene" + std::to_string(i),
                                       zrng.normal_tensor({cfg.d_z}, 1.0)));

    std::vector<Var> train_vars = gen.params.vars();
    train_vars.insert(train_vars.end(), zs.begin(), zs.end());
    Adam opt(train_vars, cfg.gen_lr);

    const RenderSettings rs = render_settings(cfg, false);
    std::ofstream csv = open_csv(csv_path, "iter,total,color,depth,opacity");

    for (int t = 0; t < cfg.gen_iters; ++t) {
        // Cosine decay to a 5% floor; the tail of the fit stalls without it.
        const Scalar prog = cfg.gen_iters > 1 ? static_cast<Scalar>(t) / (cfg.gen_iters - 1) : 0.0;
        opt.lr = cfg.gen_lr * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(kPi * prog)));
        Rng rng(derive_seed(seed, "gen-iter" + std::to_string(t)));
        const int scene = t % n_scenes;
        const auto& views = ds.scenes[scene].views;
        const ViewRecord& view = views[rng.uniform_int(static_cast<int>(views.size()))];

        CameraPose pose;
        Intrinsics intr;
        parse_pose_label(view.label, &pose, &intr);
        const RayBundle rb = generate_rays(pose, intr, res, res);

        const int n_rays = std::min(cfg.gen_rays_per_iter, res * res);
        Tensor origins = Tensor::zeros({n_rays, 3});
        Tensor dirs = Tensor::zeros({n_rays, 3});
        Tensor tcol = Tensor::zeros({n_rays, 3});
        Tensor tdep = Tensor::zeros({n_rays});
        Tensor topc = Tensor::zeros({n_rays});
        Tensor hit = Tensor::zeros({n_rays});
        int hits = 0;
        for (int r = 0; r < n_rays; ++r) {
            const int p = rng.uniform_int(res * res);
            const int i = p / res, j = p % res;
            const Vec3& o = rb.origin(i, j);
            const Vec3& d = rb.direction(i, j);
            origins.at(r, 0) = o.x; origins.at(r, 1) = o.y; origins.at(r, 2) = o.z;
            dirs.at(r, 0) = d.x; dirs.at(r, 1) = d.y; dirs.at(r, 2) = d.z;
            for (int c = 0; c < 3; ++c) tcol.at(r, c) = view.image.at(c, i, j);
            tdep[r] = view.depth.values.at(i, j);
            topc[r] = tdep[r] > 0 ? 1.0 : 0.0;
            hit[r] = topc[r];
            if (hit[r] > 0.5) ++hits;
        }

        Var w = gen.map_latent_var(zs[scene], canon);
        Generator::SynthResult sr = gen.forward(repeat_rows(w, gen.n_layers));
        RayRenderGraph rr = render_rays(sr.tp, gen.decoder, origins, dirs, rs);

        Var l_col = mean_all(square(sub(rr.color, constant(tcol))));
        Var dd = mul(sub(rr.depth, constant(tdep)), constant(hit));
        Var l_dep = scale(sum_all(square(dd)), 1.0 / std::max(1, hits));
        Var l_opc = mean_all(square(sub(rr.opacity, constant(topc))));
        Var total = add(l_col, add(scale(l_dep, 0.5), scale(l_opc, 0.5)));

        backward(total);
        opt.step();
        opt.zero_grad();

        if (t % cfg.log_every == 0 || t == cfg.gen_iters - 1)
            csv << t << "," << value_of(total) << "," << value_of(l_col) << ","
                << value_of(l_dep) << "," << value_of(l_opc) << std::endl;
    }
    csv.flush();

    gen.compute_w_avg(cfg.w_avg_samples, derive_seed(seed, "w-avg"), canon);

    NoGradGuard ng;
    const Intrinsics intr = config_intr(cfg);
    const std::vector<Scalar> holdout_yaws = {-45.0, 15.0};
    const int n_eval = std::min(16, n_scenes);
    Scalar psnr_sum = 0;
    int psnr_count = 0;
    for (int i = 0; i < n_eval; ++i) {
        const Tensor w = gen.map_latent(zs[i]->value, canon);
        for (Scalar yaw : holdout_yaws) {
            const CameraPose pose = orbit_pose(yaw * kPi / 180.0, 0.0, cfg.cam_distance);
            const RenderOutput out = render_w(gen, w, pose, intr, res, rs);
            const AnalyticRender gt = render_scene(ds.scenes[i].factors, pose, intr, res);
            psnr_sum += psnr_db(tensor_mse(out.image, gt.image));
            ++psnr_count;
        }
    }
    GenTrainResult result;
    result.heldout_psnr = psnr_sum / std::max(1, psnr_count);
    result.reached_target = result.heldout_psnr >= cfg.gen_psnr_target;
    return result;
}

void train_stage1(Encoder& enc, LatentDiscriminator& disc, const Generator& gen,
                  const DepthPrior& prior, const Dataset& ds, const Config& cfg,
                  uint64_t seed, const std::string& csv_path,
                  const std::string& ckpt_path) {
    if (ds.scenes.empty()) throw std::invalid_argument("train_stage1: empty dataset");
    if (ds.res % cfg.train_render_res != 0)
        throw std::invalid_argument("train_stage1: dataset res not divisible by train_render_res");
    const int factor = ds.res / cfg.train_render_res;
    if (cfg.stage_thresholds.size() < 2)
        throw std::invalid_argument("train_stage1: need two stage thresholds");

    ParamFreeze freeze_gen(gen.params);
    enc.w_avg = gen.w_avg;
    const FeatureCritic critic;
    const StageSchedule sched(cfg.stage_thresholds[0], cfg.stage_thresholds[1]);
    const RenderSettings rs = render_settings(cfg, true);
    const int tr = cfg.train_render_res;
    const CameraPose front = canonical_pose(cfg.cam_distance);
    const Intrinsics front_intr = config_intr(cfg);

    Adam opt_d(disc.params.vars(), cfg.lr_disc);
    Adam opt_e(enc.params.vars(), cfg.lr_encoder);
    std::ofstream csv = open_csv(csv_path, "iter,rec_l2,perc,id,adv_e,adv_d,bg,wreg");

    auto save_ckpt = [&]() {
        Checkpoint ck;
        enc.save(ck);
        disc.save(ck);
        ck.save(ckpt_path);
    };

    for (int t = 0; t < cfg.stage1_iters; ++t) {
        const Stage stage = sched.at(t);
        Rng brng(derive_seed(seed, "s1-batch" + std::to_string(t)));
        const std::vector<SampleRef> batch = pick_batch(brng, ds, cfg.batch_size);

        Scalar adv_d_val = 0;
        if (cfg.use_latent_disc) {
            const Tensor real = sample_canonical_w(
                gen, cfg.disc_real_batch, derive_seed(seed, "s1-real" + std::to_string(t)), cfg);
            Tensor fake;
            {
                NoGradGuard ng;
                std::vector<Var> all_rows;
                for (const SampleRef& s : batch) {
                    WPlusGraph wp = enc.encode(ds.scenes[s.scene].views[s.view].image, stage);
                    all_rows.insert(all_rows.end(), wp.rows.begin(), wp.rows.end());
                }
                fake = stack_row_values(all_rows);
            }
            DiscLossParts dp = disc_loss(disc, real, fake, cfg.r1_gamma, cfg.r1_squared);
            backward(dp.total);
            opt_d.step();
            opt_d.zero_grad();
            adv_d_val = value_of(dp.adv);
        }

        Var l2_sum, perc_sum, id_sum, rec_sum, wreg_sum, bg;
        auto acc = [](Var& a, const Var& x) { a = a ? add(a, x) : x; };
        std::vector<Var> all_rows;
        for (size_t s = 0; s < batch.size(); ++s) {
            const ViewRecord& view = ds.scenes[batch[s].scene].views[batch[s].view];
            WPlusGraph wp = enc.encode(view.image, stage);
            Generator::SynthResult sr = gen.forward(wp.rows);
            CameraPose pose;
            Intrinsics intr;
            parse_pose_label(view.label, &pose, &intr);
            RenderGraph g = render_triplane(sr.tp, gen.decoder, pose, intr, tr, tr, rs);
            RecLossParts rp =
                reconstruction_loss(g.image, downsample_chw(view.image, factor), critic, cfg);
            acc(rec_sum, rp.total);
            acc(l2_sum, rp.l2);
            acc(perc_sum, rp.perc);
            acc(id_sum, rp.id);
            acc(wreg_sum, w_delta_norm(wp));
            all_rows.insert(all_rows.end(), wp.rows.begin(), wp.rows.end());
            if (s == 0 && cfg.use_bg_loss) {
                RenderGraph gc = render_triplane(sr.tp, gen.decoder, front, front_intr, tr, tr, rs);
                bg = background_loss(gc.depth, background_mask(gc.opacity->value, cfg.bg_tau),
                                     prior);
            }
        }
        const Scalar inv_b = 1.0 / static_cast<Scalar>(batch.size());
        RecLossParts rec{scale(rec_sum, inv_b), scale(l2_sum, inv_b), scale(perc_sum, inv_b),
                         scale(id_sum, inv_b)};
        Var adv_e = cfg.use_latent_disc ? enc_adv_loss(disc, stack_rows(all_rows))
                                        : constant(Tensor::zeros({1}));
        if (!bg) bg = constant(Tensor::zeros({1}));
        Var wreg = scale(wreg_sum, inv_b);
        Stage1LossParts s1 = stage1_encoder_loss(rec, adv_e, bg, wreg, cfg);
        backward(s1.total);
        opt_e.step();
        opt_e.zero_grad();
        disc.params.zero_grads();

        if (t % cfg.log_every == 0 || t == cfg.stage1_iters - 1)
            csv << t << "," << value_of(rec.l2) << "," << value_of(rec.perc) << ","
                << value_of(rec.id) << "," << value_of(adv_e) << "," << adv_d_val << ","
                << value_of(bg) << "," << value_of(wreg) << std::endl;
        if ((t + 1) % 100 == 0) save_ckpt();
    }
    csv.flush();
    save_ckpt();
}

void train_stage2(Afa& afa, const Encoder& enc, const Generator& gen,
                  const DepthPrior& prior, const Dataset& ds, const Config& cfg,
                  uint64_t seed, const std::string& csv_path) {
    if (ds.scenes.empty()) throw std::invalid_argument("train_stage2: empty dataset");
    if (ds.res % cfg.train_render_res != 0)
        throw std::invalid_argument("train_stage2: dataset res not divisible by train_render_res");
    const int factor = ds.res / cfg.train_render_res;

    ParamFreeze freeze_gen(gen.params);
    ParamFreeze freeze_enc(enc.params);
    const FeatureCritic critic;
    const RenderSettings rs_full = render_settings(cfg, false);
    const RenderSettings rs_train = render_settings(cfg, true);
    const int tr = cfg.train_render_res;
    const CameraPose front = canonical_pose(cfg.cam_distance);
    const Intrinsics front_intr = config_intr(cfg);

    Adam opt(afa.params.vars(), cfg.lr_afa);
    std::ofstream csv = open_csv(csv_path, "iter,rec_l2,perc,id,bg,dfreg");

    for (int t = 0; t < cfg.stage2_iters; ++t) {
        Rng brng(derive_seed(seed, "s2-batch" + std::to_string(t)));
        const std::vector<SampleRef> batch = pick_batch(brng, ds, cfg.afa_batch);

        Var total, l2_sum, perc_sum, id_sum, df_sum, bg;
        auto acc = [](Var& a, const Var& x) { a = a ? add(a, x) : x; };
        for (size_t s = 0; s < batch.size(); ++s) {
            const ViewRecord& view = ds.scenes[batch[s].scene].views[batch[s].view];
            CameraPose pose;
            Intrinsics intr;
            parse_pose_label(view.label, &pose, &intr);

            std::vector<Var> rows;
            Var tapped;
            TriPlaneVar tp_w;
            RenderOutput wout;
            {
                NoGradGuard ng;
                WPlusGraph wp = enc.encode(view.image, Stage::kFine);
                rows = wp.rows;
                Generator::SynthResult sr = gen.forward(rows);
                tapped = sr.tapped;
                tp_w = sr.tp;
                wout = to_output(
                    render_triplane(sr.tp, gen.decoder, pose, intr, ds.res, ds.res, rs_full));
            }
            const std::vector<Vec3> pts =
                visible_points(wout.depth, pose, intr, wout.opacity, cfg.bg_tau);
            const TriMask mask = build_tri_mask(pts, cfg.plane_res, 1);

            AfaOut ao = afa.forward(view.image, wout.image, tapped);
            const std::vector<Var> tail(rows.begin() + gen.tap_layer + 1, rows.end());
            TriPlaneVar tp_f = gen.resume_forward(ao.fstar, tail);
            TriPlaneVar mixed = mix_triplane(tp_f, tp_w, mask);

            RenderGraph g = render_triplane(mixed, gen.decoder, pose, intr, tr, tr, rs_train);
            RecLossParts rp =
                reconstruction_loss(g.image, downsample_chw(view.image, factor), critic, cfg);
            Var dfreg = mean_all(square(ao.delta_f));
            acc(total, add(rp.total, scale(dfreg, cfg.lambda_dfreg)));
            acc(l2_sum, rp.l2);
            acc(perc_sum, rp.perc);
            acc(id_sum, rp.id);
            acc(df_sum, dfreg);
            if (s == 0 && cfg.bg_in_stage2 && cfg.use_bg_loss) {
                RenderGraph gc =
                    render_triplane(mixed, gen.decoder, front, front_intr, tr, tr, rs_train);
                bg = background_loss(gc.depth, background_mask(gc.opacity->value, cfg.bg_tau),
                                     prior);
            }
        }
        const Scalar inv_b = 1.0 / static_cast<Scalar>(batch.size());
        total = scale(total, inv_b);
        if (bg) total = add(total, scale(bg, cfg.lambda_bg));
        backward(total);
        opt.step();
        opt.zero_grad();

        if (t % cfg.log_every == 0 || t == cfg.stage2_iters - 1)
            csv << t << "," << value_of(l2_sum) * inv_b << "," << value_of(perc_sum) * inv_b
                << "," << value_of(id_sum) * inv_b << "," << (bg ? value_of(bg) : 0.0) << ","
                << value_of(df_sum) * inv_b << std::endl;
    }
    csv.flush();
}

InversionBundle invert_image(const Tensor& image, const Tensor& label,
                             const Encoder& enc, const Generator& gen,
                             const Afa* afa, const Config& cfg) {
    const auto& sh = image.shape();
    if (sh.size() != 3 || sh[0] != 3 || sh[1] != enc.input_res || sh[2] != enc.input_res)
        throw std::invalid_argument("invert_image: image must be [3,res,res] at encoder res");

    NoGradGuard ng;
    InversionBundle b;
    b.label = label;

    WPlusGraph wp = enc.encode(image, Stage::kFine);
    b.wplus = stack_row_values(wp.rows);
    Generator::SynthResult sr = gen.forward(wp.rows);

    CameraPose pose;
    Intrinsics intr;
    parse_pose_label(label, &pose, &intr);
    const RenderSettings rs = render_settings(cfg, false);
    const RenderOutput wout =
        to_output(render_triplane(sr.tp, gen.decoder, pose, intr, sh[1], sh[2], rs));

    if (afa) {
        const std::vector<Vec3> pts =
            visible_points(wout.depth, pose, intr, wout.opacity, cfg.bg_tau);
        b.mask = build_tri_mask(pts, cfg.plane_res, 1);
        AfaOut ao = afa->forward(image, wout.image, sr.tapped);
        b.fstar = ao.fstar->value;
        const std::vector<Var> tail(wp.rows.begin() + gen.tap_layer + 1, wp.rows.end());
        TriPlaneVar tp_f = gen.resume_forward(ao.fstar, tail);
        TriPlaneVar mixed = mix_triplane(tp_f, sr.tp, b.mask);
        b.mixed_xy = mixed.xy->value;
        b.mixed_xz = mixed.xz->value;
        b.mixed_yz = mixed.yz->value;
        b.afa_used = true;
    } else {
        b.mask = TriMask::zeros(cfg.plane_res);
        b.fstar = sr.tapped->value;
        b.mixed_xy = sr.tp.xy->value;
        b.mixed_xz = sr.tp.xz->value;
        b.mixed_yz = sr.tp.yz->value;
        b.afa_used = false;
    }
    return b;
}

void save_bundle(const InversionBundle& b, const std::string& path) {
    Checkpoint ck;
    ck.put("bundle/wplus", b.wplus, CkptDtype::F64);
    ck.put("bundle/fstar", b.fstar, CkptDtype::F64);
    ck.put("bundle/mask_xy", b.mask.xy, CkptDtype::U8);
    ck.put("bundle/mask_xz", b.mask.xz, CkptDtype::U8);
    ck.put("bundle/mask_yz", b.mask.yz, CkptDtype::U8);
    ck.put("bundle/mixed_xy", b.mixed_xy, CkptDtype::F64);
    ck.put("bundle/mixed_xz", b.mixed_xz, CkptDtype::F64);
    ck.put("bundle/mixed_yz", b.mixed_yz, CkptDtype::F64);
    ck.put("bundle/label", b.label, CkptDtype::F64);
    Tensor used = Tensor::zeros({1});
    used[0] = b.afa_used ? 1.0 : 0.0;
    ck.put("bundle/afa_used", used, CkptDtype::U8);
    ck.save(path);
}

InversionBundle load_bundle(const std::string& path) {
    const Checkpoint ck = Checkpoint::load(path);
    InversionBundle b;
    b.wplus = ck.get("bundle/wplus");
    b.fstar = ck.get("bundle/fstar");
    const Tensor mxy = ck.get("bundle/mask_xy");
    b.mask = TriMask::zeros(mxy.shape()[0]);
    b.mask.xy = mxy;
    b.mask.xz = ck.get("bundle/mask_xz");
    b.mask.yz = ck.get("bundle/mask_yz");
    b.mixed_xy = ck.get("bundle/mixed_xy");
    b.mixed_xz = ck.get("bundle/mixed_xz");
    b.mixed_yz = ck.get("bundle/mixed_yz");
    b.label = ck.get("bundle/label");
    b.afa_used = ck.get("bundle/afa_used")[0] > 0.5;
    return b;
}

RenderOutput render_bundle(const InversionBundle& b, const Generator& gen,
                           const CameraPose& pose, const Intrinsics& intr,
                           int res, const RenderSettings& rs) {
    NoGradGuard ng;
    TriPlaneVar tp = TriPlaneVar::from_tensors(b.mixed_xy, b.mixed_xz, b.mixed_yz);
    return to_output(render_triplane(tp, gen.decoder, pose, intr, res, res, rs));
}

RenderOutput edited_render(const InversionBundle& b, const Generator& gen,
                           const EditDirection& dir, Scalar strength,
                           const std::vector<int>& rows, const CameraPose& pose,
                           const Intrinsics& intr, int res,
                           const RenderSettings& rs) {
    NoGradGuard ng;
    const Tensor wp_hat = apply_edit(b.wplus, dir, strength, rows);
    const Tensor fstar_hat = edit_features(b.fstar, b.wplus, wp_hat, gen);
    const std::vector<Var> hat_rows = wplus_rows(wp_hat);
    const std::vector<Var> tail(hat_rows.begin() + gen.tap_layer + 1, hat_rows.end());
    TriPlaneVar tp_f = gen.resume_forward(constant(fstar_hat), tail);
    TriPlaneVar tp_w = gen.forward(hat_rows).tp;
    TriPlaneVar mixed = mix_triplane(tp_f, tp_w, b.mask);
    return to_output(render_triplane(mixed, gen.decoder, pose, intr, res, res, rs));
}

RenderOutput render_w(const Generator& gen, const Tensor& w,
                      const CameraPose& pose, const Intrinsics& intr, int res,
                      const RenderSettings& rs) {
    NoGradGuard ng;
    Var row = constant(w.reshaped({1, gen.d_w}));
    Generator::SynthResult sr = gen.forward(repeat_rows(row, gen.n_layers));
    return to_output(render_triplane(sr.tp, gen.decoder, pose, intr, res, res, rs));
}

}  // namespace tpinv
