#include "tpinv/dataset.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace tpinv {

namespace {

constexpr Scalar kPi = 3.14159265358979323846;
constexpr Scalar kBackdropZ = 0.8;
constexpr Scalar kBackdropR = 0.85;

Vec3 hue_rgb(Scalar h) {
    // Hue wheel at fixed saturation/value.
    const Scalar s = 0.6, v = 0.9;
    const Scalar c = v * s;
    const Scalar h6 = h * 6.0;
    const Scalar x = c * (1.0 - std::fabs(std::fmod(h6, 2.0) - 1.0));
    const Scalar m = v - c;
    Scalar r = 0, g = 0, b = 0;
    if (h6 < 1) { r = c; g = x; }
    else if (h6 < 2) { r = x; g = c; }
    else if (h6 < 3) { g = c; b = x; }
    else if (h6 < 4) { g = x; b = c; }
    else if (h6 < 5) { r = x; b = c; }
    else { r = c; b = x; }
    return Vec3{r + m, g + m, b + m};
}

const Vec3 kLight = Vec3{0.35, 0.5, -0.8}.normalized();

}  // namespace

void SceneSpec::validate() const {
    if (radius_min <= 0 || radius_max < radius_min)
        throw std::invalid_argument("scene spec: bad radius range");
    if (res < 2) throw std::invalid_argument("scene spec: bad resolution");
    if (yaws_deg.empty()) throw std::invalid_argument("scene spec: no views");
    for (Scalar y : yaws_deg)
        if (std::fabs(y) > 90)
            throw std::invalid_argument("scene spec: yaw outside +-90 degrees");
    if (radius_max + center_jitter >= 1.0)
        throw std::invalid_argument("scene spec: sphere can leave the unit cube");
}

SceneSpec scene_spec_from(const Config& cfg) {
    SceneSpec spec;
    spec.yaws_deg = cfg.dataset_yaws_deg;
    spec.cam_distance = cfg.cam_distance;
    spec.intr = Intrinsics{cfg.fx, cfg.fy, cfg.cx, cfg.cy};
    spec.res = cfg.render_res;
    spec.validate();
    return spec;
}

SceneFactors sample_factors(Rng& rng, const SceneSpec& spec) {
    SceneFactors f;
    f.radius = rng.uniform(spec.radius_min, spec.radius_max);
    f.center = Vec3{rng.uniform(-spec.center_jitter, spec.center_jitter),
                    rng.uniform(-spec.center_jitter, spec.center_jitter),
                    rng.uniform(-spec.center_jitter, spec.center_jitter)};
    f.hue = rng.uniform();
    f.shade = rng.uniform(spec.shade_min, spec.shade_max);
    return f;
}

AnalyticRender render_scene(const SceneFactors& f, const CameraPose& pose,
                            const Intrinsics& intr, int res) {
    AnalyticRender out;
    out.image = Tensor::zeros({3, res, res});
    out.depth = DepthMap(res, res);
    out.opacity = Tensor::zeros({res, res});

    RayBundle rays = generate_rays(pose, intr, res, res);
    const Vec3 base = hue_rgb(f.hue);
    for (int i = 0; i < res; ++i) {
        for (int j = 0; j < res; ++j) {
            const int p = i * res + j;
            const Vec3 o = rays.origins[p], d = rays.directions[p];

            Scalar t_hit = -1;
            Vec3 color{0, 0, 0};
            // Sphere.
            const Vec3 oc = o - f.center;
            const Scalar b = oc.dot(d);
            const Scalar disc = b * b - (oc.dot(oc) - f.radius * f.radius);
            if (disc > 0) {
                const Scalar t = -b - std::sqrt(disc);
                if (t > 1e-6) {
                    t_hit = t;
                    const Vec3 n = (o + d * t - f.center).normalized();
                    const Scalar lambert = std::max(0.0, n.dot(kLight));
                    const Scalar shade = 0.35 + 0.65 * lambert;
                    color = Vec3{base.x * shade, base.y * shade, base.z * shade};
                }
            }
            // Backdrop disk at z = kBackdropZ, facing -z.
            if (std::fabs(d.z) > 1e-12) {
                const Scalar t = (kBackdropZ - o.z) / d.z;
                if (t > 1e-6 && (t_hit < 0 || t < t_hit)) {
                    const Scalar px = o.x + t * d.x, py = o.y + t * d.y;
                    if (px * px + py * py <= kBackdropR * kBackdropR) {
                        t_hit = t;
                        const Scalar g = f.shade;
                        color = Vec3{g, g, g * 0.92};
                    }
                }
            }

            if (t_hit > 0) {
                out.image.at(0, i, j) = color.x;
                out.image.at(1, i, j) = color.y;
                out.image.at(2, i, j) = color.z;
                out.depth.values.at(i, j) = t_hit;
                out.opacity.at(i, j) = 1.0;
            }
        }
    }
    return out;
}

void save_cam(const Tensor& label, const std::string& path) {
    if (label.size() != 25) throw std::invalid_argument("camera label must have 25 floats");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    for (int i = 0; i < 25; ++i) {
        const float v = static_cast<float>(label[i]);
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        char buf[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                       static_cast<char>((bits >> 16) & 0xff),
                       static_cast<char>((bits >> 24) & 0xff)};
        f.write(buf, 4);
    }
}

Tensor load_cam(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    Tensor label({25});
    for (int i = 0; i < 25; ++i) {
        unsigned char buf[4];
        f.read(reinterpret_cast<char*>(buf), 4);
        if (!f) throw std::runtime_error("truncated camera file " + path);
        uint32_t bits = static_cast<uint32_t>(buf[0]) | (static_cast<uint32_t>(buf[1]) << 8) |
                        (static_cast<uint32_t>(buf[2]) << 16) |
                        (static_cast<uint32_t>(buf[3]) << 24);
        float v;
        std::memcpy(&v, &bits, 4);
        label[i] = v;
    }
    return label;
}

void make_dataset(const SceneSpec& spec, int n, uint64_t seed,
                  const std::string& dir) {
    if (n < 1) throw std::invalid_argument("make_dataset: n must be >= 1");
    spec.validate();
    fs::create_directories(dir);
    Rng rng(derive_seed(seed, "dataset"));
    for (int i = 0; i < n; ++i) {
        const SceneFactors f = sample_factors(rng, spec);
        const std::string sdir = dir + "/scene_" + std::to_string(i);
        fs::create_directories(sdir);
        for (size_t k = 0; k < spec.yaws_deg.size(); ++k) {
            const Scalar yaw = spec.yaws_deg[k] * kPi / 180.0;
            const Scalar pitch = spec.pitch_deg * kPi / 180.0;
            const CameraPose pose = orbit_pose(yaw, pitch, spec.cam_distance);
            AnalyticRender r = render_scene(f, pose, spec.intr, spec.res);
            const std::string stem = sdir + "/view_" + std::to_string(k);
            Image img(spec.res, spec.res);
            img.chw = r.image;
            save_png(stem + ".png", img);
            save_depth(stem + ".tpd", r.depth);
            save_cam(pose_label(pose, spec.intr), stem + ".cam");
        }
        json j;
        j["radius"] = f.radius;
        j["center"] = {f.center.x, f.center.y, f.center.z};
        j["hue"] = f.hue;
        j["shade"] = f.shade;
        j["yaws_deg"] = spec.yaws_deg;
        std::ofstream out(sdir + "/factors.json");
        out << j.dump(2) << "\n";
    }
}

Dataset load_dataset(const std::string& dir) {
    Dataset ds;
    for (int i = 0;; ++i) {
        const std::string sdir = dir + "/scene_" + std::to_string(i);
        if (!fs::exists(sdir + "/factors.json")) break;
        std::ifstream in(sdir + "/factors.json");
        json j;
        in >> j;
        SceneRecord scene;
        scene.factors.radius = j.at("radius").get<Scalar>();
        auto c = j.at("center");
        scene.factors.center = Vec3{c.at(0).get<Scalar>(), c.at(1).get<Scalar>(),
                                    c.at(2).get<Scalar>()};
        scene.factors.hue = j.at("hue").get<Scalar>();
        scene.factors.shade = j.at("shade").get<Scalar>();
        std::vector<Scalar> yaws = j.at("yaws_deg").get<std::vector<Scalar>>();
        for (size_t k = 0; k < yaws.size(); ++k) {
            const std::string stem = sdir + "/view_" + std::to_string(k);
            ViewRecord v;
            Image img = load_png(stem + ".png");
            v.image = img.chw;
            v.depth = load_depth(stem + ".tpd");
            v.label = load_cam(stem + ".cam");
            v.yaw_deg = yaws[k];
            scene.views.push_back(std::move(v));
            ds.res = img.height;
        }
        ds.scenes.push_back(std::move(scene));
    }
    if (ds.scenes.empty())
        throw std::runtime_error("no scenes found under " + dir);
    return ds;
}

}  // namespace tpinv
