#pragma once

#include <string>
#include <vector>

#include "tpinv/camera.hpp"
#include "tpinv/config.hpp"
#include "tpinv/image.hpp"
#include "tpinv/rng.hpp"

namespace tpinv {

// Generative factors of one synthetic scene: a shaded sphere in front of a
// bounded backdrop disk, empty space elsewhere.
struct SceneFactors {
    Scalar radius = 0.45;
    Vec3 center{0, 0, 0};
    Scalar hue = 0.0;   // [0,1) albedo hue
    Scalar shade = 0.5; // backdrop gray level
};

struct SceneSpec {
    Scalar radius_min = 0.35, radius_max = 0.55;
    Scalar center_jitter = 0.12;
    Scalar shade_min = 0.2, shade_max = 0.8;
    std::vector<Scalar> yaws_deg{-60, -30, 0, 30, 60};
    Scalar pitch_deg = 0.0;
    Scalar cam_distance = 2.7;
    Intrinsics intr{2.0, 2.0, 0.5, 0.5};
    int res = 64;
    void validate() const;
};
SceneSpec scene_spec_from(const Config& cfg);

SceneFactors sample_factors(Rng& rng, const SceneSpec& spec);

struct AnalyticRender {
    Tensor image;    // [3,res,res]
    DepthMap depth;  // distance along the unit ray; 0 where nothing is hit
    Tensor opacity;  // 1 where a surface is hit
};
AnalyticRender render_scene(const SceneFactors& f, const CameraPose& pose,
                            const Intrinsics& intr, int res);

struct ViewRecord {
    Tensor image;
    DepthMap depth;
    Tensor label;  // 25-float camera label
    Scalar yaw_deg = 0;
};
struct SceneRecord {
    std::vector<ViewRecord> views;
    SceneFactors factors;
};
struct Dataset {
    std::vector<SceneRecord> scenes;
    int res = 0;
};

void save_cam(const Tensor& label, const std::string& path);
Tensor load_cam(const std::string& path);

void make_dataset(const SceneSpec& spec, int n, uint64_t seed,
                  const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace tpinv
