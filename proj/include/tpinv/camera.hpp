#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tpinv/tensor.hpp"

namespace tpinv {

struct Vec3 {
    Scalar x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(Scalar s) const { return {x * s, y * s, z * s}; }
    Scalar dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    Scalar norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        const Scalar n = norm();
        return {x / n, y / n, z / n};
    }
};

struct Mat3 {
    // Row-major.
    Scalar m[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};

    Scalar at(int r, int c) const { return m[r * 3 + c]; }
    Scalar& at(int r, int c) { return m[r * 3 + c]; }
    Vec3 mul(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    Mat3 transposed() const {
        Mat3 t;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) t.at(r, c) = at(c, r);
        return t;
    }
    static Mat3 from_columns(const Vec3& a, const Vec3& b, const Vec3& c) {
        Mat3 r;
        r.m[0] = a.x; r.m[1] = b.x; r.m[2] = c.x;
        r.m[3] = a.y; r.m[4] = b.y; r.m[5] = c.y;
        r.m[6] = a.z; r.m[7] = b.z; r.m[8] = c.z;
        return r;
    }
    Scalar det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) -
               m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }
};

struct Intrinsics {
    Scalar fx = 1, fy = 1, cx = 0.5, cy = 0.5;
    void validate() const;
};

struct CameraPose {
    Mat3 rotation;     // camera-to-world
    Vec3 translation;  // camera center in world units
    void validate() const;
};

struct RayBundle {
    int height = 0, width = 0;
    std::vector<Vec3> origins;
    std::vector<Vec3> directions;
    const Vec3& origin(int i, int j) const { return origins[i * width + j]; }
    const Vec3& direction(int i, int j) const { return directions[i * width + j]; }
};

struct DepthMap {
    int height = 0, width = 0;
    Tensor values;  // [H,W], distance along the unit ray; 0 where nothing hit

    DepthMap() = default;
    DepthMap(int h, int w) : height(h), width(w), values(Tensor::zeros({h, w})) {}
};

CameraPose canonical_pose(Scalar distance);
CameraPose look_at(const Vec3& eye, const Vec3& target, const Vec3& up);
// Orbit around the origin: yaw about +y, then pitch; yaw=pitch=0 matches
// canonical_pose(distance).
CameraPose orbit_pose(Scalar yaw_rad, Scalar pitch_rad, Scalar distance);

Tensor pose_label(const CameraPose& pose, const Intrinsics& intr);  // [25]
void parse_pose_label(const Tensor& label, CameraPose* pose, Intrinsics* intr);

RayBundle generate_rays(const CameraPose& pose, const Intrinsics& intr, int height,
                        int width);

// One world point per pixel with depth > 0 and (if given) opacity >= tau.
std::vector<Vec3> backproject(const DepthMap& depth, const CameraPose& pose,
                              const Intrinsics& intr,
                              const Tensor* opacity = nullptr, Scalar tau = 0.5);

// Normalized pixel coords and distance along the unit ray; z <= 0 points (behind
// the camera) report dist <= 0.
void project_point(const Vec3& p, const CameraPose& pose, const Intrinsics& intr,
                   Scalar* u, Scalar* v, Scalar* dist);

void save_depth(const std::string& path, const DepthMap& depth);
DepthMap load_depth(const std::string& path);

}  // namespace tpinv
