#include "tpinv/camera.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace tpinv {

void Intrinsics::validate() const {
    if (!(fx > 0) || !(fy > 0))
        throw std::invalid_argument("intrinsics: focal lengths must be positive");
    if (cx < 0 || cx > 1 || cy < 0 || cy > 1)
        throw std::invalid_argument("intrinsics: principal point outside [0,1]");
}

void CameraPose::validate() const {
    const Mat3 rt = rotation.transposed();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            Scalar acc = 0;
            for (int k = 0; k < 3; ++k) acc += rt.at(r, k) * rotation.at(k, c);
            const Scalar want = r == c ? 1.0 : 0.0;
            if (std::fabs(acc - want) > 1e-6)
                throw std::invalid_argument("pose: rotation not orthonormal");
        }
    if (std::fabs(rotation.det() - 1.0) > 1e-6)
        throw std::invalid_argument("pose: rotation determinant != +1");
}

CameraPose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
    const Vec3 fwd = target - eye;
    if (fwd.norm() < 1e-12) throw std::invalid_argument("look_at: eye == target");
    const Vec3 z = fwd.normalized();
    const Vec3 xr = z.cross(up);
    if (xr.norm() < 1e-9) throw std::invalid_argument("look_at: up parallel to view");
    const Vec3 x = xr.normalized();
    const Vec3 y = z.cross(x);
    CameraPose pose;
    pose.rotation = Mat3::from_columns(x, y, z);
    pose.translation = eye;
    return pose;
}

CameraPose canonical_pose(Scalar distance) {
    if (!(distance > 0))
        throw std::invalid_argument("canonical_pose: distance must be positive");
    return look_at({0, 0, -distance}, {0, 0, 0}, {0, 1, 0});
}

CameraPose orbit_pose(Scalar yaw_rad, Scalar pitch_rad, Scalar distance) {
    if (!(distance > 0))
        throw std::invalid_argument("orbit_pose: distance must be positive");
    const Scalar cp = std::cos(pitch_rad), sp = std::sin(pitch_rad);
    const Vec3 eye{distance * cp * std::sin(yaw_rad), distance * sp,
                   -distance * cp * std::cos(yaw_rad)};
    return look_at(eye, {0, 0, 0}, {0, 1, 0});
}

Tensor pose_label(const CameraPose& pose, const Intrinsics& intr) {
    Tensor label({25});
    int k = 0;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) label[k++] = pose.rotation.at(r, c);
        label[k++] = r == 0 ? pose.translation.x
                   : r == 1 ? pose.translation.y
                            : pose.translation.z;
    }
    label[k++] = 0; label[k++] = 0; label[k++] = 0; label[k++] = 1;
    const Scalar K[9] = {intr.fx, 0, intr.cx, 0, intr.fy, intr.cy, 0, 0, 1};
    for (int i = 0; i < 9; ++i) label[k++] = K[i];
    return label;
}

void parse_pose_label(const Tensor& label, CameraPose* pose, Intrinsics* intr) {
    if (label.size() != 25)
        throw std::invalid_argument("pose label must have 25 entries");
    CameraPose p;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) p.rotation.at(r, c) = label[r * 4 + c];
    p.translation = {label[3], label[7], label[11]};
    for (int i = 0; i < 4; ++i) {
        const Scalar want = i == 3 ? 1.0 : 0.0;
        if (std::fabs(label[12 + i] - want) > 1e-9)
            throw std::invalid_argument("pose label: bad homogeneous row");
    }
    Intrinsics in;
    in.fx = label[16];
    in.cx = label[18];
    in.fy = label[20];
    in.cy = label[21];
    p.validate();
    in.validate();
    if (pose) *pose = p;
    if (intr) *intr = in;
}

RayBundle generate_rays(const CameraPose& pose, const Intrinsics& intr, int height,
                        int width) {
    if (height < 1 || width < 1)
        throw std::invalid_argument("generate_rays: resolution must be >= 1");
    intr.validate();
    RayBundle rays;
    rays.height = height;
    rays.width = width;
    rays.origins.assign(static_cast<size_t>(height) * width, pose.translation);
    rays.directions.resize(static_cast<size_t>(height) * width);
    for (int i = 0; i < height; ++i)
        for (int j = 0; j < width; ++j) {
            const Scalar u = (j + 0.5) / width;
            const Scalar v = (i + 0.5) / height;
            const Vec3 cam{(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0};
            rays.directions[i * width + j] = pose.rotation.mul(cam.normalized());
        }
    return rays;
}

std::vector<Vec3> backproject(const DepthMap& depth, const CameraPose& pose,
                              const Intrinsics& intr, const Tensor* opacity,
                              Scalar tau) {
    if (depth.values.rank() != 2 || depth.values.dim(0) != depth.height ||
        depth.values.dim(1) != depth.width)
        throw std::invalid_argument("backproject: depth shape mismatch");
    if (opacity && !opacity->same_shape(depth.values))
        throw std::invalid_argument("backproject: opacity shape mismatch");
    RayBundle rays = generate_rays(pose, intr, depth.height, depth.width);
    std::vector<Vec3> points;
    points.reserve(static_cast<size_t>(depth.height) * depth.width);
    for (int i = 0; i < depth.height; ++i)
        for (int j = 0; j < depth.width; ++j) {
            const Scalar d = depth.values[i * depth.width + j];
            if (!std::isfinite(d) || d < 0)
                throw std::invalid_argument("backproject: depth must be finite and >= 0");
            if (d == 0) continue;
            if (opacity && (*opacity)[i * depth.width + j] < tau) continue;
            points.push_back(rays.origin(i, j) + rays.direction(i, j) * d);
        }
    return points;
}

void project_point(const Vec3& p, const CameraPose& pose, const Intrinsics& intr,
                   Scalar* u, Scalar* v, Scalar* dist) {
    const Vec3 rel = p - pose.translation;
    const Vec3 cam = pose.rotation.transposed().mul(rel);
    if (u) *u = intr.fx * (cam.x / cam.z) + intr.cx;
    if (v) *v = intr.fy * (cam.y / cam.z) + intr.cy;
    if (dist) *dist = cam.z > 0 ? rel.norm() : -rel.norm();
}

namespace {

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_depth(const std::string& path, const DepthMap& depth) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os.write("TPD1", 4);
    write_u32(os, static_cast<uint32_t>(depth.height));
    write_u32(os, static_cast<uint32_t>(depth.width));
    for (int i = 0; i < depth.values.size(); ++i) {
        const float f = static_cast<float>(depth.values[i]);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        write_u32(os, bits);
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

DepthMap load_depth(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "TPD1", 4) != 0)
        throw std::runtime_error("bad depth file magic: " + path);
    const uint32_t h = read_u32(is), w = read_u32(is);
    if (!is || h == 0 || w == 0 || h > 1u << 16 || w > 1u << 16)
        throw std::runtime_error("bad depth file header: " + path);
    DepthMap depth(static_cast<int>(h), static_cast<int>(w));
    for (uint32_t i = 0; i < h * w; ++i) {
        const uint32_t bits = read_u32(is);
        float f;
        std::memcpy(&f, &bits, 4);
        depth.values[i] = f;
    }
    if (!is) throw std::runtime_error("truncated depth file: " + path);
    return depth;
}

}  // namespace tpinv
