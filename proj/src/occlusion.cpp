#include "tpinv/occlusion.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace tpinv {

using namespace ops;

namespace {

int nearest_cell(Scalar world, int res) {
    return static_cast<int>(std::lround(plane_grid_coord(world, res)));
}

void dilate(Tensor& m, int res, int cells) {
    if (cells <= 0) return;
    Tensor src = m;
    for (int r = 0; r < res; ++r)
        for (int c = 0; c < res; ++c) {
            if (src.at(r, c) == 0.0) continue;
            const int r0 = std::max(0, r - cells), r1 = std::min(res - 1, r + cells);
            const int c0 = std::max(0, c - cells), c1 = std::min(res - 1, c + cells);
            for (int i = r0; i <= r1; ++i)
                for (int j = c0; j <= c1; ++j) m.at(i, j) = 1.0;
        }
}

// Expand a [R,R] mask to [C,R,R] for channel-shared selection.
Tensor expand_mask(const Tensor& m, int channels, bool invert) {
    const int res = m.dim(0);
    Tensor out({channels, res, res});
    for (int c = 0; c < channels; ++c)
        for (int r = 0; r < res; ++r)
            for (int q = 0; q < res; ++q)
                out.at(c, r, q) = invert ? 1.0 - m.at(r, q) : m.at(r, q);
    return out;
}

Var mix_plane(const Var& fstar, const Var& wplus, const Tensor& m, int channels) {
    const Var keep = constant(expand_mask(m, channels, false));
    const Var drop = constant(expand_mask(m, channels, true));
    return add(mul(fstar, keep), mul(wplus, drop));
}

}  // namespace

TriMask TriMask::zeros(int res) {
    TriMask t;
    t.res = res;
    t.xy = Tensor::zeros({res, res});
    t.xz = Tensor::zeros({res, res});
    t.yz = Tensor::zeros({res, res});
    return t;
}

size_t TriMask::set_count() const {
    size_t n = 0;
    for (const Tensor* m : {&xy, &xz, &yz})
        for (size_t i = 0; i < m->size(); ++i)
            if ((*m)[i] != 0.0) ++n;
    return n;
}

std::vector<Vec3> visible_points(const DepthMap& depth, const CameraPose& pose,
                                 const Intrinsics& intr, const Tensor& opacity,
                                 Scalar tau) {
    if (opacity.rank() != 2 || opacity.dim(0) != depth.height ||
        opacity.dim(1) != depth.width)
        throw std::invalid_argument("visible_points: opacity shape mismatch");
    return backproject(depth, pose, intr, &opacity, tau);
}

TriMask build_tri_mask(const std::vector<Vec3>& points, int res, int dilation) {
    if (res < 2) throw std::invalid_argument("build_tri_mask: res must be >= 2");
    TriMask mask = TriMask::zeros(res);
    for (const Vec3& p : points) {
        const int ix = nearest_cell(p.x, res);
        const int iy = nearest_cell(p.y, res);
        const int iz = nearest_cell(p.z, res);
        mask.xy.at(iy, ix) = 1.0;
        mask.xz.at(iz, ix) = 1.0;
        mask.yz.at(iz, iy) = 1.0;
    }
    dilate(mask.xy, res, dilation);
    dilate(mask.xz, res, dilation);
    dilate(mask.yz, res, dilation);
    return mask;
}

TriPlaneVar mix_triplane(const TriPlaneVar& tp_fstar, const TriPlaneVar& tp_wplus,
                         const TriMask& mask) {
    if (!tp_fstar.same_shape(tp_wplus))
        throw std::invalid_argument("mix_triplane: tri-plane shape mismatch");
    if (mask.res != tp_fstar.res)
        throw std::invalid_argument("mix_triplane: mask resolution mismatch");
    TriPlaneVar out;
    out.channels = tp_fstar.channels;
    out.res = tp_fstar.res;
    out.xy = mix_plane(tp_fstar.xy, tp_wplus.xy, mask.xy, out.channels);
    out.xz = mix_plane(tp_fstar.xz, tp_wplus.xz, mask.xz, out.channels);
    out.yz = mix_plane(tp_fstar.yz, tp_wplus.yz, mask.yz, out.channels);
    return out;
}

void save_tri_mask(const std::string& path, const TriMask& mask) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write("TPM1", 4);
    const uint32_t r = static_cast<uint32_t>(mask.res);
    unsigned char hdr[4] = {static_cast<unsigned char>(r & 0xff),
                            static_cast<unsigned char>((r >> 8) & 0xff),
                            static_cast<unsigned char>((r >> 16) & 0xff),
                            static_cast<unsigned char>((r >> 24) & 0xff)};
    f.write(reinterpret_cast<char*>(hdr), 4);
    for (const Tensor* m : {&mask.xy, &mask.xz, &mask.yz})
        for (size_t i = 0; i < m->size(); ++i) {
            const char b = (*m)[i] != 0.0 ? 1 : 0;
            f.write(&b, 1);
        }
}

TriMask load_tri_mask(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::string(magic, 4) != "TPM1")
        throw std::runtime_error("bad tri-mask magic in " + path);
    unsigned char hdr[4];
    f.read(reinterpret_cast<char*>(hdr), 4);
    const uint32_t r = static_cast<uint32_t>(hdr[0]) | (static_cast<uint32_t>(hdr[1]) << 8) |
                       (static_cast<uint32_t>(hdr[2]) << 16) |
                       (static_cast<uint32_t>(hdr[3]) << 24);
    if (r < 2 || r > 65536) throw std::runtime_error("bad tri-mask resolution");
    TriMask mask = TriMask::zeros(static_cast<int>(r));
    for (Tensor* m : {&mask.xy, &mask.xz, &mask.yz})
        for (size_t i = 0; i < m->size(); ++i) {
            char b;
            f.read(&b, 1);
            if (!f) throw std::runtime_error("truncated tri-mask " + path);
            (*m)[i] = b ? 1.0 : 0.0;
        }
    return mask;
}

}  // namespace tpinv
