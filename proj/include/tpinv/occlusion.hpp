#pragma once

#include <string>
#include <vector>

#include "tpinv/triplane.hpp"

namespace tpinv {

// Per-plane visibility grids aligned with (xy, xz, yz); entries in {0,1}.
struct TriMask {
    Tensor xy, xz, yz;  // [R,R] each
    int res = 0;

    static TriMask zeros(int res);
    size_t set_count() const;
};

// Back-projected world points for pixels with depth > 0 and opacity >= tau.
std::vector<Vec3> visible_points(const DepthMap& depth, const CameraPose& pose,
                                 const Intrinsics& intr, const Tensor& opacity,
                                 Scalar tau);

// Nearest-cell rasterization of the point set onto the three planes, then a
// square morphological dilation by `dilation` cells. Points are clamped to the
// unit cube first.
TriMask build_tri_mask(const std::vector<Vec3>& points, int res, int dilation = 1);

// Cell-wise select: masked cells from tp_fstar, the rest from tp_wplus. The
// mask is shared across channels. Differentiable in both tri-planes.
TriPlaneVar mix_triplane(const TriPlaneVar& tp_fstar, const TriPlaneVar& tp_wplus,
                         const TriMask& mask);

void save_tri_mask(const std::string& path, const TriMask& mask);
TriMask load_tri_mask(const std::string& path);

}  // namespace tpinv
