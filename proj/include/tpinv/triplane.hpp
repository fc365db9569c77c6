#pragma once

#include "tpinv/autodiff.hpp"
#include "tpinv/camera.hpp"

namespace tpinv {

// Three axis-aligned feature planes, each [C,R,R]. Grid layout per plane:
// xy plane: col=x, row=y; xz plane: col=x, row=z; yz plane: col=y, row=z.
struct TriPlaneVar {
    Var xy, xz, yz;
    int channels = 0, res = 0;

    static TriPlaneVar from_tensors(Tensor pxy, Tensor pxz, Tensor pyz);
    TriPlaneVar detached() const;
    bool same_shape(const TriPlaneVar& o) const {
        return channels == o.channels && res == o.res;
    }
};

// World coordinate in [-1,1] to fractional grid index in [0,R-1] (clamping).
inline Scalar plane_grid_coord(Scalar world, int res) {
    Scalar g = (world + 1.0) * 0.5 * (res - 1);
    if (g < 0) g = 0;
    if (g > res - 1) g = res - 1;
    return g;
}

// Bilinear sample + sum over the three planes. points [N,3] in world coords
// (clamped to the cube). Returns [N,C].
Var sample_triplane(const TriPlaneVar& tp, const Tensor& points);

// Rendering decoder: features -> (density, rgb).
struct RenderDecoder {
    Var w1, b1, w2, b2;  // [C,hidden], [hidden], [hidden,4], [4]
    Var forward(const Var& feats) const;  // [N,C] -> [N,4] raw (pre-activation)
};

struct RenderGraph {
    Var image;    // [3,H,W], sigmoid colors composited
    Var depth;    // [H,W]
    Var opacity;  // [H,W]
    int height = 0, width = 0;
};

struct RenderSettings {
    int samples_per_ray = 48;
    Scalar t_near = 1.6, t_far = 3.8;
    Scalar opacity_eps = 1e-8;
};

// Volume-render explicit rays; origins/dirs [B,3]. Returns per-ray graphs:
// color [B,3], depth [B], opacity [B].
struct RayRenderGraph {
    Var color, depth, opacity;
};
RayRenderGraph render_rays(const TriPlaneVar& tp, const RenderDecoder& dec,
                           const Tensor& origins, const Tensor& dirs,
                           const RenderSettings& rs);

RenderGraph render_triplane(const TriPlaneVar& tp, const RenderDecoder& dec,
                            const CameraPose& pose, const Intrinsics& intr, int height,
                            int width, const RenderSettings& rs);

// Plain-tensor view of a rendered graph.
struct RenderOutput {
    Tensor image;    // [3,H,W]
    DepthMap depth;
    Tensor opacity;  // [H,W]
};
RenderOutput to_output(const RenderGraph& g);

}  // namespace tpinv
