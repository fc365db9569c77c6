#include "tpinv/triplane.hpp"

#include <stdexcept>

namespace tpinv {

using namespace ops;

TriPlaneVar TriPlaneVar::from_tensors(Tensor pxy, Tensor pxz, Tensor pyz) {
    TriPlaneVar tp;
    if (pxy.rank() != 3 || !pxy.same_shape(pxz) || !pxy.same_shape(pyz) ||
        pxy.dim(1) != pxy.dim(2))
        throw std::invalid_argument("triplane: planes must be matching [C,R,R]");
    tp.channels = pxy.dim(0);
    tp.res = pxy.dim(1);
    tp.xy = constant(std::move(pxy));
    tp.xz = constant(std::move(pxz));
    tp.yz = constant(std::move(pyz));
    return tp;
}

TriPlaneVar TriPlaneVar::detached() const {
    TriPlaneVar tp;
    tp.channels = channels;
    tp.res = res;
    tp.xy = constant(xy->value);
    tp.xz = constant(xz->value);
    tp.yz = constant(yz->value);
    return tp;
}

Var sample_triplane(const TriPlaneVar& tp, const Tensor& points) {
    if (points.rank() != 2 || points.dim(1) != 3)
        throw std::invalid_argument("sample_triplane: points must be [N,3]");
    const int n = points.dim(0);
    const int R = tp.res;
    Tensor gx({n}), gy({n}), gz({n});
    for (int i = 0; i < n; ++i) {
        gx[i] = plane_grid_coord(points[i * 3 + 0], R);
        gy[i] = plane_grid_coord(points[i * 3 + 1], R);
        gz[i] = plane_grid_coord(points[i * 3 + 2], R);
    }
    Var fxy = plane_sample(tp.xy, gx, gy);
    Var fxz = plane_sample(tp.xz, gx, gz);
    Var fyz = plane_sample(tp.yz, gy, gz);
    return add(add(fxy, fxz), fyz);
}

Var RenderDecoder::forward(const Var& feats) const {
    Var h = leaky_relu(add_rowvec(matmul(feats, w1), b1), 0.2);
    return add_rowvec(matmul(h, w2), b2);
}

namespace {

RayRenderGraph composite(const TriPlaneVar& tp, const RenderDecoder& dec,
                         const Tensor& origins, const Tensor& dirs,
                         const RenderSettings& rs) {
    if (origins.rank() != 2 || origins.dim(1) != 3 || !origins.same_shape(dirs))
        throw std::invalid_argument("render_rays: origins/dirs must be [B,3]");
    if (!(rs.t_near < rs.t_far))
        throw std::invalid_argument("render_rays: t_near must be < t_far");
    if (rs.samples_per_ray < 2)
        throw std::invalid_argument("render_rays: need at least 2 samples per ray");
    const int B = origins.dim(0);
    const int S = rs.samples_per_ray;
    const Scalar delta = (rs.t_far - rs.t_near) / S;

    Tensor points({B * S, 3});
    Tensor tvals({B, S});
    for (int r = 0; r < B; ++r)
        for (int s = 0; s < S; ++s) {
            const Scalar t = rs.t_near + (s + 0.5) * delta;
            tvals[r * S + s] = t;
            for (int k = 0; k < 3; ++k)
                points[(r * S + s) * 3 + k] =
                    origins[r * 3 + k] + t * dirs[r * 3 + k];
        }

    Var feats = sample_triplane(tp, points);   // [B*S, C]
    Var raw = dec.forward(feats);              // [B*S, 4]
    Var sigma = softplus(reshape(slice_cols(raw, 0, 1), {B, S}));
    Var rgb = sigmoid(slice_cols(raw, 1, 4));  // [B*S, 3]

    Var sd = scale(sigma, delta);
    Var alpha = sub(constant(Tensor::full({B, S}, 1.0)), exp_op(neg(sd)));
    Var trans = exp_op(neg(cumsum_excl_rows(sd)));
    Var weights = mul(trans, alpha);           // [B,S]
    Var opacity = row_sum(weights);            // [B]

    std::vector<Var> channels;
    for (int c = 0; c < 3; ++c) {
        Var ch = reshape(slice_cols(rgb, c, c + 1), {B, S});
        channels.push_back(row_sum(mul(weights, ch)));  // [B]
    }
    Var color = transpose(stack_rows(channels));  // [B,3]

    Var wt = row_sum(mul(weights, constant(tvals)));
    Var depth = div(wt, maximum_scalar(opacity, rs.opacity_eps));

    RayRenderGraph out;
    out.color = color;
    out.depth = depth;
    out.opacity = opacity;
    return out;
}

}  // namespace

RayRenderGraph render_rays(const TriPlaneVar& tp, const RenderDecoder& dec,
                           const Tensor& origins, const Tensor& dirs,
                           const RenderSettings& rs) {
    return composite(tp, dec, origins, dirs, rs);
}

RenderGraph render_triplane(const TriPlaneVar& tp, const RenderDecoder& dec,
                            const CameraPose& pose, const Intrinsics& intr, int height,
                            int width, const RenderSettings& rs) {
    RayBundle rays = generate_rays(pose, intr, height, width);
    const int P = height * width;
    Tensor origins({P, 3}), dirs({P, 3});
    for (int i = 0; i < P; ++i) {
        origins[i * 3 + 0] = rays.origins[i].x;
        origins[i * 3 + 1] = rays.origins[i].y;
        origins[i * 3 + 2] = rays.origins[i].z;
        dirs[i * 3 + 0] = rays.directions[i].x;
        dirs[i * 3 + 1] = rays.directions[i].y;
        dirs[i * 3 + 2] = rays.directions[i].z;
    }
    RayRenderGraph rr = composite(tp, dec, origins, dirs, rs);
    RenderGraph g;
    g.height = height;
    g.width = width;
    g.image = reshape(transpose(rr.color), {3, height, width});
    g.depth = reshape(rr.depth, {height, width});
    g.opacity = reshape(rr.opacity, {height, width});
    return g;
}

RenderOutput to_output(const RenderGraph& g) {
    RenderOutput out;
    out.image = g.image->value;
    out.depth.height = g.height;
    out.depth.width = g.width;
    out.depth.values = g.depth->value;
    out.opacity = g.opacity->value;
    return out;
}

}  // namespace tpinv
