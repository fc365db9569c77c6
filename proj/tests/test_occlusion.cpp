#include <cstdio>
#include <stdexcept>

#include "doctest.h"
#include "tpinv/dataset.hpp"
#include "tpinv/occlusion.hpp"
#include "tpinv/rng.hpp"

using namespace tpinv;
using namespace tpinv::ops;

namespace {

constexpr int kC = 16, kR = 32, kHidden = 32;

Scalar node_coord(int i, int res = kR) { return -1.0 + 2.0 * i / (res - 1); }

// Decoder passing 1.2*(plane content of channel ch) into the density head via a
// leaky-relu pair; color raws fixed.
struct CraftedScene {
    Tensor pxy = Tensor::zeros({kC, kR, kR});
    Tensor pxz = Tensor::zeros({kC, kR, kR});
    Tensor pyz = Tensor::zeros({kC, kR, kR});
    Tensor w1 = Tensor::zeros({kC, kHidden});
    Tensor b1 = Tensor::zeros({kHidden});
    Tensor w2 = Tensor::zeros({kHidden, 4});
    Tensor b2 = Tensor::zeros({4});

    TriPlaneVar tp() const { return TriPlaneVar::from_tensors(pxy, pxz, pyz); }
    RenderDecoder dec() const {
        RenderDecoder d;
        d.w1 = constant(w1);
        d.b1 = constant(b1);
        d.w2 = constant(w2);
        d.b2 = constant(b2);
        return d;
    }
};

// Opaque wall: density ramps up past z = z0.
CraftedScene crafted_wall(Scalar z0, Scalar gain) {
    CraftedScene s;
    for (int r = 0; r < kR; ++r)
        for (int c = 0; c < kR; ++c) s.pxz.at(1, r, c) = node_coord(r) - z0;
    s.w1.at(1, 0) = 1.0;
    s.w1.at(1, 1) = -1.0;
    s.b1[0] = 0.0;
    s.b1[1] = 0.0;
    s.w2.at(0, 0) = gain;
    s.w2.at(1, 0) = -gain;
    s.b2[1] = 2.0;
    s.b2[2] = 2.0;
    s.b2[3] = 2.0;
    return s;
}

// Opaque ball of radius r0 at the origin: density 1.2*gain*(r0^2 - |p|^2).
CraftedScene crafted_ball(Scalar r0, Scalar gain) {
    CraftedScene s;
    for (int r = 0; r < kR; ++r)
        for (int c = 0; c < kR; ++c) {
            const Scalar a = node_coord(r), b = node_coord(c);
            s.pxy.at(0, r, c) = b * b + a * a;  // x^2 + y^2
            s.pxz.at(1, r, c) = a * a;          // z^2
        }
    s.w1.at(0, 0) = -1.0;
    s.w1.at(0, 1) = 1.0;
    s.w1.at(1, 0) = -1.0;
    s.w1.at(1, 1) = 1.0;
    s.b1[0] = r0 * r0;
    s.b1[1] = -r0 * r0;
    s.w2.at(0, 0) = gain;
    s.w2.at(1, 0) = -gain;
    s.b2[1] = 3.0;
    s.b2[2] = -3.0;
    s.b2[3] = -3.0;
    return s;
}

CraftedScene crafted_empty() {
    CraftedScene s;
    s.b2[0] = -40.0;
    return s;
}

TriPlaneVar random_triplane(uint64_t seed) {
    Rng rng(seed);
    return TriPlaneVar::from_tensors(rng.normal_tensor({kC, kR, kR}),
                                     rng.normal_tensor({kC, kR, kR}),
                                     rng.normal_tensor({kC, kR, kR}));
}

Scalar max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.same_shape(b));
    Scalar m = 0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

bool bits_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("tri-mask rasterization basics") {
    CHECK_THROWS_AS(build_tri_mask({}, 1), std::invalid_argument);

    const TriMask empty = build_tri_mask({}, kR);
    CHECK(empty.set_count() == 0);

    // A single origin point marks one cell per plane plus the dilation ring.
    const TriMask one = build_tri_mask({Vec3{0, 0, 0}}, 33, 1);
    CHECK(one.xy.at(16, 16) == 1.0);
    CHECK(one.xz.at(16, 16) == 1.0);
    CHECK(one.yz.at(16, 16) == 1.0);
    CHECK(one.set_count() == 3 * 9);

    const TriMask bare = build_tri_mask({Vec3{0, 0, 0}}, 33, 0);
    CHECK(bare.set_count() == 3);

    // Out-of-cube points clamp to the border.
    const TriMask corner = build_tri_mask({Vec3{5, -5, 5}}, kR, 0);
    CHECK(corner.xy.at(0, kR - 1) == 1.0);
    CHECK(corner.xz.at(kR - 1, kR - 1) == 1.0);
    CHECK(corner.yz.at(kR - 1, 0) == 1.0);
}

TEST_CASE("visible points from an opaque wall sit at its depth") {
    const CraftedScene s = crafted_wall(0.5, 500.0);
    const CameraPose pose = canonical_pose(2.7);
    const Intrinsics intr{2.0, 2.0, 0.5, 0.5};
    RenderSettings rs;

    NoGradGuard ng;
    const RenderOutput out = to_output(render_triplane(s.tp(), s.dec(), pose, intr, 48, 48, rs));

    Tensor zero_opacity = Tensor::zeros({48, 48});
    CHECK(visible_points(out.depth, pose, intr, zero_opacity, 0.5).empty());

    const std::vector<Vec3> pts = visible_points(out.depth, pose, intr, out.opacity, 0.5);
    REQUIRE(pts.size() == 48u * 48u);
    const Scalar step = (rs.t_far - rs.t_near) / rs.samples_per_ray;
    for (const Vec3& p : pts) CHECK(std::fabs(p.z - 0.5) < 2 * step);

    Tensor bad = Tensor::zeros({4, 4});
    CHECK_THROWS_AS(visible_points(out.depth, pose, intr, bad, 0.5), std::invalid_argument);
}

TEST_CASE("tri-mask matches a ray-march visibility oracle on sphere scenes") {
    SceneSpec spec;
    spec.res = 64;
    Rng rng(4242);
    for (int trial = 0; trial < 4; ++trial) {
        const SceneFactors f = sample_factors(rng, spec);
        const Scalar yaw = rng.uniform(-1.0, 1.0);
        const CameraPose pose = orbit_pose(yaw, 0.0, spec.cam_distance);
        const AnalyticRender ar = render_scene(f, pose, spec.intr, spec.res);

        const std::vector<Vec3> pts =
            visible_points(ar.depth, pose, spec.intr, ar.opacity, 0.5);
        const TriMask mask = build_tri_mask(pts, kR, 1);

        // March every pixel ray and collect the first surface crossing.
        const RayBundle rays = generate_rays(pose, spec.intr, spec.res, spec.res);
        std::vector<Vec3> oracle_pts;
        const int steps = 1500;
        for (size_t k = 0; k < rays.origins.size(); ++k) {
            const Vec3 o = rays.origins[k], d = rays.directions[k];
            for (int si = 0; si <= steps; ++si) {
                const Scalar t = 1.6 + (3.8 - 1.6) * si / steps;
                const Vec3 p = o + d * t;
                const Vec3 pc = p - f.center;
                const bool in_sphere = pc.dot(pc) <= f.radius * f.radius;
                const bool in_disk =
                    p.z >= 0.8 && (p.x * p.x + p.y * p.y) <= 0.85 * 0.85;
                if (in_sphere || in_disk) {
                    oracle_pts.push_back(p);
                    break;
                }
            }
        }
        const TriMask oracle = build_tri_mask(oracle_pts, kR, 1);

        size_t agree = 0;
        const size_t total = 3u * kR * kR;
        for (int r = 0; r < kR; ++r)
            for (int c = 0; c < kR; ++c) {
                if (mask.xy.at(r, c) == oracle.xy.at(r, c)) ++agree;
                if (mask.xz.at(r, c) == oracle.xz.at(r, c)) ++agree;
                if (mask.yz.at(r, c) == oracle.yz.at(r, c)) ++agree;
            }
        CHECK(static_cast<Scalar>(agree) / total >= 0.99);
        CHECK(mask.set_count() > 0);
    }
}

TEST_CASE("mix identities") {
    const TriPlaneVar a = random_triplane(7);
    const TriPlaneVar b = random_triplane(8);

    TriMask ones = TriMask::zeros(kR);
    for (Tensor* m : {&ones.xy, &ones.xz, &ones.yz})
        for (size_t i = 0; i < m->size(); ++i) (*m)[i] = 1.0;
    TriMask zeros = TriMask::zeros(kR);

    Rng rng(5);
    TriMask coin = TriMask::zeros(kR);
    for (Tensor* m : {&coin.xy, &coin.xz, &coin.yz})
        for (size_t i = 0; i < m->size(); ++i) (*m)[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;

    NoGradGuard ng;
    CHECK(bits_equal(mix_triplane(a, b, ones).xy->value, a.xy->value));
    CHECK(bits_equal(mix_triplane(a, b, ones).yz->value, a.yz->value));
    CHECK(bits_equal(mix_triplane(a, b, zeros).xz->value, b.xz->value));

    // a == b: any mask returns the common planes bit-exactly.
    const TriPlaneVar mixed_same = mix_triplane(a, a, coin);
    CHECK(bits_equal(mixed_same.xy->value, a.xy->value));
    CHECK(bits_equal(mixed_same.xz->value, a.xz->value));
    CHECK(bits_equal(mixed_same.yz->value, a.yz->value));

    // Idempotence: mix(mix(a,b,m), b, m) == mix(a,b,m).
    const TriPlaneVar m1 = mix_triplane(a, b, coin);
    const TriPlaneVar m2 = mix_triplane(m1, b, coin);
    CHECK(bits_equal(m1.xy->value, m2.xy->value));
    CHECK(bits_equal(m1.xz->value, m2.xz->value));
    CHECK(bits_equal(m1.yz->value, m2.yz->value));

    // Complementarity: mix(a,b,m) + mix(b,a,m) == a + b.
    const TriPlaneVar swapped = mix_triplane(b, a, coin);
    for (int which = 0; which < 3; ++which) {
        const Tensor& ma = which == 0 ? m1.xy->value : which == 1 ? m1.xz->value : m1.yz->value;
        const Tensor& mb = which == 0 ? swapped.xy->value
                           : which == 1 ? swapped.xz->value
                                        : swapped.yz->value;
        const Tensor& ta = which == 0 ? a.xy->value : which == 1 ? a.xz->value : a.yz->value;
        const Tensor& tb = which == 0 ? b.xy->value : which == 1 ? b.xz->value : b.yz->value;
        for (size_t i = 0; i < ma.size(); ++i) CHECK(ma[i] + mb[i] == ta[i] + tb[i]);
    }

    TriMask wrong = TriMask::zeros(kR / 2);
    CHECK_THROWS_AS(mix_triplane(a, b, wrong), std::invalid_argument);
}

TEST_CASE("mix gradients flow through both tri-planes by mask") {
    Rng rng(11);
    Var pa = make_param(rng.normal_tensor({kC, kR, kR}));
    Var pb = make_param(rng.normal_tensor({kC, kR, kR}));
    TriPlaneVar a, b;
    a.xy = pa;
    a.xz = constant(rng.normal_tensor({kC, kR, kR}));
    a.yz = constant(rng.normal_tensor({kC, kR, kR}));
    a.channels = kC;
    a.res = kR;
    b.xy = pb;
    b.xz = constant(rng.normal_tensor({kC, kR, kR}));
    b.yz = constant(rng.normal_tensor({kC, kR, kR}));
    b.channels = kC;
    b.res = kR;

    TriMask coin = TriMask::zeros(kR);
    for (size_t i = 0; i < coin.xy.size(); ++i) coin.xy[i] = (i % 3 == 0) ? 1.0 : 0.0;

    const TriPlaneVar mixed = mix_triplane(a, b, coin);
    backward(sum_all(mixed.xy));
    for (int r = 0; r < kR; ++r)
        for (int c = 0; c < kR; ++c) {
            const Scalar ga = pa->grad.at(0, r, c);
            const Scalar gb = pb->grad.at(0, r, c);
            if (coin.xy.at(r, c) == 1.0) {
                CHECK(ga == 1.0);
                CHECK(gb == 0.0);
            } else {
                CHECK(ga == 0.0);
                CHECK(gb == 1.0);
            }
        }
}

TEST_CASE("mixed render matches the refined render at interior visible pixels") {
    const CraftedScene ball = crafted_ball(0.5, 2500.0);
    const CraftedScene empty = crafted_empty();
    const CameraPose pose = canonical_pose(2.7);
    const Intrinsics intr{2.0, 2.0, 0.5, 0.5};
    RenderSettings rs;
    const int res = 64;

    NoGradGuard ng;
    const RenderOutput ref = to_output(render_triplane(ball.tp(), ball.dec(), pose, intr, res, res, rs));
    const std::vector<Vec3> pts = visible_points(ref.depth, pose, intr, ref.opacity, 0.5);
    const TriMask mask = build_tri_mask(pts, kR, 1);

    const TriPlaneVar mixed = mix_triplane(ball.tp(), empty.tp(), mask);
    const RenderOutput got = to_output(render_triplane(mixed, ball.dec(), pose, intr, res, res, rs));

    // Interior test: the termination cell and its full neighborhood must be
    // masked on all three planes (skips dilation-boundary cells).
    auto interior = [&](const Tensor& m, Scalar wa, Scalar wb) {
        const int ia = static_cast<int>(std::lround(plane_grid_coord(wa, kR)));
        const int ib = static_cast<int>(std::lround(plane_grid_coord(wb, kR)));
        for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
                const int r = std::min(kR - 1, std::max(0, ia + dr));
                const int c = std::min(kR - 1, std::max(0, ib + dc));
                if (m.at(r, c) == 0.0) return false;
            }
        return true;
    };

    const RayBundle rays = generate_rays(pose, intr, res, res);
    Scalar acc = 0;
    int counted = 0;
    for (int i = 0; i < res; ++i)
        for (int j = 0; j < res; ++j) {
            if (ref.opacity.at(i, j) < 0.95) continue;
            const Vec3 p = rays.origin(i, j) + rays.direction(i, j) * ref.depth.values.at(i, j);
            if (!interior(mask.xy, p.y, p.x)) continue;
            if (!interior(mask.xz, p.z, p.x)) continue;
            if (!interior(mask.yz, p.z, p.y)) continue;
            for (int c = 0; c < 3; ++c)
                acc += std::fabs(got.image.at(c, i, j) - ref.image.at(c, i, j));
            counted += 3;
        }
    REQUIRE(counted > 300);
    CHECK(acc / counted < 1e-3);
}

TEST_CASE("tri-mask files round trip") {
    Rng rng(21);
    TriMask mask = TriMask::zeros(17);
    for (Tensor* m : {&mask.xy, &mask.xz, &mask.yz})
        for (size_t i = 0; i < m->size(); ++i) (*m)[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;

    const std::string path = "/tmp/tpinv_test_mask.tpm";
    save_tri_mask(path, mask);
    const TriMask back = load_tri_mask(path);
    CHECK(back.res == 17);
    CHECK(bits_equal(back.xy, mask.xy));
    CHECK(bits_equal(back.xz, mask.xz));
    CHECK(bits_equal(back.yz, mask.yz));
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_tri_mask(path), std::runtime_error);
}
