#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "tpinv/camera.hpp"
#include "tpinv/rng.hpp"

using namespace tpinv;

TEST_CASE("canonical pose sits on -z looking at origin") {
    CameraPose p = canonical_pose(2.7);
    p.validate();
    CHECK(p.translation.x == doctest::Approx(0));
    CHECK(p.translation.y == doctest::Approx(0));
    CHECK(p.translation.z == doctest::Approx(-2.7));
    // Forward axis (third rotation column) is +z.
    CHECK(p.rotation.at(0, 2) == doctest::Approx(0));
    CHECK(p.rotation.at(1, 2) == doctest::Approx(0));
    CHECK(p.rotation.at(2, 2) == doctest::Approx(1));
    // Rotation independent of distance, and deterministic.
    CameraPose q = canonical_pose(1.0);
    for (int i = 0; i < 9; ++i) CHECK(p.rotation.m[i] == q.rotation.m[i]);
    CameraPose r = canonical_pose(2.7);
    for (int i = 0; i < 9; ++i) CHECK(p.rotation.m[i] == r.rotation.m[i]);
    CHECK(p.translation.z == r.translation.z);

    CHECK_THROWS_AS(canonical_pose(0.0), std::invalid_argument);
    CHECK_THROWS_AS(canonical_pose(-1.0), std::invalid_argument);
}

TEST_CASE("pose label layout and round trip") {
    CameraPose ident;
    Intrinsics intr{1, 1, 0.5, 0.5};
    Tensor label = pose_label(ident, intr);
    const Scalar want[25] = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0,
                             0, 0, 1, 1, 0, 0.5, 0, 1, 0.5, 0, 0, 1};
    REQUIRE(label.size() == 25);
    for (int i = 0; i < 25; ++i) CHECK(label[i] == doctest::Approx(want[i]));

    Tensor canon = pose_label(canonical_pose(2.7), intr);
    CHECK(canon[3] == doctest::Approx(0));
    CHECK(canon[7] == doctest::Approx(0));
    CHECK(canon[11] == doctest::Approx(-2.7));

    Rng rng(31337);
    for (int trial = 0; trial < 100; ++trial) {
        const Scalar yaw = rng.uniform(-1.4, 1.4);
        const Scalar pitch = rng.uniform(-0.8, 0.8);
        const Scalar dist = rng.uniform(1.5, 4.0);
        Intrinsics in{rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0),
                      rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
        CameraPose pose = orbit_pose(yaw, pitch, dist);
        CameraPose back;
        Intrinsics bintr;
        parse_pose_label(pose_label(pose, in), &back, &bintr);
        for (int i = 0; i < 9; ++i) CHECK(back.rotation.m[i] == pose.rotation.m[i]);
        CHECK(back.translation.x == pose.translation.x);
        CHECK(back.translation.y == pose.translation.y);
        CHECK(back.translation.z == pose.translation.z);
        CHECK(bintr.fx == in.fx);
        CHECK(bintr.fy == in.fy);
        CHECK(bintr.cx == in.cx);
        CHECK(bintr.cy == in.cy);
    }
}

TEST_CASE("generate_rays principal ray and pinhole origins") {
    CameraPose ident;
    Intrinsics intr{2, 2, 0.5, 0.5};
    // Odd resolution so a pixel center lands on the principal point.
    RayBundle rays = generate_rays(ident, intr, 9, 9);
    const Vec3& d = rays.direction(4, 4);
    CHECK(d.x == doctest::Approx(0).epsilon(1e-12));
    CHECK(d.y == doctest::Approx(0).epsilon(1e-12));
    CHECK(d.z == doctest::Approx(1));

    CameraPose pose = orbit_pose(0.5, 0.2, 2.7);
    RayBundle r2 = generate_rays(pose, intr, 8, 8);
    for (const Vec3& o : r2.origins) {
        CHECK(o.x == pose.translation.x);
        CHECK(o.y == pose.translation.y);
        CHECK(o.z == pose.translation.z);
    }
    for (const Vec3& dir : r2.directions)
        CHECK(dir.norm() == doctest::Approx(1).epsilon(1e-9));

    CHECK_THROWS_AS(generate_rays(ident, Intrinsics{0, 1, 0.5, 0.5}, 4, 4),
                    std::invalid_argument);
    CHECK_THROWS_AS(generate_rays(ident, intr, 0, 4), std::invalid_argument);
}

TEST_CASE("corner ray agrees with independent per-pixel matrix computation") {
    CameraPose pose = canonical_pose(2.7);
    Intrinsics intr{2.0, 2.0, 0.5, 0.5};
    const int H = 64, W = 64;
    RayBundle rays = generate_rays(pose, intr, H, W);
    // Scalar re-derivation: d = R * normalize(K^-1 [u v 1]) with explicit K^-1.
    const int corners[4][2] = {{0, 0}, {0, W - 1}, {H - 1, 0}, {H - 1, W - 1}};
    for (auto& c : corners) {
        const Scalar u = (c[1] + 0.5) / W;
        const Scalar v = (c[0] + 0.5) / H;
        const Scalar kinv[9] = {1 / intr.fx, 0, -intr.cx / intr.fx,
                                0, 1 / intr.fy, -intr.cy / intr.fy,
                                0, 0, 1};
        const Scalar hx = kinv[0] * u + kinv[1] * v + kinv[2];
        const Scalar hy = kinv[3] * u + kinv[4] * v + kinv[5];
        const Scalar hz = kinv[6] * u + kinv[7] * v + kinv[8];
        const Scalar n = std::sqrt(hx * hx + hy * hy + hz * hz);
        Scalar world[3];
        for (int r = 0; r < 3; ++r)
            world[r] = (pose.rotation.at(r, 0) * hx + pose.rotation.at(r, 1) * hy +
                        pose.rotation.at(r, 2) * hz) / n;
        const Vec3& d = rays.direction(c[0], c[1]);
        CHECK(std::fabs(d.x - world[0]) < 1e-6);
        CHECK(std::fabs(d.y - world[1]) < 1e-6);
        CHECK(std::fabs(d.z - world[2]) < 1e-6);
    }
}

TEST_CASE("backproject basics") {
    Intrinsics intr{1, 1, 0.5, 0.5};
    CameraPose ident;
    DepthMap depth(9, 9);
    depth.values[4 * 9 + 4] = 1.7;
    auto pts = backproject(depth, ident, intr);
    REQUIRE(pts.size() == 1);
    CHECK(pts[0].x == doctest::Approx(0).epsilon(1e-12));
    CHECK(pts[0].y == doctest::Approx(0).epsilon(1e-12));
    CHECK(pts[0].z == doctest::Approx(1.7));

    CameraPose shifted;
    shifted.translation = {0.3, -0.1, 0.9};
    auto pts2 = backproject(depth, shifted, intr);
    REQUIRE(pts2.size() == 1);
    CHECK(pts2[0].x == doctest::Approx(0.3));
    CHECK(pts2[0].y == doctest::Approx(-0.1));
    CHECK(pts2[0].z == doctest::Approx(1.7 + 0.9));

    // Opacity mask drops pixels below tau.
    Tensor op = Tensor::zeros({9, 9});
    CHECK(backproject(depth, ident, intr, &op, 0.5).empty());
    op[4 * 9 + 4] = 0.9;
    CHECK(backproject(depth, ident, intr, &op, 0.5).size() == 1);

    DepthMap bad(4, 4);
    bad.values[0] = -1;
    CHECK_THROWS_AS(backproject(bad, ident, intr), std::invalid_argument);
    DepthMap mism(4, 4);
    mism.height = 5;
    CHECK_THROWS_AS(backproject(mism, ident, intr), std::invalid_argument);
}

TEST_CASE("project/backproject round trip") {
    Intrinsics intr{2.0, 2.0, 0.5, 0.5};
    CameraPose pose = orbit_pose(-0.7, 0.25, 2.7);
    const int H = 16, W = 16;
    Rng rng(555);
    DepthMap depth(H, W);
    for (int i = 0; i < H * W; ++i) depth.values[i] = rng.uniform(1.0, 3.0);
    auto pts = backproject(depth, pose, intr);
    REQUIRE(static_cast<int>(pts.size()) == H * W);
    int k = 0;
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j, ++k) {
            Scalar u, v, dist;
            project_point(pts[k], pose, intr, &u, &v, &dist);
            CHECK(std::fabs(u * W - 0.5 - j) < 0.51);
            CHECK(std::fabs(v * H - 0.5 - i) < 0.51);
            CHECK(std::fabs(dist - depth.values[i * W + j]) /
                      depth.values[i * W + j] < 1e-5);
        }
}

TEST_CASE("rigid-transform equivariance of backprojection") {
    // Rotating the camera and comparing against points backprojected in the
    // rotated frame must agree with rotating the original points.
    Intrinsics intr{2.0, 2.0, 0.5, 0.5};
    CameraPose pose = orbit_pose(0.4, -0.15, 2.5);
    const int H = 8, W = 8;
    Rng rng(777);
    DepthMap depth(H, W);
    for (int i = 0; i < H * W; ++i) depth.values[i] = rng.uniform(1.5, 3.5);
    auto pts = backproject(depth, pose, intr);

    // Rigid transform: rotate 30 deg about y, translate by (0.2, -0.4, 0.1).
    const Scalar c = std::cos(0.5236), s = std::sin(0.5236);
    Mat3 R;
    R.m[0] = c;  R.m[1] = 0; R.m[2] = s;
    R.m[3] = 0;  R.m[4] = 1; R.m[5] = 0;
    R.m[6] = -s; R.m[7] = 0; R.m[8] = c;
    const Vec3 t{0.2, -0.4, 0.1};

    CameraPose moved;
    for (int r = 0; r < 3; ++r)
        for (int cc = 0; cc < 3; ++cc) {
            Scalar acc = 0;
            for (int kk = 0; kk < 3; ++kk) acc += R.at(r, kk) * pose.rotation.at(kk, cc);
            moved.rotation.at(r, cc) = acc;
        }
    moved.translation = R.mul(pose.translation) + t;
    auto pts2 = backproject(depth, moved, intr);

    REQUIRE(pts.size() == pts2.size());
    for (size_t i = 0; i < pts.size(); ++i) {
        const Vec3 want = R.mul(pts[i]) + t;
        CHECK(std::fabs(pts2[i].x - want.x) < 1e-9);
        CHECK(std::fabs(pts2[i].y - want.y) < 1e-9);
        CHECK(std::fabs(pts2[i].z - want.z) < 1e-9);
    }
}

TEST_CASE("depth file round trip") {
    DepthMap d(3, 5);
    Rng rng(99);
    for (int i = 0; i < 15; ++i) d.values[i] = rng.uniform(0.0, 4.0);
    const std::string path = "test_depth_tmp.bin";
    save_depth(path, d);
    DepthMap back = load_depth(path);
    REQUIRE(back.height == 3);
    REQUIRE(back.width == 5);
    for (int i = 0; i < 15; ++i)
        CHECK(back.values[i] == doctest::Approx(d.values[i]).epsilon(1e-6));
    std::remove(path.c_str());
    CHECK_THROWS(load_depth("no_such_file.bin"));
}

TEST_CASE("orbit pose determinant and orthonormality across sweep") {
    for (Scalar yaw = -1.2; yaw <= 1.2; yaw += 0.3)
        for (Scalar pitch = -0.6; pitch <= 0.6; pitch += 0.3) {
            CameraPose p = orbit_pose(yaw, pitch, 2.7);
            p.validate();
            // Still looking at the origin.
            Vec3 fwd{p.rotation.at(0, 2), p.rotation.at(1, 2), p.rotation.at(2, 2)};
            Vec3 to_origin = (Vec3{0, 0, 0} - p.translation).normalized();
            CHECK(fwd.dot(to_origin) == doctest::Approx(1).epsilon(1e-9));
        }
}
