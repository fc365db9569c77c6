#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "doctest.h"
#include "tpinv/editing.hpp"

using namespace tpinv;

namespace {

Scalar cosine(const Tensor& a, const Tensor& b) {
    REQUIRE(a.size() == b.size());
    Scalar dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / std::sqrt(na * nb);
}

// Cloud separable along coordinate 0 with a clear margin.
void separable_cloud(int n, int d, uint64_t seed, Tensor* latents,
                     std::vector<int>* labels) {
    Rng rng(seed);
    *latents = Tensor({n, d});
    labels->resize(n);
    for (int i = 0; i < n; ++i) {
        const int lab = i % 2;
        (*labels)[i] = lab;
        latents->at(i, 0) = (lab ? 1.0 : -1.0) * rng.uniform(0.5, 1.5);
        for (int j = 1; j < d; ++j) latents->at(i, j) = 0.3 * rng.normal();
    }
}

}  // namespace

TEST_CASE("fit_direction recovers the generating axis") {
    Config cfg;
    Tensor latents;
    std::vector<int> labels;
    separable_cloud(200, 16, 99, &latents, &labels);

    const EditDirection dir = fit_direction(latents, labels, cfg, "axis0");
    Scalar norm = 0;
    for (size_t i = 0; i < dir.direction.size(); ++i)
        norm += dir.direction[i] * dir.direction[i];
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));

    Tensor e1 = Tensor::zeros({16});
    e1[0] = 1.0;
    CHECK(std::fabs(cosine(dir.direction, e1)) > 0.99);
    CHECK(dir.direction[0] > 0.0);  // positive class sits at +x
    CHECK(dir.train_accuracy == 1.0);
    CHECK(dir.attribute == "axis0");

    // Flipping every label flips the direction exactly.
    std::vector<int> flipped;
    for (int l : labels) flipped.push_back(1 - l);
    const EditDirection neg = fit_direction(latents, flipped, cfg, "axis0");
    for (size_t i = 0; i < dir.direction.size(); ++i)
        CHECK(neg.direction[i] == -dir.direction[i]);

    // Global input scaling leaves the direction stable.
    Tensor scaled = latents;
    for (size_t i = 0; i < scaled.size(); ++i) scaled[i] *= 3.0;
    const EditDirection dir2 = fit_direction(scaled, labels, cfg, "axis0");
    CHECK(std::fabs(cosine(dir.direction, dir2.direction)) > 0.99);
}

TEST_CASE("fit_direction input validation") {
    Config cfg;
    Tensor latents;
    std::vector<int> labels;
    separable_cloud(24, 4, 5, &latents, &labels);

    std::vector<int> ones(24, 1);
    CHECK_THROWS_AS(fit_direction(latents, ones, cfg), std::invalid_argument);

    Tensor small({10, 4});
    std::vector<int> small_labels(10, 0);
    small_labels[0] = 1;
    CHECK_THROWS_AS(fit_direction(small, small_labels, cfg), std::invalid_argument);

    std::vector<int> short_labels(5, 0);
    CHECK_THROWS_AS(fit_direction(latents, short_labels, cfg), std::invalid_argument);
}

TEST_CASE("quantile split labels the extremes") {
    std::vector<Scalar> values = {0.9, 0.1, 0.5, 0.8, 0.2, 0.55, 0.3, 0.7, 0.45, 0.6};
    std::vector<size_t> idx;
    std::vector<int> labels;
    quantile_split(values, 0.3, &idx, &labels);
    REQUIRE(idx.size() == 6);
    for (size_t i = 0; i < idx.size(); ++i) {
        if (labels[i] == 0) CHECK(values[idx[i]] <= 0.3);
        if (labels[i] == 1) CHECK(values[idx[i]] >= 0.7);
    }
    CHECK_THROWS_AS(quantile_split(values, 0.0, &idx, &labels), std::invalid_argument);
}

TEST_CASE("apply_edit linearity") {
    Rng rng(17);
    const int L = 8, d = 32;
    const Tensor wp = rng.normal_tensor({L, d});
    EditDirection dir;
    dir.direction = rng.normal_tensor({d});
    Scalar n = 0;
    for (size_t i = 0; i < dir.direction.size(); ++i) n += dir.direction[i] * dir.direction[i];
    for (size_t i = 0; i < dir.direction.size(); ++i) dir.direction[i] /= std::sqrt(n);

    // Strength zero leaves every bit alone.
    const Tensor same = apply_edit(wp, dir, 0.0);
    for (size_t i = 0; i < wp.size(); ++i) CHECK(same[i] == wp[i]);

    // Round trip within float tolerance.
    const Tensor back = apply_edit(apply_edit(wp, dir, 0.7), dir, -0.7);
    for (size_t i = 0; i < wp.size(); ++i)
        CHECK(back[i] == doctest::Approx(wp[i]).epsilon(1e-9));

    // Additivity.
    const Tensor two_step = apply_edit(apply_edit(wp, dir, 0.3), dir, 0.5);
    const Tensor one_step = apply_edit(wp, dir, 0.8);
    for (size_t i = 0; i < wp.size(); ++i)
        CHECK(two_step[i] == doctest::Approx(one_step[i]).epsilon(1e-12));

    // Row subsets leave other rows untouched.
    const Tensor subset = apply_edit(wp, dir, 1.0, {0, 2});
    for (int r = 0; r < L; ++r)
        for (int j = 0; j < d; ++j) {
            if (r == 0 || r == 2)
                CHECK(subset.at(r, j) == doctest::Approx(wp.at(r, j) + dir.direction[j]));
            else
                CHECK(subset.at(r, j) == wp.at(r, j));
        }
    CHECK_THROWS_AS(apply_edit(wp, dir, 1.0, {99}), std::invalid_argument);
}

TEST_CASE("edit_features identities on the generator") {
    Config cfg;
    Generator gen(cfg, 2024);
    Rng rng(8);
    const Tensor wp = rng.normal_tensor({gen.n_layers, gen.d_w}, 0.5);

    NoGradGuard ng;
    const Tensor f_w = gen.forward(wplus_rows(wp)).tapped->value;
    Rng rng2(9);
    Tensor fstar = f_w;
    for (size_t i = 0; i < fstar.size(); ++i) fstar[i] += 0.05 * rng2.normal();

    // wp_hat == wp: bit-exact pass-through.
    const Tensor same = edit_features(fstar, wp, wp, gen);
    for (size_t i = 0; i < fstar.size(); ++i) CHECK(same[i] == fstar[i]);

    // fstar == F^w: cancellation leaves F^{w_hat}.
    EditDirection dir;
    dir.direction = Tensor::zeros({gen.d_w});
    dir.direction[3] = 1.0;
    const Tensor wp_hat = apply_edit(wp, dir, 0.5);
    const Tensor f_hat = gen.forward(wplus_rows(wp_hat)).tapped->value;
    const Tensor cancel = edit_features(f_w, wp, wp_hat, gen);
    for (size_t i = 0; i < cancel.size(); ++i)
        CHECK(cancel[i] == doctest::Approx(f_hat[i]).epsilon(1e-12));

    Tensor bad({2, 2});
    CHECK_THROWS_AS(edit_features(bad, wp, wp, gen), std::invalid_argument);
}

TEST_CASE("direction files round trip") {
    Config cfg;
    Tensor latents;
    std::vector<int> labels;
    separable_cloud(40, 8, 3, &latents, &labels);
    const EditDirection dir = fit_direction(latents, labels, cfg, "radius");

    const std::string path = "/tmp/tpinv_dir.tpck";
    save_direction(dir, path);
    const EditDirection back = load_direction(path);
    CHECK(back.attribute == "radius");
    CHECK(back.train_accuracy == dir.train_accuracy);
    CHECK(back.mean_margin == dir.mean_margin);
    for (size_t i = 0; i < dir.direction.size(); ++i)
        CHECK(back.direction[i] == dir.direction[i]);
    std::remove(path.c_str());
}
