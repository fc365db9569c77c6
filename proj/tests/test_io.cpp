#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "tpinv/checkpoint.hpp"
#include "tpinv/config.hpp"
#include "tpinv/image.hpp"
#include "tpinv/rng.hpp"

using namespace tpinv;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)),
                       std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("checkpoint round trip is byte identical") {
    Checkpoint ck;
    Rng rng(1);
    Tensor a({3, 4});
    for (int i = 0; i < a.size(); ++i) a[i] = rng.normal();
    Tensor b({7});
    for (int i = 0; i < 7; ++i) b[i] = rng.uniform(0, 255);
    Tensor mask({2, 2});
    mask[0] = 1; mask[3] = 1;
    ck.put("gen/weight", a, CkptDtype::F64);
    ck.put("gen/small", b, CkptDtype::F32);
    ck.put("mask/tri", mask, CkptDtype::U8);
    ck.put_string("direction/attribute_name", "radius");

    const std::string p1 = "ck_tmp1.tpck", p2 = "ck_tmp2.tpck";
    ck.save(p1);
    Checkpoint back = Checkpoint::load(p1);
    back.save(p2);
    CHECK(slurp(p1) == slurp(p2));

    REQUIRE(back.has("gen/weight"));
    const Tensor& aw = back.get("gen/weight");
    REQUIRE(aw.same_shape(a));
    for (int i = 0; i < a.size(); ++i) CHECK(aw[i] == a[i]);  // f64 exact
    CHECK(back.get_string("direction/attribute_name") == "radius");
    CHECK(back.names("gen/").size() == 2);
    CHECK(back.names().size() == 4);
    CHECK_THROWS_AS(back.get("nope"), std::runtime_error);

    // Overwrite keeps position; merge overwrites.
    Checkpoint other;
    other.put("gen/weight", Tensor::full({3, 4}, 2.0));
    ck.merge(other);
    CHECK(ck.get("gen/weight")[0] == 2.0);
    CHECK(ck.names()[0] == "gen/weight");

    std::remove(p1.c_str());
    std::remove(p2.c_str());
    CHECK_THROWS_AS(Checkpoint::load("missing.tpck"), std::runtime_error);
}

TEST_CASE("png round trip") {
    Image img(5, 7);
    Rng rng(2);
    for (int i = 0; i < static_cast<int>(img.chw.size()); ++i)
        img.chw[i] = rng.uniform(0.0, 1.0);
    const std::string path = "img_tmp.png";
    save_png(path, img);
    Image back = load_png(path);
    REQUIRE(back.height == 5);
    REQUIRE(back.width == 7);
    for (int i = 0; i < static_cast<int>(img.chw.size()); ++i)
        CHECK(back.chw[i] == doctest::Approx(img.chw[i]).epsilon(0.5 / 255));
    // Saving a loaded image reproduces the exact bytes (quantization fixpoint).
    const std::string path2 = "img_tmp2.png";
    save_png(path2, back);
    CHECK(slurp(path) == slurp(path2));
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("downsample and mse") {
    Image img(4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = (y < 2) ? 1.0 : 0.0;
    Image half = downsample(img, 2);
    CHECK(half.height == 2);
    CHECK(half.at(0, 0, 0) == doctest::Approx(1.0));
    CHECK(half.at(0, 1, 0) == doctest::Approx(0.0));

    Image black(2, 2), mix(2, 2);
    mix.at(0, 0, 0) = 1; mix.at(1, 0, 0) = 1; mix.at(2, 0, 0) = 1;
    mix.at(0, 0, 1) = 1; mix.at(1, 0, 1) = 1; mix.at(2, 0, 1) = 1;
    CHECK(image_mse(mix, black) == doctest::Approx(0.5));
    CHECK(image_mse(mix, mix) == 0.0);
}

TEST_CASE("config defaults and overrides") {
    Config c = Config::from_json_text("{}");
    CHECK(c.lambda_l2 == 1.0);
    CHECK(c.lambda_perc == 0.8);
    CHECK(c.lambda_id == 0.25);
    CHECK(c.lambda_adv == 0.05);
    CHECK(c.lambda_bg == 5.0);
    CHECK(c.lambda_wreg == 0.001);
    CHECK(c.lambda_dfreg == 0.0001);
    CHECK(c.r1_gamma == 10.0);
    CHECK(c.lr_encoder == 1e-4);
    CHECK(c.lr_disc == 2e-5);
    CHECK(c.lr_afa == 2.5e-5);
    CHECK(c.batch_size == 3);
    CHECK(c.afa_batch == 2);
    CHECK(c.d_w == 128);
    CHECK(c.synth_layers == 8);
    CHECK(c.plane_res == 32);
    CHECK(c.plane_channels == 16);
    CHECK(c.samples_per_ray == 48);
    CHECK(c.render_res == 64);
    CHECK(c.r1_squared);
    REQUIRE(c.dataset_yaws_deg.size() == 5);
    CHECK(c.dataset_yaws_deg[0] == -60);
    CHECK(c.dataset_yaws_deg[4] == 60);

    Config o = Config::from_json_text("{\"lambda_bg\": 2.5, \"stage1_iters\": 10}");
    CHECK(o.lambda_bg == 2.5);
    CHECK(o.stage1_iters == 10);
    CHECK(o.lambda_l2 == 1.0);

    CHECK_THROWS_AS(Config::from_json_text("{\"lambda_bogus\": 1}"),
                    std::invalid_argument);
    CHECK_THROWS_AS(Config::from_json_text("{\"t_near\": 5.0}"), std::invalid_argument);
    CHECK_THROWS_AS(Config::from_json_text("not json"), std::invalid_argument);
    CHECK_THROWS_AS(Config::from_file("missing_config.json"), std::runtime_error);
}
