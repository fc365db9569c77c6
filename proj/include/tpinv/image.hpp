#pragma once

#include <string>

#include "tpinv/tensor.hpp"

namespace tpinv {

// RGB image, channels-first [3,H,W], values in [0,1].
struct Image {
    int height = 0, width = 0;
    Tensor chw;

    Image() = default;
    Image(int h, int w) : height(h), width(w), chw(Tensor::zeros({3, h, w})) {}

    Scalar& at(int c, int y, int x) { return chw.at(c, y, x); }
    Scalar at(int c, int y, int x) const { return chw.at(c, y, x); }
};

void save_png(const std::string& path, const Image& img);
Image load_png(const std::string& path);

// Box-filter downsample by an integer factor (shape divisibility required).
Image downsample(const Image& img, int factor);

Scalar image_mse(const Image& a, const Image& b);

}  // namespace tpinv
