#include "tpinv/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace tpinv {

namespace {

std::vector<Scalar> gaussian_window() {
    std::vector<Scalar> w(11 * 11);
    const Scalar sigma = 1.5;
    Scalar sum = 0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
            const Scalar dy = i - 5, dx = j - 5;
            w[i * 11 + j] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            sum += w[i * 11 + j];
        }
    for (Scalar& v : w) v /= sum;
    return w;
}

}  // namespace

Scalar psnr_db(Scalar mse) {
    if (mse <= 0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

Scalar ssim_index(const Tensor& pred, const Tensor& gt) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("ssim: shape mismatch");
    if (pred.rank() != 3) throw std::invalid_argument("ssim: expected [C,H,W]");
    const int C = pred.dim(0), H = pred.dim(1), W = pred.dim(2);
    if (H < 11 || W < 11) throw std::invalid_argument("ssim: image smaller than the window");

    static const std::vector<Scalar> win = gaussian_window();
    const Scalar c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

    Scalar total = 0;
    int count = 0;
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y + 11 <= H; ++y) {
            for (int x = 0; x + 11 <= W; ++x) {
                Scalar mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
                for (int i = 0; i < 11; ++i)
                    for (int j = 0; j < 11; ++j) {
                        const Scalar w = win[i * 11 + j];
                        const Scalar a = pred.at(c, y + i, x + j);
                        const Scalar b = gt.at(c, y + i, x + j);
                        mx += w * a;
                        my += w * b;
                        mxx += w * a * a;
                        myy += w * b * b;
                        mxy += w * a * b;
                    }
                const Scalar vx = mxx - mx * mx;
                const Scalar vy = myy - my * my;
                const Scalar cov = mxy - mx * my;
                const Scalar num = (2 * mx * my + c1) * (2 * cov + c2);
                const Scalar den = (mx * mx + my * my + c1) * (vx + vy + c2);
                total += num / den;
                ++count;
            }
        }
    }
    return total / count;
}

Scalar geometry_error(const Tensor& pred_depth, const Tensor& gt_depth) {
    if (!pred_depth.same_shape(gt_depth))
        throw std::invalid_argument("geometry_error: shape mismatch");
    const size_t n = pred_depth.size();
    if (n == 0) throw std::invalid_argument("geometry_error: empty depth");

    auto standardize = [n](const Tensor& d) {
        std::vector<Scalar> out(n);
        Scalar mean = 0;
        for (size_t i = 0; i < n; ++i) mean += d[i];
        mean /= static_cast<Scalar>(n);
        Scalar var = 0;
        for (size_t i = 0; i < n; ++i) var += (d[i] - mean) * (d[i] - mean);
        var /= static_cast<Scalar>(n);
        const Scalar sd = std::sqrt(var);
        if (sd < 1e-12) return out;  // constant map: all zeros
        for (size_t i = 0; i < n; ++i) out[i] = (d[i] - mean) / sd;
        return out;
    };

    const std::vector<Scalar> a = standardize(pred_depth);
    const std::vector<Scalar> b = standardize(gt_depth);
    Scalar acc = 0;
    for (size_t i = 0; i < n; ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(acc / static_cast<Scalar>(n));
}

MetricsReport eval_metrics(const Tensor& pred, const Tensor& gt,
                           const Tensor& pred_depth, const Tensor& gt_depth) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("eval_metrics: image shape mismatch");
    MetricsReport r;
    Scalar acc = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const Scalar d = pred[i] - gt[i];
        acc += d * d;
    }
    r.mse = acc / static_cast<Scalar>(pred.size());
    r.psnr = psnr_db(r.mse);
    r.ssim = ssim_index(pred, gt);
    r.geo_err = geometry_error(pred_depth, gt_depth);
    return r;
}

}  // namespace tpinv
