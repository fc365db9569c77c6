#pragma once

#include <string>
#include <vector>

#include "tpinv/generator.hpp"

namespace tpinv {

struct EditDirection {
    Tensor direction;  // [d_w], unit norm
    std::string attribute;
    Scalar train_accuracy = 0;
    Scalar mean_margin = 0;
};

// Linear max-margin separator by hinge-loss subgradient descent; the direction
// is the normalized weight vector. Needs n >= 20 with both classes present.
EditDirection fit_direction(const Tensor& latents, const std::vector<int>& labels,
                            const Config& cfg, const std::string& attribute = "");

// Bottom/top `q` quantiles of an attribute become class 0/1; the middle is
// dropped. Returns selected indices with their labels, sorted by index.
void quantile_split(const std::vector<Scalar>& values, Scalar q,
                    std::vector<size_t>* idx, std::vector<int>* labels);

// Row-uniform shift: rows in `rows` (empty = all) move by strength*direction.
Tensor apply_edit(const Tensor& wp, const EditDirection& dir, Scalar strength,
                  const std::vector<int>& rows = {});

// F_hat = fstar + tapped(wp_hat) - tapped(wp).
Tensor edit_features(const Tensor& fstar, const Tensor& wp, const Tensor& wp_hat,
                     const Generator& gen);

std::vector<Var> wplus_rows(const Tensor& wp);  // [L,d] -> L constants [1,d]

void save_direction(const EditDirection& dir, const std::string& path);
EditDirection load_direction(const std::string& path);

}  // namespace tpinv
