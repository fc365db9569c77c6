#pragma once

#include <string>

#include "tpinv/checkpoint.hpp"
#include "tpinv/nn.hpp"

namespace tpinv {

// Scaled dot-product attention: q [n,d], k [m,d], v [m,c] -> [n,c], scale 1/sqrt(d).
Var scaled_dot_attention(const Var& q, const Var& k, const Var& v);

// F* = gamma (.) f + beta, elementwise.
Var film_modulate(const Var& f, const Var& gamma, const Var& beta);

struct AfaOut {
    Var fstar;    // [C_F, tap_res, tap_res]
    Var delta_f;  // fstar - f
    Var gamma;
    Var beta;
};

// Adaptive feature alignment: CNN features of the image residual are aligned
// to the tapped generator features by cross-attention, then modulate them with
// FiLM. Heads start at the identity (gamma 1, beta 0).
class Afa {
  public:
    Afa(int input_res, int tap_res, int tap_channels, int afa_channels, uint64_t seed);

    Var residual_features(const Var& delta) const;       // [3,in,in] -> [C_f,tap,tap]
    Var align(const Var& f, const Var& f_delta) const;   // -> [C_f,tap,tap]
    AfaOut film(const Var& f, const Var& f_align) const;
    AfaOut forward(const Tensor& image, const Tensor& image_wplus, const Var& f) const;

    void save(Checkpoint& ck) const;
    void load(const Checkpoint& ck);

    ParamStore params;
    int input_res, tap_res, tap_channels, afa_channels;
};

}  // namespace tpinv
