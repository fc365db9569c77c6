#pragma once

#include <vector>

#include "tpinv/config.hpp"
#include "tpinv/nn.hpp"
#include "tpinv/triplane.hpp"

namespace tpinv {

// Miniature style-based tri-plane generator. One modulated conv layer per w+
// row; the tri-plane head and rendering decoder are unmodulated.
class Generator {
  public:
    Generator(const Config& cfg, uint64_t seed);

    // Mapping network w = mapping(z, p). z [d_z] tensor or graph var; label [25].
    Var map_latent_var(const Var& z_row, const Tensor& label) const;  // [1,d_w]
    Tensor map_latent(const Tensor& z, const Tensor& label) const;    // [d_w]

    struct SynthResult {
        Var tapped;  // [C_s, R_tap, R_tap]
        TriPlaneVar tp;
    };
    // wp_rows: L vars of shape [1,d_w].
    SynthResult forward(const std::vector<Var>& wp_rows) const;
    // Continue from the tapped layer; tail_rows are the rows for layers
    // tap_layer+1 .. L-1.
    TriPlaneVar resume_forward(const Var& fstar,
                               const std::vector<Var>& tail_rows) const;

    void compute_w_avg(int n, uint64_t seed, const Tensor& canonical_label);

    void save(Checkpoint& ck) const;
    void load(const Checkpoint& ck);

    ParamStore params;
    RenderDecoder decoder;
    Tensor w_avg;  // [d_w]

    int d_z, d_w, n_layers, tap_layer, plane_channels, plane_res, synth_channels;
    std::vector<int> layer_res;

  private:
    Var synth_layer(const Var& x_in, int layer, const Var& w_row) const;
    int mapping_layers_, mapping_hidden_, base_res_, decoder_hidden_;
};

std::vector<Var> repeat_rows(const Var& w_row, int count);

}  // namespace tpinv
