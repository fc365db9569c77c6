#pragma once

#include <string>
#include <vector>

#include "tpinv/afa.hpp"
#include "tpinv/dataset.hpp"
#include "tpinv/editing.hpp"
#include "tpinv/encoder.hpp"
#include "tpinv/generator.hpp"
#include "tpinv/losses.hpp"
#include "tpinv/occlusion.hpp"

namespace tpinv {

// Discriminator architecture is fixed here rather than in the config so that
// stage-1 checkpoints always reload into a matching net.
inline constexpr int kDiscHidden = 64;
inline constexpr int kDiscDepth = 2;

RenderSettings render_settings(const Config& cfg, bool train);

// Mean-pool [C,H,W] by an integer factor (H, W divisible by it).
Tensor downsample_chw(const Tensor& img, int factor);

// Clears requires_grad on every parameter for the guard's lifetime, so
// backward sweeps skip the frozen subgraph entirely.
struct ParamFreeze {
    explicit ParamFreeze(const ParamStore& store);
    ~ParamFreeze();
    ParamFreeze(const ParamFreeze&) = delete;
    ParamFreeze& operator=(const ParamFreeze&) = delete;

  private:
    const ParamStore& store_;
};

// Fits the generator to the dataset by multi-view ray reconstruction with one
// learned latent per scene, stored in `scene_latents` under "scene<i>".
// Finishes by recomputing w_avg and scoring held-out views.
struct GenTrainResult {
    Scalar heldout_psnr = 0;
    bool reached_target = false;
};
GenTrainResult train_toy_generator(Generator& gen, ParamStore& scene_latents,
                                   const Dataset& ds, const Config& cfg,
                                   uint64_t seed, const std::string& csv_path);

// Stage 1: alternating discriminator/encoder steps over the dataset. The
// generator stays frozen. Writes a CSV loss log and periodic checkpoints
// (encoder + discriminator) to ckpt_path.
void train_stage1(Encoder& enc, LatentDiscriminator& disc, const Generator& gen,
                  const DepthPrior& prior, const Dataset& ds, const Config& cfg,
                  uint64_t seed, const std::string& csv_path,
                  const std::string& ckpt_path);

// Stage 2: encoder and generator frozen, AFA trained on occlusion-aware mixed
// renders.
void train_stage2(Afa& afa, const Encoder& enc, const Generator& gen,
                  const DepthPrior& prior, const Dataset& ds, const Config& cfg,
                  uint64_t seed, const std::string& csv_path);

// Everything needed to re-render or edit one inversion.
struct InversionBundle {
    Tensor wplus;                         // [L,d_w]
    Tensor fstar;                         // [C_s,R_tap,R_tap]
    TriMask mask;                         // input-view visibility
    Tensor mixed_xy, mixed_xz, mixed_yz;  // [C,R,R]
    Tensor label;                         // input-view camera label [25]
    bool afa_used = false;
};

// encode -> render I_w+ -> (AFA -> resume -> mix) from the input view. A null
// afa selects the w+-only path: zero mask, mixed planes = w+ planes.
InversionBundle invert_image(const Tensor& image, const Tensor& label,
                             const Encoder& enc, const Generator& gen,
                             const Afa* afa, const Config& cfg);

void save_bundle(const InversionBundle& b, const std::string& path);
InversionBundle load_bundle(const std::string& path);

RenderOutput render_bundle(const InversionBundle& b, const Generator& gen,
                           const CameraPose& pose, const Intrinsics& intr,
                           int res, const RenderSettings& rs);

// apply_edit -> edit_features -> resume/mix with the bundle's input-view
// mask -> render. `rows` as in apply_edit (empty = all).
RenderOutput edited_render(const InversionBundle& b, const Generator& gen,
                           const EditDirection& dir, Scalar strength,
                           const std::vector<int>& rows, const CameraPose& pose,
                           const Intrinsics& intr, int res,
                           const RenderSettings& rs);

// Renders a single mapped latent broadcast over all layers.
RenderOutput render_w(const Generator& gen, const Tensor& w,
                      const CameraPose& pose, const Intrinsics& intr, int res,
                      const RenderSettings& rs);

}  // namespace tpinv
