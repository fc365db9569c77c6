#pragma once

#include <vector>

#include "tpinv/config.hpp"
#include "tpinv/nn.hpp"
#include "tpinv/triplane.hpp"

namespace tpinv {

enum class Stage { kCoarse = 0, kMid = 1, kFine = 2 };

// Iteration thresholds: coarse below the first, mid below the second.
struct StageSchedule {
    int coarse_until = 200;
    int mid_until = 400;
    StageSchedule() = default;
    StageSchedule(int c, int m);
    Stage at(long iter) const {
        if (iter < coarse_until) return Stage::kCoarse;
        if (iter < mid_until) return Stage::kMid;
        return Stage::kFine;
    }
};

struct WPlusGraph {
    std::vector<Var> rows;    // L x [1,d_w]
    Var w0;                   // [1,d_w]
    std::vector<Var> deltas;  // L-1 x [1,d_w], pre-gating (rows 1..L-1)
};

// row_stage[i-1] owns row i. Rows whose stage is past `active` collapse to
// w_avg + w0.
std::vector<Var> assemble_wplus(const Var& w0, const std::vector<Var>& deltas,
                                const std::vector<Stage>& row_stage,
                                const Tensor& w_avg, Stage active);

// sqrt(sum_i ||row_i - row_0||^2), the delta-regularization magnitude.
Var w_delta_norm(const WPlusGraph& wp);

// Hierarchical inversion encoder: conv pyramid (self-attention where the
// window covers the map) feeding one cross-attention head per row group.
class Encoder {
  public:
    Encoder(const Config& cfg, uint64_t seed);

    struct Pyramid {
        Var query;   // [C,4,4]
        Var coarse;  // [C,8,8]
        Var mid;     // [C,16,16]
        Var fine;    // [C,32,32]
    };
    Pyramid backbone(const Var& image) const;  // image [3,res,res]

    WPlusGraph encode(const Var& image, Stage active) const;
    WPlusGraph encode(const Tensor& image, Stage active) const;

    const std::vector<Stage>& row_stages() const { return row_stages_; }

    void save(Checkpoint& ck) const;
    void load(const Checkpoint& ck);

    ParamStore params;
    Tensor w_avg;  // [d_w], copied from the generator before training

    int d_w, n_layers, channels, input_res;

  private:
    Var self_attention(const Var& x, const std::string& prefix) const;
    std::vector<Var> head_deltas(const std::string& prefix, const Var& level,
                                 const Var& query, int n_rows) const;
    std::vector<Stage> row_stages_;
};

}  // namespace tpinv
