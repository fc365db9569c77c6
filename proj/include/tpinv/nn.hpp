#pragma once

#include <string>
#include <vector>

#include "tpinv/autodiff.hpp"
#include "tpinv/checkpoint.hpp"
#include "tpinv/rng.hpp"

namespace tpinv {

// Named parameter registry; insertion order fixes checkpoint layout and
// optimizer state alignment.
class ParamStore {
  public:
    Var add(const std::string& name, Tensor init);
    Var find(const std::string& name) const;
    const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
    std::vector<Var> vars() const;
    void zero_grads();
    void save_to(Checkpoint& ck, const std::string& prefix) const;
    // Copies values for every registered parameter; missing entries are errors.
    void load_from(const Checkpoint& ck, const std::string& prefix);

  private:
    std::vector<std::pair<std::string, Var>> items_;
};

class Adam {
  public:
    Adam(std::vector<Var> params, Scalar lr, Scalar beta1 = 0.9, Scalar beta2 = 0.999,
         Scalar eps = 1e-8);
    void step();
    void zero_grad();
    Scalar lr;

  private:
    std::vector<Var> params_;
    std::vector<Tensor> m_, v_;
    Scalar beta1_, beta2_, eps_;
    long t_ = 0;
};

Tensor normal_init(Rng& rng, std::vector<int> shape, Scalar stddev);
// He-style fan-in scaling for conv/linear weights.
Tensor fan_in_init(Rng& rng, std::vector<int> shape, Scalar gain = 1.0);

}  // namespace tpinv
