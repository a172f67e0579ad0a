#pragma once

#include <vector>

#include "kvl/params.hpp"

namespace kvl {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.95;  // first-moment coefficient
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 5e-4;  // L2 term added to the gradient
};

class Adam {
  public:
    Adam(ParamStore& store, AdamConfig cfg);

    // grads is aligned with the store; entries whose size does not match the
    // parameter are treated as zero gradients.
    void step(const std::vector<Tensor>& grads);

  private:
    ParamStore& store_;
    AdamConfig cfg_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    long t_ = 0;
};

}  // namespace kvl
