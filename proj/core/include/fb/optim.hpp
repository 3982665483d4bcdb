#pragma once

#include <vector>

#include "fb/tensor.hpp"

namespace fb {

// Adam over a fixed set of parameter tensors. Gradients are passed per step in
// the same order the parameters were registered.
class Adam {
  public:
    explicit Adam(std::vector<Tensor *> params, float lr = 1e-3f, float beta1 = 0.9f,
                  float beta2 = 0.999f, float eps = 1e-8f);

    void step(const std::vector<Tensor> &grads);
    void set_lr(float lr) { lr_ = lr; }
    float lr() const { return lr_; }

  private:
    std::vector<Tensor *> params_;
    std::vector<Tensor> m_, v_;
    float lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

}  // namespace fb
