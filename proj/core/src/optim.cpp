#include "fb/optim.hpp"

#include <cmath>

namespace fb {

Adam::Adam(std::vector<Tensor *> params, float lr, float beta1, float beta2, float eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    require(!params_.empty(), "adam: no parameters");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Tensor *p : params_) {
        require(p != nullptr, "adam: null parameter");
        m_.push_back(Tensor::zeros(p->shape));
        v_.push_back(Tensor::zeros(p->shape));
    }
}

void Adam::step(const std::vector<Tensor> &grads) {
    require(grads.size() == params_.size(), "adam: gradient count mismatch");
    ++t_;
    float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
    float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor &p = *params_[i];
        const Tensor &g = grads[i];
        require(g.same_shape(p), "adam: gradient shape mismatch at index " + std::to_string(i));
        float *mp = m_[i].data.data();
        float *vp = v_[i].data.data();
        for (int64_t j = 0; j < p.numel(); ++j) {
            float gj = g.data[j];
            mp[j] = beta1_ * mp[j] + (1.0f - beta1_) * gj;
            vp[j] = beta2_ * vp[j] + (1.0f - beta2_) * gj * gj;
            float mhat = mp[j] / bc1;
            float vhat = vp[j] / bc2;
            p.data[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
        p.check_finite("adam parameter");
    }
}

}  // namespace fb
