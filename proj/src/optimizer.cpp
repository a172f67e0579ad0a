#include "kvl/optimizer.hpp"

#include <cmath>

namespace kvl {

Adam::Adam(ParamStore& store, AdamConfig cfg) : store_(store), cfg_(cfg) {
    m_.reserve(store.size());
    v_.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
        m_.emplace_back(store.value(i).shape());
        v_.emplace_back(store.value(i).shape());
    }
}

void Adam::step(const std::vector<Tensor>& grads) {
    if (grads.size() != store_.size()) throw ArgError("Adam::step: gradient vector misaligned with store");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t id = 0; id < store_.size(); ++id) {
        Tensor& p = store_.value(id);
        const bool has_grad = grads[id].size() == p.size();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double g = (has_grad ? grads[id][i] : 0.0) + cfg_.weight_decay * p[i];
            m_[id][i] = cfg_.beta1 * m_[id][i] + (1.0 - cfg_.beta1) * g;
            v_[id][i] = cfg_.beta2 * v_[id][i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m_[id][i] / bc1;
            const double vhat = v_[id][i] / bc2;
            p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

}  // namespace kvl
