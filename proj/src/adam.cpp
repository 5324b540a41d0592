#include "efm/adam.hpp"

#include <cmath>

namespace efm::nn {

void AdamState::step(const std::vector<Tensor*>& params) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i]->data().size(), 0.0f);
            v_[i].assign(params[i]->data().size(), 0.0f);
        }
    }
    if (m_.size() != params.size())
        throw ContractError("AdamState::step: parameter list size changed");

    step_count_ += 1;
    const float b1 = config_.beta1;
    const float b2 = config_.beta2;
    const float c1 = 1.0f - std::pow(b1, static_cast<float>(step_count_));
    const float c2 = 1.0f - std::pow(b2, static_cast<float>(step_count_));

    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        if (!p.has_grad())
            throw ContractError("AdamState::step: parameter " + std::to_string(i) +
                                " has no grad buffer");
        if (m_[i].size() != p.data().size())
            throw ContractError("AdamState::step: parameter " + std::to_string(i) +
                                " changed size");
        auto val = p.data();
        const auto g = p.grad();
        for (size_t k = 0; k < val.size(); ++k) {
            m_[i][k] = b1 * m_[i][k] + (1.0f - b1) * g[k];
            v_[i][k] = b2 * v_[i][k] + (1.0f - b2) * g[k] * g[k];
            const float mhat = m_[i][k] / c1;
            const float vhat = v_[i][k] / c2;
            val[k] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
        }
    }
}

void zero_grads(const std::vector<Tensor*>& params) {
    for (Tensor* p : params) p->zero_grad();
}

}  // namespace efm::nn
