#pragma once

#include <cstdint>
#include <vector>

#include "efm/tensor.hpp"

namespace efm::nn {

struct AdamConfig {
    float learning_rate = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float epsilon = 1e-8f;
};

/// Bias-corrected Adam. Moment buffers are laid out per parameter in the
/// order the parameter list is first seen; the list must stay stable.
class AdamState {
public:
    explicit AdamState(AdamConfig config = {}) : config_(config) {}

    /// One update. Every parameter must carry a populated grad buffer.
    void step(const std::vector<Tensor*>& params);

    std::int64_t step_count() const { return step_count_; }
    const AdamConfig& config() const { return config_; }
    /// For schedules; takes effect on the next step.
    void set_learning_rate(float lr) { config_.learning_rate = lr; }

private:
    AdamConfig config_;
    std::int64_t step_count_ = 0;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
};

/// Convenience: zero the grads of a parameter list.
void zero_grads(const std::vector<Tensor*>& params);

}  // namespace efm::nn
