#pragma once

#include <string>
#include <vector>

#include "efm/rng.hpp"
#include "efm/tensor.hpp"

namespace efm::nn {

/// Fully connected network: tanh on hidden layers, identity on the output.
struct Mlp {
    std::vector<int> layer_sizes;  // input, hidden..., output
    std::vector<Tensor> weights;   // [in_l, out_l]
    std::vector<Tensor> biases;    // [out_l]

    /// Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.
    static Mlp init(const std::vector<int>& layer_sizes, Rng& rng);
    /// All-zero weights and biases (forward then returns the final bias).
    static Mlp zeros(const std::vector<int>& layer_sizes);

    int input_width() const { return layer_sizes.front(); }
    int output_width() const { return layer_sizes.back(); }
    int layer_count() const { return static_cast<int>(weights.size()); }

    /// input: [B, input_width] -> [B, output_width].
    Tensor forward(const Tensor& input) const;

    std::vector<Tensor*> params();
    std::vector<const Tensor*> params() const;
    /// "<prefix>w0", "<prefix>b0", "<prefix>w1", ... for checkpoints.
    std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;

    /// Copies weight values from another identically shaped network.
    void copy_values_from(const Mlp& other);
    bool all_finite() const;
};

}  // namespace efm::nn
