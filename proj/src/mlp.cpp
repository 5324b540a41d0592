#include "efm/mlp.hpp"

#include <cmath>

namespace efm::nn {

static void check_sizes(const std::vector<int>& layer_sizes) {
    if (layer_sizes.size() < 2) throw ContractError("Mlp: need at least input and output widths");
    for (int w : layer_sizes)
        if (w <= 0) throw ContractError("Mlp: layer widths must be positive");
}

Mlp Mlp::init(const std::vector<int>& layer_sizes, Rng& rng) {
    check_sizes(layer_sizes);
    Mlp net;
    net.layer_sizes = layer_sizes;
    for (size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
        const int fan_in = layer_sizes[l];
        const int fan_out = layer_sizes[l + 1];
        const float bound = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
        std::vector<float> w(static_cast<size_t>(fan_in) * fan_out);
        for (float& v : w) v = rng.uniform(-bound, bound);
        net.weights.push_back(Tensor::param({fan_in, fan_out}, std::move(w)));
        net.biases.push_back(
            Tensor::param({fan_out}, std::vector<float>(static_cast<size_t>(fan_out), 0.0f)));
    }
    return net;
}

Mlp Mlp::zeros(const std::vector<int>& layer_sizes) {
    check_sizes(layer_sizes);
    Mlp net;
    net.layer_sizes = layer_sizes;
    for (size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
        const int fan_in = layer_sizes[l];
        const int fan_out = layer_sizes[l + 1];
        net.weights.push_back(Tensor::param(
            {fan_in, fan_out}, std::vector<float>(static_cast<size_t>(fan_in) * fan_out, 0.0f)));
        net.biases.push_back(
            Tensor::param({fan_out}, std::vector<float>(static_cast<size_t>(fan_out), 0.0f)));
    }
    return net;
}

Tensor Mlp::forward(const Tensor& input) const {
    if (!input.defined() || input.shape().size() != 2)
        throw ShapeError("Mlp::forward: input must be a 2-D batch");
    if (input.cols() != input_width())
        throw ShapeError("Mlp::forward: input width " + std::to_string(input.cols()) +
                         " does not match layer 0 width " + std::to_string(input_width()));
    Tensor x = input;
    for (int l = 0; l < layer_count(); ++l) {
        x = bias_add(matmul(x, weights[l]), biases[l]);
        if (l + 1 < layer_count()) x = tanh(x);
    }
    return x;
}

std::vector<Tensor*> Mlp::params() {
    std::vector<Tensor*> out;
    for (size_t l = 0; l < weights.size(); ++l) {
        out.push_back(&weights[l]);
        out.push_back(&biases[l]);
    }
    return out;
}

std::vector<const Tensor*> Mlp::params() const {
    std::vector<const Tensor*> out;
    for (size_t l = 0; l < weights.size(); ++l) {
        out.push_back(&weights[l]);
        out.push_back(&biases[l]);
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> Mlp::named_params(const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (size_t l = 0; l < weights.size(); ++l) {
        out.emplace_back(prefix + "w" + std::to_string(l), weights[l]);
        out.emplace_back(prefix + "b" + std::to_string(l), biases[l]);
    }
    return out;
}

void Mlp::copy_values_from(const Mlp& other) {
    if (layer_sizes != other.layer_sizes)
        throw ShapeError("Mlp::copy_values_from: layer sizes differ");
    for (size_t l = 0; l < weights.size(); ++l) {
        std::copy(other.weights[l].data().begin(), other.weights[l].data().end(),
                  weights[l].data().begin());
        std::copy(other.biases[l].data().begin(), other.biases[l].data().end(),
                  biases[l].data().begin());
    }
}

bool Mlp::all_finite() const {
    for (const Tensor* p : params())
        for (float v : p->data())
            if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace efm::nn
