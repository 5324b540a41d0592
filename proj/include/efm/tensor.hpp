#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "efm/errors.hpp"

namespace efm::nn {

using Shape = std::vector<int>;

namespace detail {

struct Node {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
};

/// Thread-local switch: when off, ops compute values only and record no graph.
bool grad_enabled();
void set_grad_enabled(bool on);

}  // namespace detail

/// RAII guard disabling graph recording (inference paths).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled()) { detail::set_grad_enabled(false); }
    ~NoGradGuard() { detail::set_grad_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Dense row-major float32 tensor participating in a reverse-mode tape.
/// Copying a Tensor copies the handle; the buffer is shared.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, float v);
    static Tensor from_data(Shape shape, std::vector<float> data);
    static Tensor scalar(float v);
    /// Trainable leaf: grad buffer allocated eagerly (zeros).
    static Tensor param(Shape shape, std::vector<float> data);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int numel() const { return static_cast<int>(node_->value.size()); }
    int rows() const;  // 2-D only
    int cols() const;  // 2-D only

    std::span<const float> data() const { return node_->value; }
    std::span<float> data() { return node_->value; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    std::span<const float> grad() const { return node_->grad; }
    std::span<float> grad() { return node_->grad; }

    float item() const;

    /// Reverse-mode sweep from a scalar. Grads accumulate across calls.
    void backward();
    void zero_grad();

    /// Same buffer object (graph identity), not element equality.
    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    std::shared_ptr<detail::Node> node() const { return node_; }
    /// Internal: adopt an existing node (used by op implementations).
    static Tensor attach(std::shared_ptr<detail::Node> n) { return Tensor(std::move(n)); }

private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::Node> node_;
};

// --------------------------------------------------------------------------
// Op set: sufficient for every loss in this project.
// All binary elementwise ops require identical shapes.
// --------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
/// [B,n] x [n,m] -> [B,m]
Tensor matmul(const Tensor& a, const Tensor& w);
/// m: [B,n], bias: [n] broadcast over rows.
Tensor bias_add(const Tensor& m, const Tensor& bias);
Tensor tanh(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
/// Concatenate 2-D tensors along columns.
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_cols(std::initializer_list<Tensor> parts);
/// Columns [start, start+len) of a 2-D tensor.
Tensor slice_cols(const Tensor& a, int start, int len);

}  // namespace efm::nn
