#include "efm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace efm::nn {

namespace detail {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

}  // namespace detail

using detail::Node;

namespace {

int shape_numel(const Shape& s) {
    int n = 1;
    for (int d : s) {
        if (d <= 0) throw ShapeError("tensor dimensions must be positive");
        n *= d;
    }
    return n;
}

std::shared_ptr<Node> new_node(Shape shape, std::vector<float> value, bool requires_grad) {
    const int count = shape_numel(shape);
    if (value.empty()) value.assign(static_cast<size_t>(count), 0.0f);
    if (static_cast<int>(value.size()) != count)
        throw ShapeError("data length " + std::to_string(value.size()) +
                         " does not match shape product " + std::to_string(count));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    if (requires_grad) n->grad.assign(n->value.size(), 0.0f);
    return n;
}

/// Result node of an op: records the graph only when grad mode is on and some
/// parent is trainable.
Tensor make_op(Shape shape, std::vector<float> value,
               std::vector<std::shared_ptr<Node>> parents,
               std::function<void(Node&)> backward_fn) {
    bool needs = false;
    if (detail::grad_enabled()) {
        for (const auto& p : parents)
            if (p->requires_grad) needs = true;
    }
    auto n = new_node(std::move(shape), std::move(value), needs);
    if (needs) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor::attach(std::move(n));
}

void check_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) throw ShapeError(std::string(op) + ": shape mismatch");
}

void check_2d(const Tensor& t, const char* op) {
    if (t.shape().size() != 2) throw ShapeError(std::string(op) + ": expected 2-D tensor");
}

std::span<float> grad_of(const std::shared_ptr<Node>& n) { return n->grad; }

}  // namespace

// --------------------------------------------------------------------------
// Tensor basics
// --------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) { return attach(new_node(std::move(shape), {}, false)); }

Tensor Tensor::full(Shape shape, float v) {
    const int n = shape_numel(shape);
    return attach(new_node(std::move(shape), std::vector<float>(static_cast<size_t>(n), v), false));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data) {
    return attach(new_node(std::move(shape), std::move(data), false));
}

Tensor Tensor::scalar(float v) { return from_data({1}, {v}); }

Tensor Tensor::param(Shape shape, std::vector<float> data) {
    return attach(new_node(std::move(shape), std::move(data), true));
}

int Tensor::rows() const {
    if (shape().size() != 2) throw ShapeError("rows(): tensor is not 2-D");
    return shape()[0];
}

int Tensor::cols() const {
    if (shape().size() != 2) throw ShapeError("cols(): tensor is not 2-D");
    return shape()[1];
}

float Tensor::item() const {
    if (numel() != 1) throw ContractError("item(): tensor is not scalar");
    return node_->value[0];
}

void Tensor::zero_grad() {
    if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

void Tensor::backward() {
    if (!defined()) throw ContractError("backward: undefined tensor");
    if (numel() != 1) throw ContractError("backward: loss must be a scalar");
    if (!node_->requires_grad) return;  // constant loss: nothing reachable

    // Topological order over the recorded graph.
    std::vector<Node*> order;
    std::unordered_set<Node*> pushed{node_.get()};
    std::vector<std::pair<Node*, size_t>> stack{{node_.get(), 0}};
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (p->requires_grad && pushed.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    // Interior grads are scratch for this sweep; only leaf grads accumulate.
    for (Node* n : order)
        if (n->backward_fn) std::fill(n->grad.begin(), n->grad.end(), 0.0f);

    node_->grad[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

// --------------------------------------------------------------------------
// Ops
// --------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_defined(a, "add");
    check_defined(b, "add");
    check_same_shape(a, b, "add");
    std::vector<float> out(a.data().begin(), a.data().end());
    const auto bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    return make_op(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
        for (int side = 0; side < 2; ++side) {
            auto& p = self.parents[side];
            if (!p->requires_grad) continue;
            auto g = grad_of(p);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_defined(a, "sub");
    check_defined(b, "sub");
    check_same_shape(a, b, "sub");
    std::vector<float> out(a.data().begin(), a.data().end());
    const auto bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
    return make_op(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
        if (self.parents[0]->requires_grad) {
            auto g = grad_of(self.parents[0]);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
            auto g = grad_of(self.parents[1]);
            for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_defined(a, "mul");
    check_defined(b, "mul");
    check_same_shape(a, b, "mul");
    std::vector<float> out(a.numel());
    const auto ad = a.data();
    const auto bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
    return make_op(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
            auto g = grad_of(self.parents[0]);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (self.parents[1]->requires_grad) {
            auto g = grad_of(self.parents[1]);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

Tensor scale(const Tensor& a, float s) {
    check_defined(a, "scale");
    std::vector<float> out(a.data().begin(), a.data().end());
    for (float& v : out) v *= s;
    return make_op(a.shape(), std::move(out), {a.node()}, [s](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto g = grad_of(self.parents[0]);
        for (size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    });
}

Tensor matmul(const Tensor& a, const Tensor& w) {
    check_defined(a, "matmul");
    check_defined(w, "matmul");
    check_2d(a, "matmul");
    check_2d(w, "matmul");
    const int B = a.rows(), n = a.cols(), m = w.cols();
    if (w.rows() != n)
        throw ShapeError("matmul: inner dimensions " + std::to_string(n) + " vs " +
                         std::to_string(w.rows()));
    std::vector<float> out(static_cast<size_t>(B) * m, 0.0f);
    {
        const float* pa = a.data().data();
        const float* pw = w.data().data();
        float* po = out.data();
        for (int i = 0; i < B; ++i) {
            const float* arow = pa + static_cast<size_t>(i) * n;
            float* orow = po + static_cast<size_t>(i) * m;
            for (int k = 0; k < n; ++k) {
                const float aik = arow[k];
                const float* wrow = pw + static_cast<size_t>(k) * m;
                for (int j = 0; j < m; ++j) orow[j] += aik * wrow[j];
            }
        }
    }
    return make_op({B, m}, std::move(out), {a.node(), w.node()}, [B, n, m](Node& self) {
        const float* g = self.grad.data();
        const float* av = self.parents[0]->value.data();
        const float* wv = self.parents[1]->value.data();
        if (self.parents[0]->requires_grad) {
            // dA = dC * W^T
            float* ga = self.parents[0]->grad.data();
            for (int i = 0; i < B; ++i) {
                const float* grow = g + static_cast<size_t>(i) * m;
                float* garow = ga + static_cast<size_t>(i) * n;
                for (int k = 0; k < n; ++k) {
                    const float* wrow = wv + static_cast<size_t>(k) * m;
                    float acc = 0.0f;
                    for (int j = 0; j < m; ++j) acc += grow[j] * wrow[j];
                    garow[k] += acc;
                }
            }
        }
        if (self.parents[1]->requires_grad) {
            // dW = A^T * dC
            float* gw = self.parents[1]->grad.data();
            for (int i = 0; i < B; ++i) {
                const float* arow = av + static_cast<size_t>(i) * n;
                const float* grow = g + static_cast<size_t>(i) * m;
                for (int k = 0; k < n; ++k) {
                    const float aik = arow[k];
                    float* gwrow = gw + static_cast<size_t>(k) * m;
                    for (int j = 0; j < m; ++j) gwrow[j] += aik * grow[j];
                }
            }
        }
    });
}

Tensor bias_add(const Tensor& m, const Tensor& bias) {
    check_defined(m, "bias_add");
    check_defined(bias, "bias_add");
    check_2d(m, "bias_add");
    if (bias.shape().size() != 1 || bias.numel() != m.cols())
        throw ShapeError("bias_add: bias length " + std::to_string(bias.numel()) +
                         " does not match columns " + std::to_string(m.cols()));
    const int B = m.rows(), c = m.cols();
    std::vector<float> out(m.data().begin(), m.data().end());
    const float* bv = bias.data().data();
    for (int i = 0; i < B; ++i) {
        float* row = out.data() + static_cast<size_t>(i) * c;
        for (int j = 0; j < c; ++j) row[j] += bv[j];
    }
    return make_op(m.shape(), std::move(out), {m.node(), bias.node()}, [B, c](Node& self) {
        if (self.parents[0]->requires_grad) {
            auto g = grad_of(self.parents[0]);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
            float* gb = self.parents[1]->grad.data();
            const float* g = self.grad.data();
            for (int i = 0; i < B; ++i)
                for (int j = 0; j < c; ++j) gb[j] += g[static_cast<size_t>(i) * c + j];
        }
    });
}

Tensor tanh(const Tensor& a) {
    check_defined(a, "tanh");
    std::vector<float> out(a.numel());
    const auto ad = a.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(ad[i]);
    return make_op(a.shape(), std::move(out), {a.node()}, [](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto g = grad_of(self.parents[0]);
        for (size_t i = 0; i < g.size(); ++i) {
            const float y = self.value[i];
            g[i] += self.grad[i] * (1.0f - y * y);
        }
    });
}

Tensor square(const Tensor& a) {
    check_defined(a, "square");
    std::vector<float> out(a.numel());
    const auto ad = a.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * ad[i];
    return make_op(a.shape(), std::move(out), {a.node()}, [](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto g = grad_of(self.parents[0]);
        const auto& av = self.parents[0]->value;
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * 2.0f * av[i];
    });
}

Tensor sum_all(const Tensor& a) {
    check_defined(a, "sum_all");
    double acc = 0.0;
    for (float v : a.data()) acc += v;
    return make_op({1}, {static_cast<float>(acc)}, {a.node()}, [](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto g = grad_of(self.parents[0]);
        const float s = self.grad[0];
        for (size_t i = 0; i < g.size(); ++i) g[i] += s;
    });
}

Tensor mean_all(const Tensor& a) {
    check_defined(a, "mean_all");
    double acc = 0.0;
    for (float v : a.data()) acc += v;
    const float inv = 1.0f / static_cast<float>(a.numel());
    return make_op({1}, {static_cast<float>(acc) * inv}, {a.node()}, [inv](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto g = grad_of(self.parents[0]);
        const float s = self.grad[0] * inv;
        for (size_t i = 0; i < g.size(); ++i) g[i] += s;
    });
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    for (const auto& t : parts) {
        check_defined(t, "concat_cols");
        check_2d(t, "concat_cols");
    }
    const int B = parts[0].rows();
    int total = 0;
    std::vector<int> widths;
    std::vector<std::shared_ptr<Node>> parents;
    for (const auto& t : parts) {
        if (t.rows() != B) throw ShapeError("concat_cols: row count mismatch");
        widths.push_back(t.cols());
        total += t.cols();
        parents.push_back(t.node());
    }
    std::vector<float> out(static_cast<size_t>(B) * total);
    int off = 0;
    for (size_t p = 0; p < parts.size(); ++p) {
        const int c = widths[p];
        const float* src = parts[p].data().data();
        for (int i = 0; i < B; ++i)
            std::copy_n(src + static_cast<size_t>(i) * c, c,
                        out.data() + static_cast<size_t>(i) * total + off);
        off += c;
    }
    return make_op({B, total}, std::move(out), std::move(parents),
                   [B, total, widths](Node& self) {
                       int off2 = 0;
                       for (size_t p = 0; p < self.parents.size(); ++p) {
                           const int c = widths[p];
                           if (self.parents[p]->requires_grad) {
                               float* g = self.parents[p]->grad.data();
                               for (int i = 0; i < B; ++i) {
                                   const float* srow =
                                       self.grad.data() + static_cast<size_t>(i) * total + off2;
                                   float* grow = g + static_cast<size_t>(i) * c;
                                   for (int j = 0; j < c; ++j) grow[j] += srow[j];
                               }
                           }
                           off2 += c;
                       }
                   });
}

Tensor concat_cols(std::initializer_list<Tensor> parts) {
    std::vector<Tensor> v(parts);
    return concat_cols(std::span<const Tensor>(v));
}

Tensor slice_cols(const Tensor& a, int start, int len) {
    check_defined(a, "slice_cols");
    check_2d(a, "slice_cols");
    const int B = a.rows(), c = a.cols();
    if (start < 0 || len <= 0 || start + len > c)
        throw ShapeError("slice_cols: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of " + std::to_string(c) +
                         " columns");
    std::vector<float> out(static_cast<size_t>(B) * len);
    const float* src = a.data().data();
    for (int i = 0; i < B; ++i)
        std::copy_n(src + static_cast<size_t>(i) * c + start, len,
                    out.data() + static_cast<size_t>(i) * len);
    return make_op({B, len}, std::move(out), {a.node()}, [B, c, start, len](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        float* g = self.parents[0]->grad.data();
        for (int i = 0; i < B; ++i) {
            const float* srow = self.grad.data() + static_cast<size_t>(i) * len;
            float* grow = g + static_cast<size_t>(i) * c + start;
            for (int j = 0; j < len; ++j) grow[j] += srow[j];
        }
    });
}

}  // namespace efm::nn
