#pragma once

#include <string>
#include <utility>
#include <vector>

#include "efm/tensor.hpp"

namespace efm::nn {

/// Insertion-ordered name -> tensor container for checkpoint contents.
class NamedTensors {
public:
    void add(const std::string& name, Tensor t);
    bool contains(const std::string& name) const;
    /// Throws ContractError when the name is absent.
    const Tensor& at(const std::string& name) const;

    size_t size() const { return items_.size(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }
    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

private:
    std::vector<std::pair<std::string, Tensor>> items_;
};

/// Binary container, little-endian:
///   magic "EFMC", version u32=1, tensor_count u32,
///   then per tensor: name_len u32, name bytes, ndim u32, dims u32 x ndim,
///   raw f32 payload. Round-trips bit-exactly.
void save_checkpoint(const NamedTensors& tensors, const std::string& path);
NamedTensors load_checkpoint(const std::string& path);

}  // namespace efm::nn
