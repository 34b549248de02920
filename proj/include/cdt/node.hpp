#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "cdt/tensor.hpp"

namespace cdt::detail {

// Accumulation target during a backward pass: node pointer -> grad buffer.
class GradSink {
  public:
    explicit GradSink(std::unordered_map<const Node*, std::vector<double>>& bufs) : bufs_(bufs) {}
    // Zero-initialized buffer of `size` for node `n`, created on first use.
    std::vector<double>& buffer(const Node* n, std::size_t size);

  private:
    std::unordered_map<const Node*, std::vector<double>>& bufs_;
};

struct Node {
    Shape shape;
    std::uint64_t leaf_id = 0; // nonzero marks a parameter leaf
    std::vector<std::shared_ptr<Node>> parents;
    // Adds this node's contribution to each parent's buffer. Captures the
    // forward inputs it needs by value (shared data pointers).
    std::function<void(const std::vector<double>& upstream, GradSink& sink)> backprop;
};

inline std::vector<double>& GradSink::buffer(const Node* n, std::size_t size) {
    auto it = bufs_.find(n);
    if (it == bufs_.end()) {
        it = bufs_.emplace(n, std::vector<double>(size, 0.0)).first;
    }
    return it->second;
}

} // namespace cdt::detail
