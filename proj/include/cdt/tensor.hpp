#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <vector>

#include "cdt/error.hpp"

namespace cdt {

namespace detail {
struct Node;
}

using Shape = std::vector<int>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Row-major n-d array of doubles. Values are immutable once built; operations
// return fresh tensors. A tensor created via Tensor::parameter() is a gradient
// leaf: ops over it record a graph that autodiff::backward() can walk.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, double value);
    static Tensor from_data(const Shape& shape, std::vector<double> values);
    static Tensor scalar(double value);
    // Marks a copy of `value` as a trainable leaf with a fresh parameter id.
    static Tensor parameter(const Tensor& value);

    const Shape& shape() const { return shape_; }
    int dim(std::size_t axis) const;
    std::size_t size() const { return data_ ? data_->size() : 0; }
    bool defined() const { return static_cast<bool>(data_); }
    bool is_scalar() const { return size() == 1; }

    double operator[](std::size_t flat) const { return (*data_)[flat]; }
    double at(std::initializer_list<int> idx) const;
    double scalar_value() const;
    const std::vector<double>& values() const { return *data_; }

    bool requires_grad() const { return static_cast<bool>(node_); }
    // Nonzero only for parameter leaves.
    std::uint64_t param_id() const;

    // Same values, no recorded graph.
    Tensor detach() const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

  private:
    Shape shape_;
    std::shared_ptr<const std::vector<double>> data_;
    std::shared_ptr<detail::Node> node_;

    friend class OpBuilder;
    friend const std::shared_ptr<detail::Node>& node_of(const Tensor& t);
};

void check_shape_valid(const Shape& shape);

} // namespace cdt
