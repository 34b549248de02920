#include "cdt/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

#include "cdt/node.hpp"

namespace cdt {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(e);
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

void check_shape_valid(const Shape& shape) {
    for (int e : shape) {
        if (e <= 0) {
            throw shape_error("non-positive extent in shape " + shape_str(shape));
        }
    }
}

Tensor Tensor::zeros(const Shape& shape) {
    return full(shape, 0.0);
}

Tensor Tensor::full(const Shape& shape, double value) {
    check_shape_valid(shape);
    Tensor t;
    t.shape_ = shape;
    t.data_ = std::make_shared<const std::vector<double>>(shape_size(shape), value);
    return t;
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> values) {
    check_shape_valid(shape);
    if (values.size() != shape_size(shape)) {
        throw shape_error("data length " + std::to_string(values.size()) +
                          " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.shape_ = shape;
    t.data_ = std::make_shared<const std::vector<double>>(std::move(values));
    return t;
}

Tensor Tensor::scalar(double value) {
    return from_data({1}, {value});
}

namespace {
std::atomic<std::uint64_t> g_next_param_id{1};
}

Tensor Tensor::parameter(const Tensor& value) {
    if (!value.defined()) throw contract_error("parameter() needs a defined tensor");
    Tensor t;
    t.shape_ = value.shape_;
    t.data_ = value.data_;
    auto node = std::make_shared<detail::Node>();
    node->shape = value.shape_;
    node->leaf_id = g_next_param_id.fetch_add(1);
    t.node_ = std::move(node);
    return t;
}

int Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw shape_error("axis " + std::to_string(axis) + " out of range for " +
                          shape_str(shape_));
    }
    return shape_[axis];
}

double Tensor::at(std::initializer_list<int> idx) const {
    if (idx.size() != shape_.size()) {
        throw shape_error("index rank mismatch for " + shape_str(shape_));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (int i : idx) {
        flat = flat * static_cast<std::size_t>(shape_[axis]) + static_cast<std::size_t>(i);
        ++axis;
    }
    return (*data_)[flat];
}

double Tensor::scalar_value() const {
    if (!is_scalar()) {
        throw contract_error("expected scalar, got shape " + shape_str(shape_));
    }
    return (*data_)[0];
}

std::uint64_t Tensor::param_id() const {
    return node_ ? node_->leaf_id : 0;
}

Tensor Tensor::detach() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
}

bool Tensor::all_finite() const {
    if (!data_) return true;
    for (double v : *data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

} // namespace cdt
