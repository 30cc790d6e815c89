#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xmodal/errors.hpp"

namespace xmodal {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& s);

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // same length as value, starts at zero
    bool requires_grad = false;
};

// Value-semantic handle over a shared node. Copying a Tensor aliases the
// node; clone() makes an independent deep copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double fill, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    std::size_t size() const { return n_->value.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<double> values() { return n_->value; }
    std::span<const double> values() const { return n_->value; }
    std::span<double> grad() { return n_->grad; }
    std::span<const double> grad() const { return n_->grad; }

    double item() const;  // scalar tensors only
    void zero_grad() { std::fill(n_->grad.begin(), n_->grad.end(), 0.0); }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool rg) { n_->requires_grad = rg; }

    Tensor clone() const;  // deep copy, grad zeroed, detached from any tape

    TensorNode* node() const { return n_.get(); }
    const std::shared_ptr<TensorNode>& handle() const { return n_; }

private:
    explicit Tensor(std::shared_ptr<TensorNode> n) : n_(std::move(n)) {}
    std::shared_ptr<TensorNode> n_;
};

// Constant row gather from a 2-D tensor (no gradient tracking).
Tensor gather_rows(const Tensor& src, std::span<const std::size_t> indices);

// Reverse-mode tape. Ops append backward closures in execution order;
// backward() seeds d(loss)/d(loss)=1 and replays them in reverse, summing
// into every requires_grad tensor reachable from the loss. One backward per
// recording; call clear() (or discard the tape) before reusing.
class Tape {
public:
    void record(std::function<void()> backward_fn) { entries_.push_back(std::move(backward_fn)); }

    void backward(const Tensor& loss);

    void clear() { entries_.clear(); }
    std::size_t size() const { return entries_.size(); }

private:
    std::vector<std::function<void()>> entries_;
};

}  // namespace xmodal
