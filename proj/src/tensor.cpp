#include "xmodal/tensor.hpp"

#include <numeric>
#include <sstream>

namespace xmodal {

std::string shape_to_string(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

static std::size_t shape_elems(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    const std::size_t count = shape_elems(shape);
    n->shape = std::move(shape);
    n->value.assign(count, fill);
    n->grad.assign(count, 0.0);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_elems(shape) != values.size()) {
        throw ContractError("tensor init: shape " + shape_to_string(shape) + " does not hold " +
                            std::to_string(values.size()) + " values");
    }
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->grad.assign(n->value.size(), 0.0);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from({1}, {v}, requires_grad);
}

std::size_t Tensor::rows() const {
    if (n_->shape.size() != 2) throw ContractError("rows(): tensor is not 2-D, shape " + shape_to_string(n_->shape));
    return n_->shape[0];
}

std::size_t Tensor::cols() const {
    if (n_->shape.size() != 2) throw ContractError("cols(): tensor is not 2-D, shape " + shape_to_string(n_->shape));
    return n_->shape[1];
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item(): tensor has " + std::to_string(size()) + " elements, expected 1");
    return n_->value[0];
}

Tensor Tensor::clone() const {
    auto n = std::make_shared<TensorNode>();
    n->shape = n_->shape;
    n->value = n_->value;
    n->grad.assign(n_->value.size(), 0.0);
    n->requires_grad = n_->requires_grad;
    return Tensor(std::move(n));
}

Tensor gather_rows(const Tensor& src, std::span<const std::size_t> indices) {
    if (src.shape().size() != 2) {
        throw ContractError("gather_rows: expected 2-D tensor, got " + shape_to_string(src.shape()));
    }
    const std::size_t c = src.cols();
    std::vector<double> out(indices.size() * c);
    auto sv = src.values();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= src.rows()) {
            throw ContractError("gather_rows: index " + std::to_string(indices[i]) + " out of range for " +
                                shape_to_string(src.shape()));
        }
        std::copy_n(sv.begin() + static_cast<std::ptrdiff_t>(indices[i] * c), c,
                    out.begin() + static_cast<std::ptrdiff_t>(i * c));
    }
    return Tensor::from({indices.size(), c}, std::move(out));
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward(): loss must be a scalar tensor");
    }
    loss.node()->grad[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

}  // namespace xmodal
