#include "xmodal/ops.hpp"

#include <algorithm>
#include <cmath>

namespace xmodal {

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ContractError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                            shape_to_string(b.shape()));
    }
}

void check_row_operand(const char* op, const Tensor& x, const Tensor& row) {
    if (x.shape().size() != 2 || (row.shape().size() != 1 && row.shape().size() != 2)) {
        throw ContractError(std::string(op) + ": expected [BxC] and [C], got " + shape_to_string(x.shape()) +
                            " and " + shape_to_string(row.shape()));
    }
    if (row.size() != x.cols()) {
        throw ContractError(std::string(op) + ": row length mismatch " + shape_to_string(x.shape()) + " vs " +
                            shape_to_string(row.shape()));
    }
}

bool wants_grad(Tape* tape, std::initializer_list<const Tensor*> inputs) {
    if (!tape) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

}  // namespace

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    Tensor out = Tensor::zeros(a.shape());
    auto ov = out.values();
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    if (wants_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record([an = a.handle(), bn = b.handle(), on = out.handle()] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                if (an->requires_grad) an->grad[i] += on->grad[i];
                if (bn->requires_grad) bn->grad[i] += on->grad[i];
            }
        });
    }
    return out;
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    Tensor out = Tensor::zeros(a.shape());
    auto ov = out.values();
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    if (wants_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record([an = a.handle(), bn = b.handle(), on = out.handle()] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                if (an->requires_grad) an->grad[i] += on->grad[i];
                if (bn->requires_grad) bn->grad[i] -= on->grad[i];
            }
        });
    }
    return out;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    Tensor out = Tensor::zeros(a.shape());
    auto ov = out.values();
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    if (wants_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record([an = a.handle(), bn = b.handle(), on = out.handle()] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                if (an->requires_grad) an->grad[i] += on->grad[i] * bn->value[i];
                if (bn->requires_grad) bn->grad[i] += on->grad[i] * an->value[i];
            }
        });
    }
    return out;
}

Tensor add_row(Tape* tape, const Tensor& x, const Tensor& row) {
    check_row_operand("add_row", x, row);
    const std::size_t b = x.rows(), c = x.cols();
    Tensor out = Tensor::zeros(x.shape());
    auto ov = out.values();
    auto xv = x.values();
    auto rv = row.values();
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < c; ++j) ov[i * c + j] = xv[i * c + j] + rv[j];
    if (wants_grad(tape, {&x, &row})) {
        out.set_requires_grad(true);
        tape->record([xn = x.handle(), rn = row.handle(), on = out.handle(), b, c] {
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    const double g = on->grad[i * c + j];
                    if (xn->requires_grad) xn->grad[i * c + j] += g;
                    if (rn->requires_grad) rn->grad[j] += g;
                }
        });
    }
    return out;
}

Tensor sub_row(Tape* tape, const Tensor& x, const Tensor& row) {
    check_row_operand("sub_row", x, row);
    const std::size_t b = x.rows(), c = x.cols();
    Tensor out = Tensor::zeros(x.shape());
    auto ov = out.values();
    auto xv = x.values();
    auto rv = row.values();
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < c; ++j) ov[i * c + j] = xv[i * c + j] - rv[j];
    if (wants_grad(tape, {&x, &row})) {
        out.set_requires_grad(true);
        tape->record([xn = x.handle(), rn = row.handle(), on = out.handle(), b, c] {
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    const double g = on->grad[i * c + j];
                    if (xn->requires_grad) xn->grad[i * c + j] += g;
                    if (rn->requires_grad) rn->grad[j] -= g;
                }
        });
    }
    return out;
}

Tensor mul_row(Tape* tape, const Tensor& x, const Tensor& row) {
    check_row_operand("mul_row", x, row);
    const std::size_t b = x.rows(), c = x.cols();
    Tensor out = Tensor::zeros(x.shape());
    auto ov = out.values();
    auto xv = x.values();
    auto rv = row.values();
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < c; ++j) ov[i * c + j] = xv[i * c + j] * rv[j];
    if (wants_grad(tape, {&x, &row})) {
        out.set_requires_grad(true);
        tape->record([xn = x.handle(), rn = row.handle(), on = out.handle(), b, c] {
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    const double g = on->grad[i * c + j];
                    if (xn->requires_grad) xn->grad[i * c + j] += g * rn->value[j];
                    if (rn->requires_grad) rn->grad[j] += g * xn->value[i * c + j];
                }
        });
    }
    return out;
}

Tensor div_row(Tape* tape, const Tensor& x, const Tensor& row) {
    check_row_operand("div_row", x, row);
    const std::size_t b = x.rows(), c = x.cols();
    Tensor out = Tensor::zeros(x.shape());
    auto ov = out.values();
    auto xv = x.values();
    auto rv = row.values();
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < c; ++j) ov[i * c + j] = xv[i * c + j] / rv[j];
    if (wants_grad(tape, {&x, &row})) {
        out.set_requires_grad(true);
        tape->record([xn = x.handle(), rn = row.handle(), on = out.handle(), b, c] {
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    const double g = on->grad[i * c + j];
                    const double r = rn->value[j];
                    if (xn->requires_grad) xn->grad[i * c + j] += g / r;
                    if (rn->requires_grad) rn->grad[j] -= g * xn->value[i * c + j] / (r * r);
                }
        });
    }
    return out;
}

Tensor col_mean(Tape* tape, const Tensor& x) {
    if (x.shape().size() != 2) {
        throw ContractError("col_mean: expected 2-D tensor, got " + shape_to_string(x.shape()));
    }
    const std::size_t b = x.rows(), c = x.cols();
    Tensor out = Tensor::zeros({c});
    auto ov = out.values();
    auto xv = x.values();
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < c; ++j) ov[j] += xv[i * c + j];
    for (std::size_t j = 0; j < c; ++j) ov[j] /= static_cast<double>(b);
    if (wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([xn = x.handle(), on = out.handle(), b, c] {
            const double inv_b = 1.0 / static_cast<double>(b);
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < c; ++j) xn->grad[i * c + j] += on->grad[j] * inv_b;
        });
    }
    return out;
}

Tensor square(Tape* tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    auto ov = out.values();
    auto xv = x.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * xv[i];
    if (wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([xn = x.handle(), on = out.handle()] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += 2.0 * xn->value[i] * on->grad[i];
        });
    }
    return out;
}

Tensor sqrt_elem(Tape* tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    auto ov = out.values();
    auto xv = x.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::sqrt(xv[i]);
    if (wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([xn = x.handle(), on = out.handle()] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += 0.5 / on->value[i] * on->grad[i];
        });
    }
    return out;
}

Tensor log_elem(Tape* tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    auto ov = out.values();
    auto xv = x.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::log(xv[i]);
    if (wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([xn = x.handle(), on = out.handle()] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i] / xn->value[i];
        });
    }
    return out;
}

Tensor sigmoid(Tape* tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    auto ov = out.values();
    auto xv = x.values();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        const double v = xv[i];
        ov[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    if (wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([xn = x.handle(), on = out.handle()] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                const double y = on->value[i];
                xn->grad[i] += on->grad[i] * y * (1.0 - y);
            }
        });
    }
    return out;
}

Tensor relu(Tape* tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    auto ov = out.values();
    auto xv = x.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    if (wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([xn = x.handle(), on = out.handle()] {
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                if (xn->value[i] > 0.0) xn->grad[i] += on->grad[i];
        });
    }
    return out;
}

Tensor clamp_min(Tape* tape, const Tensor& x, double floor) {
    Tensor out = Tensor::zeros(x.shape());
    auto ov = out.values();
    auto xv = x.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > floor ? xv[i] : floor;
    if (wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([xn = x.handle(), on = out.handle(), floor] {
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                if (xn->value[i] > floor) xn->grad[i] += on->grad[i];
        });
    }
    return out;
}

Tensor add_const(Tape* tape, const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape());
    auto ov = out.values();
    auto xv = x.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] + c;
    if (wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([xn = x.handle(), on = out.handle()] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
        });
    }
    return out;
}

Tensor scale(Tape* tape, const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape());
    auto ov = out.values();
    auto xv = x.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * c;
    if (wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([xn = x.handle(), on = out.handle(), c] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += c * on->grad[i];
        });
    }
    return out;
}

Tensor sum_all(Tape* tape, const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    Tensor out = Tensor::scalar(s);
    if (wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([xn = x.handle(), on = out.handle()] {
            const double g = on->grad[0];
            for (double& gi : xn->grad) gi += g;
        });
    }
    return out;
}

Tensor l2norm(Tape* tape, const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v * v;
    const double norm = std::sqrt(s);
    Tensor out = Tensor::scalar(norm);
    if (wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([xn = x.handle(), on = out.handle()] {
            const double n = on->value[0];
            if (n == 0.0) return;  // subgradient 0 at the origin
            const double g = on->grad[0] / n;
            for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g * xn->value[i];
        });
    }
    return out;
}

Tensor scalar_mul(Tape* tape, const Tensor& s, const Tensor& x) {
    if (s.size() != 1) throw ContractError("scalar_mul: scalar operand has shape " + shape_to_string(s.shape()));
    Tensor out = Tensor::zeros(x.shape());
    const double sv = s.values()[0];
    auto ov = out.values();
    auto xv = x.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = sv * xv[i];
    if (wants_grad(tape, {&s, &x})) {
        out.set_requires_grad(true);
        tape->record([sn = s.handle(), xn = x.handle(), on = out.handle()] {
            if (sn->requires_grad) {
                double acc = 0.0;
                for (std::size_t i = 0; i < on->grad.size(); ++i) acc += on->grad[i] * xn->value[i];
                sn->grad[0] += acc;
            }
            if (xn->requires_grad) {
                const double sv2 = sn->value[0];
                for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += sv2 * on->grad[i];
            }
        });
    }
    return out;
}

Tensor slice_scalar(Tape* tape, const Tensor& v, std::size_t index) {
    if (index >= v.size()) {
        throw ContractError("slice_scalar: index " + std::to_string(index) + " out of range for " +
                            shape_to_string(v.shape()));
    }
    Tensor out = Tensor::scalar(v.values()[index]);
    if (wants_grad(tape, {&v})) {
        out.set_requires_grad(true);
        tape->record([vn = v.handle(), on = out.handle(), index] { vn->grad[index] += on->grad[0]; });
    }
    return out;
}

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows()) {
        throw ContractError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                            shape_to_string(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    auto ov = out.values();
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) ov[i * n + j] += aip * bv[p * n + j];
        }
    if (wants_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record([an = a.handle(), bn = b.handle(), on = out.handle(), m, k, n] {
            if (an->requires_grad) {
                // dA = G . B^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += on->grad[i * n + j] * bn->value[p * n + j];
                        an->grad[i * k + p] += acc;
                    }
            }
            if (bn->requires_grad) {
                // dB = A^T . G
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < m; ++i) acc += an->value[i * k + p] * on->grad[i * n + j];
                        bn->grad[p * n + j] += acc;
                    }
            }
        });
    }
    return out;
}

Tensor linear_forward(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.shape().size() != 2 || w.shape().size() != 2 || x.cols() != w.rows()) {
        throw ContractError("linear: input " + shape_to_string(x.shape()) + " does not match weight " +
                            shape_to_string(w.shape()));
    }
    if (b.size() != w.cols()) {
        throw ContractError("linear: bias " + shape_to_string(b.shape()) + " does not match weight " +
                            shape_to_string(w.shape()));
    }
    return add_row(tape, matmul(tape, x, w), b);
}

Tensor softmax(Tape* tape, const Tensor& logits) {
    if (logits.shape().size() != 2) {
        throw ContractError("softmax: expected 2-D logits, got " + shape_to_string(logits.shape()));
    }
    for (double v : logits.values()) {
        if (!std::isfinite(v)) throw ContractError("softmax: non-finite logit in input");
    }
    const std::size_t b = logits.rows(), n = logits.cols();
    Tensor out = Tensor::zeros(logits.shape());
    auto ov = out.values();
    auto xv = logits.values();
    for (std::size_t i = 0; i < b; ++i) {
        double mx = xv[i * n];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[i * n + j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double e = std::exp(xv[i * n + j] - mx);
            ov[i * n + j] = e;
            denom += e;
        }
        for (std::size_t j = 0; j < n; ++j) ov[i * n + j] /= denom;
    }
    if (wants_grad(tape, {&logits})) {
        out.set_requires_grad(true);
        tape->record([xn = logits.handle(), on = out.handle(), b, n] {
            for (std::size_t i = 0; i < b; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += on->grad[i * n + j] * on->value[i * n + j];
                for (std::size_t j = 0; j < n; ++j)
                    xn->grad[i * n + j] += on->value[i * n + j] * (on->grad[i * n + j] - dot);
            }
        });
    }
    return out;
}

BatchNormLayer BatchNormLayer::make(std::size_t channels) {
    BatchNormLayer layer;
    layer.gamma = Tensor::full({channels}, 1.0, true);
    layer.beta = Tensor::zeros({channels}, true);
    layer.running_mean.assign(channels, 0.0);
    layer.running_var.assign(channels, 1.0);
    layer.num_channels = channels;
    return layer;
}

BatchNormResult batchnorm_forward(Tape* tape, const Tensor& x, BatchNormLayer& layer, Mode mode,
                                  bool update_running) {
    if (x.shape().size() != 2 || x.cols() != layer.num_channels) {
        throw ContractError("batchnorm: input " + shape_to_string(x.shape()) + " does not match " +
                            std::to_string(layer.num_channels) + " channels");
    }
    BatchNormResult result;
    if (mode == Mode::kTrain) {
        if (x.rows() < 2) {
            throw ContractError("batchnorm: degenerate batch of size " + std::to_string(x.rows()) +
                                " in train mode");
        }
        Tensor mean = col_mean(tape, x);
        Tensor centered = sub_row(tape, x, mean);
        Tensor var = col_mean(tape, square(tape, centered));
        if (update_running) {
            const double m = layer.momentum;
            auto mv = mean.values();
            auto vv = var.values();
            for (std::size_t j = 0; j < layer.num_channels; ++j) {
                layer.running_mean[j] = (1.0 - m) * layer.running_mean[j] + m * mv[j];
                layer.running_var[j] = (1.0 - m) * layer.running_var[j] + m * vv[j];
            }
        }
        Tensor std_dev = sqrt_elem(tape, add_const(tape, var, layer.epsilon));
        Tensor normalized = div_row(tape, centered, std_dev);
        result.y = add_row(tape, mul_row(tape, normalized, layer.gamma), layer.beta);
        result.batch_mean = mean;
        result.batch_var = var;
    } else {
        const std::size_t c = layer.num_channels;
        Tensor mean = Tensor::from({c}, layer.running_mean);
        std::vector<double> sd(c);
        for (std::size_t j = 0; j < c; ++j) sd[j] = std::sqrt(layer.running_var[j] + layer.epsilon);
        Tensor std_dev = Tensor::from({c}, std::move(sd));
        Tensor normalized = div_row(tape, sub_row(tape, x, mean), std_dev);
        result.y = add_row(tape, mul_row(tape, normalized, layer.gamma), layer.beta);
    }
    return result;
}

}  // namespace xmodal
