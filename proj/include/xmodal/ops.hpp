#pragma once

#include <vector>

#include "xmodal/tensor.hpp"

namespace xmodal {

enum class Mode { kTrain, kEval };

// Elementwise, identical shapes.
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);

// [B x C] combined with a length-C row vector broadcast over rows.
Tensor add_row(Tape* tape, const Tensor& x, const Tensor& row);
Tensor sub_row(Tape* tape, const Tensor& x, const Tensor& row);
Tensor mul_row(Tape* tape, const Tensor& x, const Tensor& row);
Tensor div_row(Tape* tape, const Tensor& x, const Tensor& row);

// Per-column mean of a [B x C] tensor -> [C].
Tensor col_mean(Tape* tape, const Tensor& x);

// Elementwise unary.
Tensor square(Tape* tape, const Tensor& x);
Tensor sqrt_elem(Tape* tape, const Tensor& x);
Tensor log_elem(Tape* tape, const Tensor& x);
Tensor sigmoid(Tape* tape, const Tensor& x);
Tensor relu(Tape* tape, const Tensor& x);
Tensor clamp_min(Tape* tape, const Tensor& x, double floor);
Tensor add_const(Tape* tape, const Tensor& x, double c);
Tensor scale(Tape* tape, const Tensor& x, double c);

// Reductions to a scalar tensor.
Tensor sum_all(Tape* tape, const Tensor& x);
Tensor l2norm(Tape* tape, const Tensor& x);  // unsquared Euclidean norm

// y = x * s where s is a scalar tensor (gradient flows to both).
Tensor scalar_mul(Tape* tape, const Tensor& s, const Tensor& x);

// Scalar view of one element of a vector (gradient scatters back).
Tensor slice_scalar(Tape* tape, const Tensor& v, std::size_t index);

// y = x . w + b with x [B x I], w [I x O], b [O].
Tensor linear_forward(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b);
Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);

// Row-wise softmax with max-subtraction; rows sum to 1, entries in (0,1).
Tensor softmax(Tape* tape, const Tensor& logits);

struct BatchNormLayer {
    Tensor gamma;  // [C], trainable
    Tensor beta;   // [C], trainable
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double epsilon = 1e-5;
    std::size_t num_channels = 0;

    static BatchNormLayer make(std::size_t channels);
};

struct BatchNormResult {
    Tensor y;
    // Batch statistics of the layer input, on the tape (train mode only).
    Tensor batch_mean;
    Tensor batch_var;
};

// Train mode normalizes by (biased) batch statistics and, when
// update_running is set, folds them into the running averages:
//   running <- (1 - momentum) * running + momentum * batch_stat.
// Eval mode normalizes by the stored running statistics.
BatchNormResult batchnorm_forward(Tape* tape, const Tensor& x, BatchNormLayer& layer, Mode mode,
                                  bool update_running = true);

}  // namespace xmodal
