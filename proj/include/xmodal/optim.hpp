#pragma once

#include <span>
#include <vector>

#include "xmodal/tensor.hpp"

namespace xmodal {

// One SGD-with-momentum update:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr * v
void sgd_step(std::span<double> param, std::span<const double> grad, std::span<double> velocity, double lr,
              double momentum, double weight_decay);

struct ParamGroup {
    std::vector<Tensor> params;
    double base_lr = 1e-3;
};

// Velocity buffers persist across step() calls for the optimizer's lifetime.
class SgdOptimizer {
public:
    SgdOptimizer(std::vector<ParamGroup> groups, double momentum, double weight_decay);

    void zero_grad();
    // Effective learning rate per parameter is base_lr * lr_factor, so a
    // shared schedule factor can drive differently scaled groups.
    void step(double lr_factor = 1.0);

private:
    struct Slot {
        Tensor param;
        std::vector<double> velocity;
        double base_lr;
    };
    std::vector<Slot> slots_;
    double momentum_;
    double weight_decay_;
};

}  // namespace xmodal
