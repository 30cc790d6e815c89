#include "xmodal/optim.hpp"

namespace xmodal {

void sgd_step(std::span<double> param, std::span<const double> grad, std::span<double> velocity, double lr,
              double momentum, double weight_decay) {
    if (!(lr > 0.0)) throw ContractError("sgd_step: learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ContractError("sgd_step: momentum must be in [0,1)");
    if (param.size() != grad.size() || param.size() != velocity.size()) {
        throw ContractError("sgd_step: size mismatch, param " + std::to_string(param.size()) + " vs grad " +
                            std::to_string(grad.size()));
    }
    for (std::size_t i = 0; i < param.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grad[i] + weight_decay * param[i];
        param[i] -= lr * velocity[i];
    }
}

SgdOptimizer::SgdOptimizer(std::vector<ParamGroup> groups, double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
    for (auto& g : groups) {
        for (auto& p : g.params) {
            Slot slot;
            slot.velocity.assign(p.size(), 0.0);
            slot.param = p;
            slot.base_lr = g.base_lr;
            slots_.push_back(std::move(slot));
        }
    }
}

void SgdOptimizer::zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
}

void SgdOptimizer::step(double lr_factor) {
    for (auto& s : slots_) {
        sgd_step(s.param.values(), s.param.grad(), s.velocity, s.base_lr * lr_factor, momentum_, weight_decay_);
    }
}

}  // namespace xmodal
