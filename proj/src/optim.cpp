#include "dance/optim.hpp"

#include "dance/errors.hpp"

#include <cmath>

namespace dance {

std::size_t adamw_step(const std::vector<Parameter*>& params, double lr,
                       const AdamWConfig& cfg) {
    if (lr < 0.0) throw RangeError("adamw_step: negative learning rate");
    std::size_t skipped = 0;
    for (Parameter* p : params) {
        if (!p->grad.all_finite()) {
            ++skipped;
            p->zero_grad();
            continue;
        }
        p->step += 1;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->step));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->step));
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad.data[i];
            double& m = p->moment1.data[i];
            double& v = p->moment2.data[i];
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            double& x = p->value.data[i];
            x -= lr * cfg.weight_decay * x;
            x -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
        p->zero_grad();
    }
    return skipped;
}

double LrSchedule::at(std::int64_t step) const {
    if (step < 0 || step > total_steps) {
        throw RangeError("LrSchedule: step " + std::to_string(step) + " outside [0, " +
                         std::to_string(total_steps) + "]");
    }
    const double floor = peak * floor_fraction;
    const double warm = warmup_fraction * static_cast<double>(total_steps);
    const double s = static_cast<double>(step);
    constexpr double kPi = 3.14159265358979323846;
    if (s <= warm) {
        const double u = warm > 0.0 ? s / warm : 1.0;
        return floor + 0.5 * (peak - floor) * (1.0 - std::cos(kPi * u));
    }
    const double span = static_cast<double>(total_steps) - warm;
    const double u = span > 0.0 ? (s - warm) / span : 1.0;
    return floor + 0.5 * (peak - floor) * (1.0 + std::cos(kPi * u));
}

void OptimizerGroup::step() {
    double lr = schedule.at(std::min(step_index, schedule.total_steps));
    skipped_updates += adamw_step(params, lr, adamw);
    ++step_index;
}

void OptimizerGroup::zero_grads() {
    for (Parameter* p : params) p->zero_grad();
}

} // namespace dance
