#include "bar/budget.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace bar {

double barrier(double v, double a, double b) {
    if (!(a < b))
        throw std::invalid_argument("barrier: requires a < b, got a=" + std::to_string(a) +
                                    " b=" + std::to_string(b));
    if (v <= a) return 0.0;
    if (v >= b) return kBarrierCap;
    const double f = (v - a) * (v - a) / ((b - v) * (b - a));
    return f < kBarrierCap ? f : kBarrierCap;
}

double transition(double progress, ScheduleKind kind, double sigmoid_d) {
    if (progress < 0.0 || progress > 1.0) {
        std::fprintf(stderr, "transition: progress %.6g outside [0,1], clamping\n", progress);
        progress = progress < 0.0 ? 0.0 : 1.0;
    }
    switch (kind) {
        case ScheduleKind::linear:
            return progress;
        case ScheduleKind::exponential: {
            // Fast-early schedule; rate fixed so the curve is well inside its
            // asymptote at progress 1 while staying exact at both endpoints.
            const double k = 5.0;
            return (1.0 - std::exp(-k * progress)) / (1.0 - std::exp(-k));
        }
        case ScheduleKind::sigmoid: {
            if (!(sigmoid_d > 0.0))
                throw std::invalid_argument("transition: sigmoid steepness must be positive");
            // Endpoints are pinned by construction: the shift/scale exists
            // precisely so that T(0)=0 and T(1)=1.
            if (progress == 0.0) return 0.0;
            if (progress == 1.0) return 1.0;
            const auto sig = [](double x) {
                return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            };
            const double delta = sig(-0.5 * sigmoid_d);
            return (sig(sigmoid_d * (progress - 0.5)) - delta) / (1.0 - 2.0 * delta);
        }
    }
    throw std::invalid_argument("transition: unknown schedule kind");
}

BudgetState make_budget_state(double v_full, double budget, BudgetMetric metric,
                              ScheduleKind schedule, double sigmoid_d) {
    if (!(v_full > 0.0) || !(budget > 0.0) || !(budget < v_full))
        throw std::invalid_argument("budget state requires 0 < budget < full cost, got budget=" +
                                    std::to_string(budget) + " full=" + std::to_string(v_full));
    BudgetState s;
    s.v_full = v_full;
    s.budget = budget;
    s.metric = metric;
    s.schedule = schedule;
    s.sigmoid_d = sigmoid_d;
    s.lower_a = budget - 1e-4 * v_full;
    s.upper_b = v_full;
    s.progress = 0.0;
    return s;
}

BudgetState update_budget(const BudgetState& state, double progress) {
    BudgetState s = state;
    const double t = transition(progress, s.schedule, s.sigmoid_d);
    s.upper_b = (1.0 - t) * s.v_full + t * s.budget;
    s.progress = progress;
    return s;
}

}  // namespace bar
