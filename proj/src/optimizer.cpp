#include "dgp/optimizer.hpp"

#include <cmath>

namespace dgp {

double StepSchedule::rate(std::int64_t t) const {
  if (t < 0) throw std::invalid_argument("schedule step must be non-negative");
  return gamma0 / (1.0 + 0.1 * std::sqrt(double(t)));
}

double schedule_rate(const StepSchedule& schedule, std::int64_t t) { return schedule.rate(t); }

void adam_step(AdamState& state, Eigen::Ref<Eigen::VectorXd> params,
               const Eigen::Ref<const Eigen::VectorXd>& grad, double rate) {
  const Eigen::Index n = params.size();
  if (grad.size() != n || state.first_moment.size() != n || state.second_moment.size() != n) {
    throw std::invalid_argument("Adam: parameter, gradient and moment sizes differ");
  }
  if (!grad.allFinite()) throw NonFiniteGradient("Adam: gradient contains non-finite values");

  state.step_count += 1;
  const double t = double(state.step_count);
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad;
  state.second_moment =
      state.beta2 * state.second_moment + (1.0 - state.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  params.array() += rate * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

}  // namespace dgp
