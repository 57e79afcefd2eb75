#pragma once

// Adam stochastic gradient ascent with a decaying step size.

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>

namespace dgp {

/// gamma_t = gamma0 / (1 + 0.1 sqrt(t))
struct StepSchedule {
  double gamma0 = 1e-2;

  double rate(std::int64_t t) const;
};

double schedule_rate(const StepSchedule& schedule, std::int64_t t);

struct AdamState {
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  std::int64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  explicit AdamState(Eigen::Index n = 0)
      : first_moment(Eigen::VectorXd::Zero(n)), second_moment(Eigen::VectorXd::Zero(n)) {}
};

/// Raised when a gradient contains NaN/Inf; the step is not applied.
class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One bias-corrected Adam step moving `params` along +grad.
void adam_step(AdamState& state, Eigen::Ref<Eigen::VectorXd> params,
               const Eigen::Ref<const Eigen::VectorXd>& grad, double rate);

}  // namespace dgp
