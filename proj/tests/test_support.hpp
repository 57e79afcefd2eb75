#pragma once

#include "dgp/model.hpp"
#include "dgp/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace dgp::testing {

inline MatrixXd random_matrix(Index rows, Index cols, std::mt19937_64& rng, double lo = -1.0,
                              double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  MatrixXd m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline VectorXd random_vector(Index n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return random_matrix(n, 1, rng, lo, hi);
}

inline KernelHyper random_hyper(Index dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> amp(-0.4, 0.4);
  return {amp(rng), random_vector(dim, rng, -0.3, 0.5)};
}

inline BasisSet random_basis(Index dim, Index m, std::mt19937_64& rng) {
  return {random_matrix(dim, m, rng, -1.5, 1.5), random_matrix(dim, m, rng, -0.4, 0.4)};
}

inline MatrixXd random_lower(Index m, std::mt19937_64& rng, double scale = 0.8) {
  MatrixXd L = random_matrix(m, m, rng, -scale, scale).triangularView<Eigen::Lower>();
  return L;
}

inline DecoupledModel random_model(Index dim, Index m_alpha, Index m_beta, std::mt19937_64& rng) {
  DecoupledModel m;
  m.hyper = random_hyper(dim, rng);
  std::uniform_real_distribution<double> noise(-2.0, -0.5);
  m.log_noise = noise(rng);
  m.alpha = random_basis(dim, m_alpha, rng);
  m.a = random_vector(m_alpha, rng);
  m.beta = random_basis(dim, m_beta, rng);
  m.L = random_lower(m_beta, rng);
  return m;
}

/// Largest violation of |g - fd| <= rel * max(|g|, |fd|) + floor, as a
/// multiple of the allowed slack (<= 1 means every entry passes).
inline double worst_gradient_ratio(const VectorXd& analytic, const VectorXd& numeric, double rel,
                                   double floor) {
  double worst = 0.0;
  for (Index i = 0; i < analytic.size(); ++i) {
    const double allowed =
        rel * std::max(std::abs(analytic(i)), std::abs(numeric(i))) + floor;
    worst = std::max(worst, std::abs(analytic(i) - numeric(i)) / allowed);
  }
  return worst;
}

/// Central differences of f(model) over the flattened parameter layout.
template <class Fn>
VectorXd model_finite_difference(const DecoupledModel& model, Fn&& f) {
  DecoupledModel probe = model;
  return oracles::finite_difference(
      [&](const VectorXd& theta) {
        assign_parameters(probe, theta);
        return f(probe);
      },
      flatten_parameters(model));
}

/// Phi_r^T Phi_c for explicit feature matrices.
inline MatrixXd gram(const MatrixXd& features_rows, const MatrixXd& features_cols) {
  return features_rows.transpose() * features_cols;
}

}  // namespace dgp::testing
