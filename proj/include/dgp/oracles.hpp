#pragma once

// Dense reference implementations used to certify the decoupled model:
// exact GP regression, dense Gaussian KL, kernel ridge regression, a
// finite-dimensional feature kernel and a central-difference checker.
// None of these route through the model's factorizations.

#include "dgp/kernels.hpp"
#include "dgp/model.hpp"

#include <cstdint>
#include <functional>

namespace dgp::oracles {

/// Dense oracles refuse larger problems.
inline constexpr Index kMaxDenseSize = 4096;

/// k(x, x') = phi(x)^T phi(x') with phi(x) = sqrt(2/d) cos(W x + b).
struct FeatureKernel {
  MatrixXd weights;  // d x D
  VectorXd offsets;  // d
  std::uint64_t seed = 0;

  static FeatureKernel random(Index input_dim, Index feature_dim, std::uint64_t seed);

  Index feature_dim() const { return weights.rows(); }
  /// d x n feature matrix for points stored column-wise.
  MatrixXd features(const MatrixXd& points) const;
  double operator()(const VectorXd& x, const VectorXd& x2) const;
};

/// Unit-free reference SE-ARD Gram matrix, rho^2 exp(-0.5 sum (dx/s)^2).
MatrixXd se_ard_gram(const MatrixXd& rows, const MatrixXd& cols, const KernelHyper& hyper);

PredictiveMoments exact_gpr(const MatrixXd& inputs, const VectorXd& targets,
                            const KernelHyper& hyper, double log_noise, const MatrixXd& queries);

/// log N(y | 0, K_X + sigma^2 I)
double log_marginal(const MatrixXd& inputs, const VectorXd& targets, const KernelHyper& hyper,
                    double log_noise);

/// KL(N(mu_q, Sigma_q) || N(mu_p, Sigma_p)).
double dense_gaussian_kl(const VectorXd& mu_q, const MatrixXd& sigma_q, const VectorXd& mu_p,
                         const MatrixXd& sigma_p);

/// (K_X + ridge I)^{-1} y
VectorXd kernel_ridge(const MatrixXd& inputs, const VectorXd& targets, const KernelHyper& hyper,
                      double ridge);

/// Central differences with h = 1e-5 (1 + |theta_i|).
VectorXd finite_difference(const std::function<double(const VectorXd&)>& f, const VectorXd& params);

/// Decoupled model whose posterior equals exact GP regression on the inputs:
/// alpha = beta = X with unit multipliers, a = rho (K_X + sigma^2 I)^{-1} y,
/// B = (rho^2 / sigma^2) I.
DecoupledModel exact_posterior_model(const MatrixXd& inputs, const VectorXd& targets,
                                     const KernelHyper& hyper, double log_noise);

/// Sparse-GP predictive moments from inducing statistics (m, S) with an
/// explicit K_Z inverse:
///   mean = k_xZ K_Z^{-1} m,  var = k_xx + k_xZ K_Z^{-1} (S - K_Z) K_Z^{-1} k_Zx.
PredictiveMoments inducing_moments(const VectorXd& m_tilde, const MatrixXd& S_tilde,
                                   const MatrixXd& K_Z, const MatrixXd& K_xZ,
                                   const VectorXd& k_xx);

/// Decoupled predictive moments with explicit inverses:
///   mean = K_xa a,  var = k_xx - diag(K_xb (B^{-1} + K_b)^{-1} K_bx).
PredictiveMoments dense_decoupled_moments(const VectorXd& a, const MatrixXd& K_xa,
                                          const MatrixXd& B, const MatrixXd& K_b,
                                          const MatrixXd& K_xb, const VectorXd& k_xx);

}  // namespace dgp::oracles
