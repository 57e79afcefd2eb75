#pragma once

// Decoupled variational Gaussian-process posterior.
//
// The posterior is a Gaussian measure on the RKHS of the prior with
//   mean       mu    = Psi_alpha a
//   covariance Sigma = (I + Psi_beta B Psi_beta^T)^{-1},   B = L L^T
// where alpha (size M_alpha) and beta (size M_beta) are independent basis
// sets. Predictions at inputs X:
//   m(X) = K_{X,alpha} a
//   s(X) = diag(K_X) - rowsum(K_{X,beta} .* (K_{X,beta} R)),   R = L H^{-1} L^T
// with H = I + L^T K_beta L. Every inverse goes through a Cholesky factor of H,
// which has all eigenvalues >= 1.

#include "dgp/kernels.hpp"

#include <functional>
#include <random>
#include <vector>

namespace dgp {

struct DecoupledModel {
  BasisSet alpha;
  VectorXd a;
  BasisSet beta;
  MatrixXd L;  // lower triangular, M_beta x M_beta
  KernelHyper hyper;
  double log_noise = 0.0;  // log sigma^2

  /// Empty bases of the given input dimension.
  static DecoupledModel empty(const KernelHyper& hyper, double log_noise);

  Index dim() const { return hyper.dim(); }
  Index m_alpha() const { return alpha.size(); }
  Index m_beta() const { return beta.size(); }
  double noise_variance() const;

  /// Throws std::invalid_argument when shapes disagree or values are not finite.
  void validate() const;
};

struct PredictiveMoments {
  VectorXd mean;
  VectorXd variance;
};

/// Gradient of a scalar objective w.r.t. every model parameter. Fields have
/// the same layout as DecoupledModel (points stored column-wise).
struct ModelGradient {
  VectorXd d_a;
  MatrixXd d_alpha_locations;
  MatrixXd d_alpha_log_multipliers;
  MatrixXd d_L;
  MatrixXd d_beta_locations;
  MatrixXd d_beta_log_multipliers;
  double d_log_amplitude = 0.0;
  VectorXd d_log_lengthscales;
  double d_log_noise = 0.0;

  static ModelGradient zeros_like(const DecoupledModel& model);

  ModelGradient& operator+=(const ModelGradient& other);
  ModelGradient& operator*=(double scale);
  bool all_finite() const;
  Index size() const;
};

/// Parameter vector layout shared by flatten_parameters / flatten: hyper
/// first, then mean side, then covariance side. Only the lower triangle of L
/// is included.
VectorXd flatten_parameters(const DecoupledModel& model);
void assign_parameters(DecoupledModel& model, const VectorXd& values);
VectorXd flatten(const ModelGradient& gradient);
ModelGradient unflatten_like(const VectorXd& values, const DecoupledModel& model);

/// Zero-pads a gradient-shaped collection to the model's current basis sizes.
void grow_to(ModelGradient& gradient, const DecoupledModel& model);

/// Chunk size over query points used by predict and grad_ell.
inline constexpr Index kQueryChunk = 4096;

PredictiveMoments predict(const DecoupledModel& model, const MatrixXd& queries);

// ---------------------------------------------------------------------------
// KL divergence to the normal prior.

/// Block-level form: 1/2 a^T K_alpha a + 1/2 log|H| - 1/2 tr(K_beta L H^{-1} L^T).
double kl_normal_prior(const VectorXd& a, const MatrixXd& K_alpha, const MatrixXd& L,
                       const MatrixXd& K_beta);
double kl_normal_prior(const DecoupledModel& model);

/// A subspace-parametrized Gaussian measure: mean Psi_alpha a and covariance
/// (I + Psi_beta L L^T Psi_beta^T)^{-1}.
struct SubspaceMeasure {
  VectorXd a;
  MatrixXd L;
};

/// Kernel blocks between the bases of q (alpha, beta) and p (palpha, pbeta).
struct MeasureBlocks {
  MatrixXd K_alpha;          // alpha, alpha
  MatrixXd K_beta;           // beta, beta
  MatrixXd K_alpha_palpha;   // alpha, palpha
  MatrixXd K_alpha_pbeta;    // alpha, pbeta
  MatrixXd K_beta_pbeta;     // beta, pbeta
  MatrixXd K_palpha;         // palpha, palpha
  MatrixXd K_pbeta;          // pbeta, pbeta
  MatrixXd K_palpha_pbeta;   // palpha, pbeta
};

/// KL(q || p) between two subspace-parametrized measures sharing a kernel.
double kl_general(const SubspaceMeasure& q, const SubspaceMeasure& p, const MeasureBlocks& blocks);

/// Model-level form; both models must share hyperparameters.
double kl_general(const DecoupledModel& q, const DecoupledModel& p);

// ---------------------------------------------------------------------------
// Expected log-likelihood.

/// Per-point ELL value with its derivatives w.r.t. the predictive moments.
/// The *_stderr fields are zero for closed-form results.
struct EllEstimate {
  double value = 0.0;
  VectorXd d_mean;
  VectorXd d_variance;
  double d_log_noise = 0.0;
  double value_stderr = 0.0;
  VectorXd d_mean_stderr;
  VectorXd d_variance_stderr;
};

double ell_gaussian(const PredictiveMoments& moments, const VectorXd& y, double log_noise);
EllEstimate ell_gaussian_terms(const PredictiveMoments& moments, const VectorXd& y,
                               double log_noise);

/// Scalar likelihood log p(y | f) with an optional log-noise derivative.
struct Likelihood {
  std::function<double(double y, double f, double log_noise)> log_density;
  std::function<double(double y, double f, double log_noise)> d_log_noise;

  static Likelihood gaussian();
};

/// Monte-Carlo ELL with score-function moment gradients. Deterministic for a
/// given generator state.
EllEstimate ell_monte_carlo(const PredictiveMoments& moments, const VectorXd& y,
                            const Likelihood& likelihood, double log_noise, int n_samples,
                            std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Gradients.

/// Column sampling for the mean side of the KL gradient. An empty `columns`
/// means the exact gradient; otherwise the sampled columns of K_alpha are
/// used with weight `scale` (M_alpha / |S| for an unbiased estimate).
struct KlSampling {
  std::vector<Index> columns;
  double scale = 1.0;

  static KlSampling exact() { return {}; }
  /// |S| columns uniformly without replacement, scale M_alpha / |S|.
  static KlSampling uniform(Index m_alpha, Index count, std::mt19937_64& rng);
  bool is_exact() const { return columns.empty(); }
};

struct ObjectiveEstimate {
  double value = 0.0;
  ModelGradient gradient;
};

/// KL value and gradient; with column sampling both the mean-side value and
/// its gradient are unbiased estimates. The covariance side is always exact.
ObjectiveEstimate kl_objective(const DecoupledModel& model, const KlSampling& sampling = {});
ModelGradient grad_kl(const DecoupledModel& model, const KlSampling& sampling = {});

/// Chains d_mean / d_variance (gradients of an ELL w.r.t. the predictive
/// moments at `inputs`) into model-parameter gradients. d_log_noise is left 0.
ModelGradient grad_ell(const DecoupledModel& model, const MatrixXd& inputs, const VectorXd& d_mean,
                       const VectorXd& d_variance);

/// (n_total / N_batch) * sum_batch ELL - KL with Gaussian likelihood.
double elbo(const DecoupledModel& model, const MatrixXd& inputs, const VectorXd& targets,
            Index n_total);

/// Options for the stochastic ELBO estimate used by the trainer.
struct ElboOptions {
  KlSampling sampling;
  const Likelihood* likelihood = nullptr;  // null: closed-form Gaussian
  int mc_samples = 100;
  std::mt19937_64* rng = nullptr;  // required for Monte-Carlo
};

ObjectiveEstimate elbo_objective(const DecoupledModel& model, const MatrixXd& inputs,
                                 const VectorXd& targets, Index n_total,
                                 const ElboOptions& options = {});

// ---------------------------------------------------------------------------

/// Canonical inducing-value statistics of a coupled model (alpha == beta == Z):
/// m = K_Z a, S = K_Z - K_Z R K_Z.
struct CanonicalForm {
  VectorXd m_tilde;
  MatrixXd S_tilde;
};

CanonicalForm to_canonical(const DecoupledModel& model);

}  // namespace dgp
