#include "dgp/oracles.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace dgp::oracles {

namespace {

void require_dense_size(Index n) {
  if (n > kMaxDenseSize) {
    throw std::invalid_argument("dense oracle limited to " + std::to_string(kMaxDenseSize) +
                                " points");
  }
}

Eigen::LLT<MatrixXd> factor_noisy_gram(const MatrixXd& inputs, const KernelHyper& hyper,
                                       double noise) {
  require_dense_size(inputs.cols());
  MatrixXd K = se_ard_gram(inputs, inputs, hyper);
  K.diagonal().array() += noise;
  Eigen::LLT<MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) throw std::runtime_error("K_X + noise I is not positive definite");
  return llt;
}

}  // namespace

FeatureKernel FeatureKernel::random(Index input_dim, Index feature_dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  FeatureKernel k;
  k.seed = seed;
  k.weights.resize(feature_dim, input_dim);
  for (Index i = 0; i < k.weights.size(); ++i) k.weights.data()[i] = normal(rng);
  k.offsets.resize(feature_dim);
  for (Index i = 0; i < feature_dim; ++i) k.offsets(i) = phase(rng);
  return k;
}

MatrixXd FeatureKernel::features(const MatrixXd& points) const {
  MatrixXd proj = weights * points;
  proj.colwise() += offsets;
  return std::sqrt(2.0 / double(feature_dim())) * proj.array().cos().matrix();
}

double FeatureKernel::operator()(const VectorXd& x, const VectorXd& x2) const {
  return features(x).col(0).dot(features(x2).col(0));
}

MatrixXd se_ard_gram(const MatrixXd& rows, const MatrixXd& cols, const KernelHyper& hyper) {
  const double rho2 = std::exp(2.0 * hyper.log_amplitude);
  const VectorXd s = hyper.lengthscales();
  MatrixXd K(rows.cols(), cols.cols());
  for (Index i = 0; i < rows.cols(); ++i) {
    for (Index j = 0; j < cols.cols(); ++j) {
      const double r2 = ((rows.col(i) - cols.col(j)).array() / s.array()).square().sum();
      K(i, j) = rho2 * std::exp(-0.5 * r2);
    }
  }
  return K;
}

PredictiveMoments exact_gpr(const MatrixXd& inputs, const VectorXd& targets,
                            const KernelHyper& hyper, double log_noise, const MatrixXd& queries) {
  const auto llt = factor_noisy_gram(inputs, hyper, std::exp(log_noise));
  const MatrixXd K_qx = se_ard_gram(queries, inputs, hyper);
  PredictiveMoments out;
  out.mean = K_qx * llt.solve(targets);
  const MatrixXd V = llt.matrixL().solve(K_qx.transpose());
  out.variance = VectorXd::Constant(queries.cols(), std::exp(2.0 * hyper.log_amplitude)) -
                 V.colwise().squaredNorm().transpose();
  return out;
}

double log_marginal(const MatrixXd& inputs, const VectorXd& targets, const KernelHyper& hyper,
                    double log_noise) {
  const auto llt = factor_noisy_gram(inputs, hyper, std::exp(log_noise));
  const VectorXd w = llt.matrixL().solve(targets);
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * w.squaredNorm() - 0.5 * log_det -
         0.5 * double(targets.size()) * std::log(2.0 * std::numbers::pi);
}

double dense_gaussian_kl(const VectorXd& mu_q, const MatrixXd& sigma_q, const VectorXd& mu_p,
                         const MatrixXd& sigma_p) {
  const Index d = mu_q.size();
  if (mu_p.size() != d || sigma_q.rows() != d || sigma_q.cols() != d || sigma_p.rows() != d ||
      sigma_p.cols() != d) {
    throw std::invalid_argument("dense_gaussian_kl: shape mismatch");
  }
  Eigen::LLT<MatrixXd> lp(sigma_p);
  Eigen::LLT<MatrixXd> lq(sigma_q);
  if (lp.info() != Eigen::Success || lq.info() != Eigen::Success) {
    throw std::runtime_error("dense_gaussian_kl: covariance is singular");
  }
  const VectorXd diff = mu_q - mu_p;
  const double trace = lp.solve(sigma_q).trace();
  const double quad = diff.dot(lp.solve(diff));
  const double log_det_p = 2.0 * lp.matrixLLT().diagonal().array().log().sum();
  const double log_det_q = 2.0 * lq.matrixLLT().diagonal().array().log().sum();
  return 0.5 * (trace + quad + log_det_p - log_det_q - double(d));
}

VectorXd kernel_ridge(const MatrixXd& inputs, const VectorXd& targets, const KernelHyper& hyper,
                      double ridge) {
  return factor_noisy_gram(inputs, hyper, ridge).solve(targets);
}

VectorXd finite_difference(const std::function<double(const VectorXd&)>& f,
                           const VectorXd& params) {
  VectorXd grad(params.size());
  VectorXd probe = params;
  for (Index i = 0; i < params.size(); ++i) {
    const double h = 1e-5 * (1.0 + std::abs(params(i)));
    probe(i) = params(i) + h;
    const double up = f(probe);
    probe(i) = params(i) - h;
    const double down = f(probe);
    probe(i) = params(i);
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::runtime_error("finite_difference: non-finite function value");
    }
    grad(i) = (up - down) / (2.0 * h);
  }
  return grad;
}

DecoupledModel exact_posterior_model(const MatrixXd& inputs, const VectorXd& targets,
                                     const KernelHyper& hyper, double log_noise) {
  const double noise = std::exp(log_noise);
  const double rho = std::exp(hyper.log_amplitude);
  const auto llt = factor_noisy_gram(inputs, hyper, noise);
  DecoupledModel m;
  m.hyper = hyper;
  m.log_noise = log_noise;
  m.alpha = BasisSet::at(inputs);
  m.beta = BasisSet::at(inputs);
  m.a = rho * llt.solve(targets);
  m.L = (rho / std::sqrt(noise)) * MatrixXd::Identity(inputs.cols(), inputs.cols());
  return m;
}

PredictiveMoments inducing_moments(const VectorXd& m_tilde, const MatrixXd& S_tilde,
                                   const MatrixXd& K_Z, const MatrixXd& K_xZ,
                                   const VectorXd& k_xx) {
  const MatrixXd K_inv = K_Z.inverse();
  const MatrixXd A = K_xZ * K_inv;
  PredictiveMoments out;
  out.mean = A * m_tilde;
  out.variance = k_xx + (A * (S_tilde - K_Z)).cwiseProduct(A).rowwise().sum();
  return out;
}

PredictiveMoments dense_decoupled_moments(const VectorXd& a, const MatrixXd& K_xa,
                                          const MatrixXd& B, const MatrixXd& K_b,
                                          const MatrixXd& K_xb, const VectorXd& k_xx) {
  const MatrixXd R = (B.inverse() + K_b).inverse();
  PredictiveMoments out;
  out.mean = K_xa * a;
  out.variance = k_xx - (K_xb * R).cwiseProduct(K_xb).rowwise().sum();
  return out;
}

}  // namespace dgp::oracles
