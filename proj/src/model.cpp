#include "dgp/model.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace dgp {

namespace {

// Cholesky of H = I + L^T K_beta L together with R = L H^{-1} L^T.
struct CovarianceFactor {
  MatrixXd K_beta;
  Eigen::LLT<MatrixXd> H;
  MatrixXd L_Hinv;  // L H^{-1}
  MatrixXd R;
  double log_det_H = 0.0;
  double trace_H_inv = 0.0;
};

CovarianceFactor factor_covariance(const MatrixXd& L, MatrixXd K_beta) {
  CovarianceFactor f;
  f.K_beta = std::move(K_beta);
  const Index m = L.rows();
  if (m == 0) return f;
  MatrixXd H = MatrixXd::Identity(m, m);
  H.noalias() += L.transpose() * f.K_beta * L;
  f.H.compute(H);
  if (f.H.info() != Eigen::Success) {
    throw std::runtime_error("factorization of I + L^T K_beta L failed (non-finite parameters?)");
  }
  f.L_Hinv = f.H.solve(L.transpose()).transpose();
  f.R.noalias() = f.L_Hinv * L.transpose();
  f.log_det_H = 2.0 * f.H.matrixLLT().diagonal().array().log().sum();
  f.trace_H_inv = f.H.solve(MatrixXd::Identity(m, m)).trace();
  return f;
}

CovarianceFactor factor_covariance(const DecoupledModel& model) {
  if (model.m_beta() == 0) return {};
  return factor_covariance(model.L, basis_block(model.beta, model.beta, model.hyper).values);
}

MatrixXd lower(const MatrixXd& m) { return m.triangularView<Eigen::Lower>(); }

struct ChunkBlocks {
  MatrixXd K_x_alpha;
  MatrixXd K_x_beta;
  PredictiveMoments moments;
};

ChunkBlocks chunk_moments(const DecoupledModel& model, const CovarianceFactor& factor,
                          const MatrixXd& inputs) {
  ChunkBlocks b;
  const Index n = inputs.cols();
  const double prior_var = std::exp(2.0 * model.hyper.log_amplitude);
  if (model.m_alpha() > 0) {
    b.K_x_alpha = cross_block(inputs, model.alpha, model.hyper).values;
    b.moments.mean = b.K_x_alpha * model.a;
  } else {
    b.moments.mean = VectorXd::Zero(n);
  }
  b.moments.variance = VectorXd::Constant(n, prior_var);
  if (model.m_beta() > 0) {
    b.K_x_beta = cross_block(inputs, model.beta, model.hyper).values;
    const MatrixXd KR = b.K_x_beta * factor.R;
    b.moments.variance -= (b.K_x_beta.array() * KR.array()).rowwise().sum().matrix();
    b.moments.variance = b.moments.variance.cwiseMax(0.0);
  }
  return b;
}

void check_inputs(const DecoupledModel& model, const MatrixXd& inputs) {
  if (inputs.cols() == 0) throw std::invalid_argument("query set is empty");
  if (inputs.rows() != model.dim()) {
    throw std::invalid_argument("query dimension " + std::to_string(inputs.rows()) +
                                " does not match model dimension " + std::to_string(model.dim()));
  }
}

// Accumulates the gradient of sum_n h_n m_n + g_n s_n for one chunk. Q collects
// K_{X,beta}^T diag(g) K_{X,beta} for the deferred covariance-side terms.
void accumulate_chunk_gradient(const DecoupledModel& model, const CovarianceFactor& factor,
                               const MatrixXd& inputs, const ChunkBlocks& blocks,
                               const VectorXd& h, const VectorXd& g, ModelGradient& grad,
                               MatrixXd& Q) {
  grad.d_log_amplitude += 2.0 * std::exp(2.0 * model.hyper.log_amplitude) * g.sum();
  if (model.m_alpha() > 0) {
    grad.d_a.noalias() += blocks.K_x_alpha.transpose() * h;
    const MatrixXd W = h * model.a.transpose();
    const BlockGradient cg =
        contract_cross_block(inputs, model.alpha, model.hyper, blocks.K_x_alpha, W);
    grad.d_alpha_locations += cg.col_locations;
    grad.d_alpha_log_multipliers += cg.col_log_multipliers;
    grad.d_log_lengthscales += cg.log_lengthscales;
    grad.d_log_amplitude += cg.log_amplitude;
  }
  if (model.m_beta() > 0) {
    const MatrixXd omega_t = blocks.K_x_beta * factor.R;  // Omega^T, N x M_beta
    const MatrixXd W = -2.0 * (g.asDiagonal() * omega_t);
    const BlockGradient cg =
        contract_cross_block(inputs, model.beta, model.hyper, blocks.K_x_beta, W);
    grad.d_beta_locations += cg.col_locations;
    grad.d_beta_log_multipliers += cg.col_log_multipliers;
    grad.d_log_lengthscales += cg.log_lengthscales;
    grad.d_log_amplitude += cg.log_amplitude;
    Q.noalias() += blocks.K_x_beta.transpose() * g.asDiagonal() * blocks.K_x_beta;
  }
}

void finish_covariance_gradient(const DecoupledModel& model, const CovarianceFactor& factor,
                                const MatrixXd& Q, ModelGradient& grad) {
  if (model.m_beta() == 0) return;
  const Index m = model.m_beta();
  // d/dL of -tr(R Q) = -2 (I - K_beta R) Q L H^{-1}
  const MatrixXd I_minus_PR = MatrixXd::Identity(m, m) - factor.K_beta * factor.R;
  grad.d_L += lower(-2.0 * I_minus_PR * Q * factor.L_Hinv);
  // d/dK_beta of -tr(R Q) = R Q R
  const MatrixXd W = factor.R * Q * factor.R;
  const BlockGradient cg =
      contract_basis_block(model.beta, model.beta, model.hyper, factor.K_beta, W);
  grad.d_beta_locations += cg.row_locations + cg.col_locations;
  grad.d_beta_log_multipliers += cg.row_log_multipliers + cg.col_log_multipliers;
  grad.d_log_lengthscales += cg.log_lengthscales;
}

template <typename ChunkFn>
void for_each_chunk(Index n, ChunkFn&& fn) {
  for (Index start = 0; start < n; start += kQueryChunk) {
    fn(start, std::min(kQueryChunk, n - start));
  }
}

double log_det_spd(const MatrixXd& m) {
  if (m.rows() == 0) return 0.0;
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw std::runtime_error("matrix is not positive definite");
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace

// ---------------------------------------------------------------------------

DecoupledModel DecoupledModel::empty(const KernelHyper& hyper, double log_noise) {
  DecoupledModel m;
  m.alpha = BasisSet(hyper.dim());
  m.beta = BasisSet(hyper.dim());
  m.a = VectorXd::Zero(0);
  m.L = MatrixXd::Zero(0, 0);
  m.hyper = hyper;
  m.log_noise = log_noise;
  return m;
}

double DecoupledModel::noise_variance() const { return std::exp(log_noise); }

void DecoupledModel::validate() const {
  hyper.validate();
  if (alpha.dim() != dim() || beta.dim() != dim()) {
    throw std::invalid_argument("basis dimension does not match kernel dimension");
  }
  if (alpha.log_multipliers.cols() != alpha.size() || beta.log_multipliers.cols() != beta.size()) {
    throw std::invalid_argument("basis multipliers do not match basis locations");
  }
  if (a.size() != m_alpha()) throw std::invalid_argument("len(a) must equal M_alpha");
  if (L.rows() != m_beta() || L.cols() != m_beta()) {
    throw std::invalid_argument("L must be M_beta x M_beta");
  }
  if (!L.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().isZero(0.0)) {
    throw std::invalid_argument("L must be lower triangular");
  }
  if (!a.allFinite() || !L.allFinite() || !alpha.locations.allFinite() ||
      !alpha.log_multipliers.allFinite() || !beta.locations.allFinite() ||
      !beta.log_multipliers.allFinite() || !std::isfinite(log_noise)) {
    throw std::invalid_argument("model parameters must be finite");
  }
}

ModelGradient ModelGradient::zeros_like(const DecoupledModel& model) {
  const Index d = model.dim();
  ModelGradient g;
  g.d_a = VectorXd::Zero(model.m_alpha());
  g.d_alpha_locations = MatrixXd::Zero(d, model.m_alpha());
  g.d_alpha_log_multipliers = MatrixXd::Zero(d, model.m_alpha());
  g.d_L = MatrixXd::Zero(model.m_beta(), model.m_beta());
  g.d_beta_locations = MatrixXd::Zero(d, model.m_beta());
  g.d_beta_log_multipliers = MatrixXd::Zero(d, model.m_beta());
  g.d_log_lengthscales = VectorXd::Zero(d);
  return g;
}

ModelGradient& ModelGradient::operator+=(const ModelGradient& o) {
  d_a += o.d_a;
  d_alpha_locations += o.d_alpha_locations;
  d_alpha_log_multipliers += o.d_alpha_log_multipliers;
  d_L += o.d_L;
  d_beta_locations += o.d_beta_locations;
  d_beta_log_multipliers += o.d_beta_log_multipliers;
  d_log_amplitude += o.d_log_amplitude;
  d_log_lengthscales += o.d_log_lengthscales;
  d_log_noise += o.d_log_noise;
  return *this;
}

ModelGradient& ModelGradient::operator*=(double s) {
  d_a *= s;
  d_alpha_locations *= s;
  d_alpha_log_multipliers *= s;
  d_L *= s;
  d_beta_locations *= s;
  d_beta_log_multipliers *= s;
  d_log_amplitude *= s;
  d_log_lengthscales *= s;
  d_log_noise *= s;
  return *this;
}

bool ModelGradient::all_finite() const {
  return d_a.allFinite() && d_alpha_locations.allFinite() && d_alpha_log_multipliers.allFinite() &&
         d_L.allFinite() && d_beta_locations.allFinite() && d_beta_log_multipliers.allFinite() &&
         std::isfinite(d_log_amplitude) && d_log_lengthscales.allFinite() &&
         std::isfinite(d_log_noise);
}

Index ModelGradient::size() const {
  const Index mb = d_L.rows();
  return 2 + d_log_lengthscales.size() + d_a.size() + d_alpha_locations.size() +
         d_alpha_log_multipliers.size() + mb * (mb + 1) / 2 + d_beta_locations.size() +
         d_beta_log_multipliers.size();
}

namespace {

// Visits every scalar of a parameter-shaped collection in flatten order.
template <typename Fn>
void visit_layout(double& log_amp, VectorXd& log_ls, double& log_noise, VectorXd& a,
                  MatrixXd& alpha_loc, MatrixXd& alpha_mult, MatrixXd& L, MatrixXd& beta_loc,
                  MatrixXd& beta_mult, Fn&& fn) {
  fn(log_amp);
  for (Index i = 0; i < log_ls.size(); ++i) fn(log_ls(i));
  fn(log_noise);
  for (Index i = 0; i < a.size(); ++i) fn(a(i));
  for (Index i = 0; i < alpha_loc.size(); ++i) fn(alpha_loc.data()[i]);
  for (Index i = 0; i < alpha_mult.size(); ++i) fn(alpha_mult.data()[i]);
  for (Index j = 0; j < L.cols(); ++j) {
    for (Index i = j; i < L.rows(); ++i) fn(L(i, j));
  }
  for (Index i = 0; i < beta_loc.size(); ++i) fn(beta_loc.data()[i]);
  for (Index i = 0; i < beta_mult.size(); ++i) fn(beta_mult.data()[i]);
}

template <typename Fn>
void visit_model(DecoupledModel& m, Fn&& fn) {
  visit_layout(m.hyper.log_amplitude, m.hyper.log_lengthscales, m.log_noise, m.a,
               m.alpha.locations, m.alpha.log_multipliers, m.L, m.beta.locations,
               m.beta.log_multipliers, fn);
}

template <typename Fn>
void visit_gradient(ModelGradient& g, Fn&& fn) {
  visit_layout(g.d_log_amplitude, g.d_log_lengthscales, g.d_log_noise, g.d_a,
               g.d_alpha_locations, g.d_alpha_log_multipliers, g.d_L, g.d_beta_locations,
               g.d_beta_log_multipliers, fn);
}

void resize_padded(MatrixXd& m, Index rows, Index cols) {
  const Index r0 = m.rows();
  const Index c0 = m.cols();
  m.conservativeResize(rows, cols);
  if (rows > r0) m.bottomRows(rows - r0).setZero();
  if (cols > c0) m.rightCols(cols - c0).setZero();
}

}  // namespace

VectorXd flatten_parameters(const DecoupledModel& model) {
  DecoupledModel copy = model;
  VectorXd out(ModelGradient::zeros_like(model).size());
  Index k = 0;
  visit_model(copy, [&](double& v) { out(k++) = v; });
  return out;
}

void assign_parameters(DecoupledModel& model, const VectorXd& values) {
  if (values.size() != ModelGradient::zeros_like(model).size()) {
    throw std::invalid_argument("parameter vector has the wrong length");
  }
  Index k = 0;
  visit_model(model, [&](double& v) { v = values(k++); });
}

VectorXd flatten(const ModelGradient& gradient) {
  ModelGradient copy = gradient;
  VectorXd out(gradient.size());
  Index k = 0;
  visit_gradient(copy, [&](double& v) { out(k++) = v; });
  return out;
}

ModelGradient unflatten_like(const VectorXd& values, const DecoupledModel& model) {
  ModelGradient g = ModelGradient::zeros_like(model);
  if (values.size() != g.size()) {
    throw std::invalid_argument("gradient vector has the wrong length");
  }
  Index k = 0;
  visit_gradient(g, [&](double& v) { v = values(k++); });
  return g;
}

void grow_to(ModelGradient& g, const DecoupledModel& model) {
  const Index d = model.dim();
  const Index ma = model.m_alpha();
  const Index mb = model.m_beta();
  if (g.d_a.size() > ma || g.d_L.rows() > mb) {
    throw std::invalid_argument("grow_to cannot shrink a gradient");
  }
  const Index a0 = g.d_a.size();
  g.d_a.conservativeResize(ma);
  g.d_a.tail(ma - a0).setZero();
  resize_padded(g.d_alpha_locations, d, ma);
  resize_padded(g.d_alpha_log_multipliers, d, ma);
  resize_padded(g.d_L, mb, mb);
  resize_padded(g.d_beta_locations, d, mb);
  resize_padded(g.d_beta_log_multipliers, d, mb);
}

// ---------------------------------------------------------------------------

PredictiveMoments predict(const DecoupledModel& model, const MatrixXd& queries) {
  check_inputs(model, queries);
  const CovarianceFactor factor = factor_covariance(model);
  const Index n = queries.cols();
  PredictiveMoments out{VectorXd(n), VectorXd(n)};
  for_each_chunk(n, [&](Index start, Index len) {
    const MatrixXd chunk = queries.middleCols(start, len);
    const ChunkBlocks b = chunk_moments(model, factor, chunk);
    out.mean.segment(start, len) = b.moments.mean;
    out.variance.segment(start, len) = b.moments.variance;
  });
  return out;
}

double kl_normal_prior(const VectorXd& a, const MatrixXd& K_alpha, const MatrixXd& L,
                       const MatrixXd& K_beta) {
  if (K_alpha.rows() != a.size() || K_alpha.cols() != a.size()) {
    throw std::invalid_argument("K_alpha does not match a");
  }
  if (L.rows() != L.cols() || K_beta.rows() != L.rows() || K_beta.cols() != L.rows()) {
    throw std::invalid_argument("K_beta does not match L");
  }
  double kl = 0.5 * a.dot(K_alpha * a);
  if (L.rows() > 0) {
    const CovarianceFactor f = factor_covariance(L, K_beta);
    // tr(K_beta L H^{-1} L^T) = tr(H^{-1} (H - I)) = M - tr(H^{-1})
    kl += 0.5 * f.log_det_H - 0.5 * (double(L.rows()) - f.trace_H_inv);
  }
  return kl;
}

double kl_normal_prior(const DecoupledModel& model) {
  model.validate();
  const MatrixXd K_alpha = model.m_alpha() > 0
                               ? basis_block(model.alpha, model.alpha, model.hyper).values
                               : MatrixXd(0, 0);
  const MatrixXd K_beta = model.m_beta() > 0
                              ? basis_block(model.beta, model.beta, model.hyper).values
                              : MatrixXd(0, 0);
  return kl_normal_prior(model.a, K_alpha, model.L, K_beta);
}

double kl_general(const SubspaceMeasure& q, const SubspaceMeasure& p, const MeasureBlocks& k) {
  const MatrixXd Bp = p.L * p.L.transpose();
  const MatrixXd G_alpha = k.K_alpha + k.K_alpha_pbeta * Bp * k.K_alpha_pbeta.transpose();
  const MatrixXd G_alpha_palpha =
      k.K_alpha_palpha + k.K_alpha_pbeta * Bp * k.K_palpha_pbeta.transpose();
  const MatrixXd G_beta = k.K_beta + k.K_beta_pbeta * Bp * k.K_beta_pbeta.transpose();
  const MatrixXd G_palpha = k.K_palpha + k.K_palpha_pbeta * Bp * k.K_palpha_pbeta.transpose();

  double kl = 0.5 * q.a.dot(G_alpha * q.a) - q.a.dot(G_alpha_palpha * p.a);
  if (q.L.rows() > 0) {
    const CovarianceFactor f = factor_covariance(q.L, k.K_beta);
    kl += -0.5 * (G_beta * f.R).trace() + 0.5 * f.log_det_H;
  }
  // Constant term depending on p only.
  double c = p.a.dot(G_palpha * p.a);
  if (p.L.rows() > 0) {
    const Index m = p.L.rows();
    const MatrixXd Hp = MatrixXd::Identity(m, m) + p.L.transpose() * k.K_pbeta * p.L;
    c += (k.K_pbeta * Bp).trace() - log_det_spd(Hp);
  }
  return kl + 0.5 * c;
}

double kl_general(const DecoupledModel& q, const DecoupledModel& p) {
  q.validate();
  p.validate();
  if (q.hyper.log_amplitude != p.hyper.log_amplitude ||
      q.hyper.log_lengthscales != p.hyper.log_lengthscales) {
    throw std::invalid_argument("kl_general requires both measures to share a kernel");
  }
  const auto block = [&](const BasisSet& r, const BasisSet& c) {
    if (r.size() == 0 || c.size() == 0) return MatrixXd(r.size(), c.size());
    return basis_block(r, c, q.hyper).values;
  };
  MeasureBlocks k;
  k.K_alpha = block(q.alpha, q.alpha);
  k.K_beta = block(q.beta, q.beta);
  k.K_alpha_palpha = block(q.alpha, p.alpha);
  k.K_alpha_pbeta = block(q.alpha, p.beta);
  k.K_beta_pbeta = block(q.beta, p.beta);
  k.K_palpha = block(p.alpha, p.alpha);
  k.K_pbeta = block(p.beta, p.beta);
  k.K_palpha_pbeta = block(p.alpha, p.beta);
  return kl_general({q.a, q.L}, {p.a, p.L}, k);
}

// ---------------------------------------------------------------------------

double ell_gaussian(const PredictiveMoments& moments, const VectorXd& y, double log_noise) {
  return ell_gaussian_terms(moments, y, log_noise).value;
}

EllEstimate ell_gaussian_terms(const PredictiveMoments& moments, const VectorXd& y,
                               double log_noise) {
  const Index n = y.size();
  if (moments.mean.size() != n || moments.variance.size() != n) {
    throw std::invalid_argument("targets and predictive moments differ in length");
  }
  const double noise = std::exp(log_noise);
  const VectorXd resid = y - moments.mean;
  const VectorXd sq = resid.array().square() + moments.variance.array();
  EllEstimate e;
  e.value = -0.5 * double(n) * std::log(2.0 * std::numbers::pi * noise) - sq.sum() / (2.0 * noise);
  e.d_mean = resid / noise;
  e.d_variance = VectorXd::Constant(n, -0.5 / noise);
  e.d_log_noise = -0.5 * double(n) + sq.sum() / (2.0 * noise);
  e.d_mean_stderr = VectorXd::Zero(n);
  e.d_variance_stderr = VectorXd::Zero(n);
  return e;
}

Likelihood Likelihood::gaussian() {
  Likelihood lik;
  lik.log_density = [](double y, double f, double log_noise) {
    const double r = y - f;
    return -0.5 * (std::log(2.0 * std::numbers::pi) + log_noise) -
           0.5 * r * r * std::exp(-log_noise);
  };
  lik.d_log_noise = [](double y, double f, double log_noise) {
    const double r = y - f;
    return -0.5 + 0.5 * r * r * std::exp(-log_noise);
  };
  return lik;
}

EllEstimate ell_monte_carlo(const PredictiveMoments& moments, const VectorXd& y,
                            const Likelihood& likelihood, double log_noise, int n_samples,
                            std::mt19937_64& rng) {
  const Index n = y.size();
  if (moments.mean.size() != n || moments.variance.size() != n) {
    throw std::invalid_argument("targets and predictive moments differ in length");
  }
  if (n_samples < 1) throw std::invalid_argument("n_samples must be at least 1");
  if (!likelihood.log_density) throw std::invalid_argument("likelihood has no log density");
  if ((moments.variance.array() <= 0.0).any()) {
    throw std::invalid_argument("Monte-Carlo ELL requires strictly positive variances");
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  const double count = double(n_samples);
  EllEstimate e;
  e.d_mean = VectorXd::Zero(n);
  e.d_variance = VectorXd::Zero(n);
  e.d_mean_stderr = VectorXd::Zero(n);
  e.d_variance_stderr = VectorXd::Zero(n);
  double value_var = 0.0;
  const auto sample_stats = [count](double sum, double sum_sq) {
    const double mean = sum / count;
    const double var = count > 1 ? std::max(0.0, (sum_sq - count * mean * mean) / (count - 1)) : 0.0;
    return std::pair{mean, var};
  };
  for (Index i = 0; i < n; ++i) {
    const double m = moments.mean(i);
    const double s = moments.variance(i);
    const double sd = std::sqrt(s);
    double lp_sum = 0, lp_sq = 0, gm_sum = 0, gm_sq = 0, gs_sum = 0, gs_sq = 0, dn_sum = 0;
    for (int k = 0; k < n_samples; ++k) {
      const double eps = normal(rng);
      const double f = m + sd * eps;
      const double lp = likelihood.log_density(y(i), f, log_noise);
      if (!std::isfinite(lp)) {
        throw std::runtime_error("likelihood returned a non-finite value at point " +
                                 std::to_string(i));
      }
      const double gm = eps / sd * lp;
      const double gs = (eps * eps - 1.0) / (2.0 * s) * lp;
      lp_sum += lp;
      lp_sq += lp * lp;
      gm_sum += gm;
      gm_sq += gm * gm;
      gs_sum += gs;
      gs_sq += gs * gs;
      if (likelihood.d_log_noise) dn_sum += likelihood.d_log_noise(y(i), f, log_noise);
    }
    const auto [lp_mean, lp_var] = sample_stats(lp_sum, lp_sq);
    const auto [gm_mean, gm_var] = sample_stats(gm_sum, gm_sq);
    const auto [gs_mean, gs_var] = sample_stats(gs_sum, gs_sq);
    e.value += lp_mean;
    value_var += lp_var / count;
    e.d_mean(i) = gm_mean;
    e.d_mean_stderr(i) = std::sqrt(gm_var / count);
    e.d_variance(i) = gs_mean;
    e.d_variance_stderr(i) = std::sqrt(gs_var / count);
    e.d_log_noise += dn_sum / count;
  }
  e.value_stderr = std::sqrt(value_var);
  return e;
}

// ---------------------------------------------------------------------------

KlSampling KlSampling::uniform(Index m_alpha, Index count, std::mt19937_64& rng) {
  if (count < 1) throw std::invalid_argument("column sample count must be at least 1");
  if (m_alpha == 0) return exact();
  count = std::min(count, m_alpha);
  std::vector<Index> idx(static_cast<std::size_t>(m_alpha));
  std::iota(idx.begin(), idx.end(), Index{0});
  for (Index k = 0; k < count; ++k) {
    std::uniform_int_distribution<Index> pick(k, m_alpha - 1);
    std::swap(idx[k], idx[pick(rng)]);
  }
  idx.resize(static_cast<std::size_t>(count));
  return {std::move(idx), double(m_alpha) / double(count)};
}

ObjectiveEstimate kl_objective(const DecoupledModel& model, const KlSampling& sampling) {
  model.validate();
  ObjectiveEstimate out;
  out.gradient = ModelGradient::zeros_like(model);
  ModelGradient& g = out.gradient;
  const Index ma = model.m_alpha();
  if (ma > 0) {
    std::vector<Index> cols = sampling.columns;
    double scale = sampling.scale;
    if (cols.empty()) {
      cols.resize(static_cast<std::size_t>(ma));
      std::iota(cols.begin(), cols.end(), Index{0});
      scale = 1.0;
    }
    for (Index c : cols) {
      if (c < 0 || c >= ma) throw std::invalid_argument("sampled column index out of range");
    }
    const BasisSet sampled = model.alpha.subset(cols);
    VectorXd a_s(Index(cols.size()));
    for (Index k = 0; k < a_s.size(); ++k) a_s(k) = model.a(cols[k]);
    const MatrixXd K = basis_block(model.alpha, sampled, model.hyper).values;
    g.d_a = scale * (K * a_s);
    out.value += 0.5 * model.a.dot(g.d_a);
    const MatrixXd W = scale * (model.a * a_s.transpose());
    const BlockGradient cg = contract_basis_block(model.alpha, sampled, model.hyper, K, W);
    g.d_alpha_locations = cg.row_locations;
    g.d_alpha_log_multipliers = cg.row_log_multipliers;
    g.d_log_lengthscales += 0.5 * cg.log_lengthscales;
  }
  if (model.m_beta() > 0) {
    const CovarianceFactor f = factor_covariance(model);
    const double m = double(model.m_beta());
    out.value += 0.5 * f.log_det_H - 0.5 * (m - f.trace_H_inv);
    // d/dL = K_beta L H^{-1} L^T K_beta L H^{-1}
    const MatrixXd PLHinv = f.K_beta * f.L_Hinv;
    g.d_L = lower(PLHinv * (model.L.transpose() * PLHinv));
    // d/dK_beta = 1/2 R K_beta R
    const MatrixXd W = 0.5 * f.R * f.K_beta * f.R;
    const BlockGradient cg = contract_basis_block(model.beta, model.beta, model.hyper, f.K_beta, W);
    g.d_beta_locations = cg.row_locations + cg.col_locations;
    g.d_beta_log_multipliers = cg.row_log_multipliers + cg.col_log_multipliers;
    g.d_log_lengthscales += cg.log_lengthscales;
  }
  return out;
}

ModelGradient grad_kl(const DecoupledModel& model, const KlSampling& sampling) {
  return kl_objective(model, sampling).gradient;
}

ModelGradient grad_ell(const DecoupledModel& model, const MatrixXd& inputs, const VectorXd& d_mean,
                       const VectorXd& d_variance) {
  model.validate();
  check_inputs(model, inputs);
  const Index n = inputs.cols();
  if (d_mean.size() != n || d_variance.size() != n) {
    throw std::invalid_argument("moment gradients do not match the batch size");
  }
  const CovarianceFactor factor = factor_covariance(model);
  ModelGradient grad = ModelGradient::zeros_like(model);
  MatrixXd Q = MatrixXd::Zero(model.m_beta(), model.m_beta());
  for_each_chunk(n, [&](Index start, Index len) {
    const MatrixXd chunk = inputs.middleCols(start, len);
    const ChunkBlocks b = chunk_moments(model, factor, chunk);
    accumulate_chunk_gradient(model, factor, chunk, b, d_mean.segment(start, len),
                              d_variance.segment(start, len), grad, Q);
  });
  finish_covariance_gradient(model, factor, Q, grad);
  return grad;
}

double elbo(const DecoupledModel& model, const MatrixXd& inputs, const VectorXd& targets,
            Index n_total) {
  check_inputs(model, inputs);
  if (targets.size() != inputs.cols()) throw std::invalid_argument("targets do not match inputs");
  if (n_total < inputs.cols()) throw std::invalid_argument("n_total is smaller than the batch");
  const double scale = double(n_total) / double(inputs.cols());
  const PredictiveMoments mom = predict(model, inputs);
  return scale * ell_gaussian(mom, targets, model.log_noise) - kl_normal_prior(model);
}

ObjectiveEstimate elbo_objective(const DecoupledModel& model, const MatrixXd& inputs,
                                 const VectorXd& targets, Index n_total,
                                 const ElboOptions& options) {
  model.validate();
  check_inputs(model, inputs);
  const Index n = inputs.cols();
  if (targets.size() != n) throw std::invalid_argument("targets do not match inputs");
  if (n_total < n) throw std::invalid_argument("n_total is smaller than the batch");
  if (options.likelihood && !options.rng) {
    throw std::invalid_argument("Monte-Carlo ELL needs a random generator");
  }
  const double scale = double(n_total) / double(n);
  const CovarianceFactor factor = factor_covariance(model);

  ObjectiveEstimate out;
  out.gradient = ModelGradient::zeros_like(model);
  MatrixXd Q = MatrixXd::Zero(model.m_beta(), model.m_beta());
  double ell = 0.0;
  double d_log_noise = 0.0;
  for_each_chunk(n, [&](Index start, Index len) {
    const MatrixXd chunk = inputs.middleCols(start, len);
    const ChunkBlocks b = chunk_moments(model, factor, chunk);
    const VectorXd y = targets.segment(start, len);
    const EllEstimate e =
        options.likelihood
            ? ell_monte_carlo(b.moments, y, *options.likelihood, model.log_noise,
                              options.mc_samples, *options.rng)
            : ell_gaussian_terms(b.moments, y, model.log_noise);
    ell += e.value;
    d_log_noise += e.d_log_noise;
    accumulate_chunk_gradient(model, factor, chunk, b, scale * e.d_mean, scale * e.d_variance,
                              out.gradient, Q);
  });
  finish_covariance_gradient(model, factor, Q, out.gradient);
  out.gradient.d_log_noise = scale * d_log_noise;

  ObjectiveEstimate kl = kl_objective(model, options.sampling);
  kl.gradient *= -1.0;
  out.gradient += kl.gradient;
  out.value = scale * ell - kl.value;
  return out;
}

// ---------------------------------------------------------------------------

CanonicalForm to_canonical(const DecoupledModel& model) {
  model.validate();
  if (!(model.alpha == model.beta)) {
    throw std::logic_error("to_canonical requires identical mean and covariance bases");
  }
  if (model.m_alpha() == 0) return {VectorXd(0), MatrixXd(0, 0)};
  const CovarianceFactor f = factor_covariance(model);
  const MatrixXd& K = f.K_beta;
  return {K * model.a, K - K * f.R * K};
}

}  // namespace dgp
