#include "dgp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

namespace dgp {

void Dataset::validate() const {
  if (size() < 1) throw std::invalid_argument("dataset is empty");
  if (dim() < 1) throw std::invalid_argument("dataset has no input columns");
  if (targets.size() != size()) throw std::invalid_argument("targets do not match inputs");
  if (!inputs.allFinite() || !targets.allFinite()) {
    throw std::invalid_argument("dataset contains non-finite values");
  }
}

Dataset Dataset::subset(const std::vector<Index>& indices) const {
  Dataset out;
  out.inputs.resize(dim(), Index(indices.size()));
  out.targets.resize(Index(indices.size()));
  for (Index k = 0; k < Index(indices.size()); ++k) {
    out.inputs.col(k) = inputs.col(indices[k]);
    out.targets(k) = targets(indices[k]);
  }
  out.normalization = normalization;
  return out;
}

void TrainConfig::validate() const {
  if (m_alpha_cap < 0 || m_beta_cap < 0) throw std::invalid_argument("basis caps must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (increment < 0 || increment > batch_size) {
    throw std::invalid_argument("increment must lie in [0, batch size]");
  }
  if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  if (!(gamma0 > 0.0)) throw std::invalid_argument("gamma0 must be positive");
  if (kl_column_samples && *kl_column_samples < 1) {
    throw std::invalid_argument("KL column samples must be >= 1");
  }
  if (likelihood == LikelihoodKind::monte_carlo && mc_samples < 1) {
    throw std::invalid_argument("Monte-Carlo sample count must be >= 1");
  }
  if (shared_basis && m_alpha_cap != m_beta_cap) {
    throw std::invalid_argument("a shared basis needs equal mean and covariance caps");
  }
}

namespace {

double median(std::vector<double>& v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + mid);
  return 0.5 * (lo + hi);
}

}  // namespace

HyperInit init_hyper(const MatrixXd& inputs, const VectorXd& targets, std::mt19937_64& rng) {
  const Index n = inputs.cols();
  const Index dim = inputs.rows();
  if (n == 0 || targets.size() == 0) throw std::invalid_argument("init_hyper: empty batch");
  if (targets.size() != n) throw std::invalid_argument("init_hyper: targets do not match inputs");

  std::vector<std::pair<Index, Index>> pairs;
  const Index total_pairs = n * (n - 1) / 2;
  if (total_pairs <= kMedianPairCap) {
    for (Index i = 0; i < n; ++i) {
      for (Index j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    }
  } else {
    std::uniform_int_distribution<Index> first(0, n - 1);
    std::uniform_int_distribution<Index> offset(1, n - 1);
    for (Index k = 0; k < kMedianPairCap; ++k) {
      const Index i = first(rng);
      pairs.emplace_back(i, (i + offset(rng)) % n);
    }
  }

  HyperInit init;
  init.hyper = KernelHyper::unit(dim);
  std::vector<double> dists(pairs.size());
  for (Index d = 0; d < dim; ++d) {
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      dists[k] = std::abs(inputs(d, pairs[k].first) - inputs(d, pairs[k].second));
    }
    double s = dists.empty() ? 0.0 : median(dists);
    s = s > 0.0 ? std::max(s, 1e-6) : 1.0;
    init.hyper.log_lengthscales(d) = std::log(s);
  }

  double var = 0.0;
  if (n > 1) {
    const double mean = targets.mean();
    var = (targets.array() - mean).square().sum() / double(n - 1);
  }
  const double noise = std::max({var, 1e-4 * var, 1e-8});
  init.log_noise = std::log(noise);
  return init;
}

Batch sample_minibatch(const Dataset& dataset, Index n, std::mt19937_64& rng) {
  const Index total = dataset.size();
  if (n < 1 || n > total) {
    throw std::invalid_argument("minibatch size must lie in [1, N]");
  }
  std::vector<Index> idx(static_cast<std::size_t>(total));
  std::iota(idx.begin(), idx.end(), Index{0});
  for (Index k = 0; k < n; ++k) {
    std::uniform_int_distribution<Index> pick(k, total - 1);
    std::swap(idx[k], idx[pick(rng)]);
  }
  idx.resize(static_cast<std::size_t>(n));
  Batch b;
  b.inputs.resize(dataset.dim(), n);
  b.targets.resize(n);
  for (Index k = 0; k < n; ++k) {
    b.inputs.col(k) = dataset.inputs.col(idx[k]);
    b.targets(k) = dataset.targets(idx[k]);
  }
  b.indices = std::move(idx);
  return b;
}

DecoupledModel add_basis(DecoupledModel model, const Batch& batch, const TrainConfig& config,
                         std::mt19937_64& rng) {
  const Index n = batch.inputs.cols();
  const Index take_alpha =
      std::max<Index>(0, std::min({config.increment, n, config.m_alpha_cap - model.m_alpha()}));
  const Index take_beta =
      std::max<Index>(0, std::min({config.increment, n, config.m_beta_cap - model.m_beta()}));
  const Index take = std::max(take_alpha, take_beta);
  if (take == 0) return model;

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  for (Index k = 0; k < take; ++k) {
    std::uniform_int_distribution<Index> pick(k, n - 1);
    std::swap(order[k], order[pick(rng)]);
  }

  const VectorXd unit = VectorXd::Zero(model.dim());
  for (Index k = 0; k < take_alpha; ++k) {
    model.alpha.append(batch.inputs.col(order[k]), unit);
  }
  const Index a0 = model.a.size();
  model.a.conservativeResize(a0 + take_alpha);
  model.a.tail(take_alpha).setZero();

  const Index b0 = model.m_beta();
  for (Index k = 0; k < take_beta; ++k) {
    model.beta.append(batch.inputs.col(order[k]), unit);
  }
  MatrixXd L = MatrixXd::Zero(b0 + take_beta, b0 + take_beta);
  L.topLeftCorner(b0, b0) = model.L;
  for (Index k = b0; k < b0 + take_beta; ++k) L(k, k) = kInitialCholeskyDiagonal;
  model.L = std::move(L);
  return model;
}

namespace {

void mask_gradient(ModelGradient& g, const TrainConfig& config) {
  if (!config.learn_hyper) {
    g.d_log_amplitude = 0.0;
    g.d_log_lengthscales.setZero();
    g.d_log_noise = 0.0;
  }
  if (!config.learn_bases) {
    g.d_alpha_locations.setZero();
    g.d_alpha_log_multipliers.setZero();
    g.d_beta_locations.setZero();
    g.d_beta_log_multipliers.setZero();
  }
  if (config.shared_basis) {
    // One set of points serves both roles, so it receives both gradients.
    g.d_alpha_locations += g.d_beta_locations;
    g.d_alpha_log_multipliers += g.d_beta_log_multipliers;
    g.d_beta_locations.setZero();
    g.d_beta_log_multipliers.setZero();
  }
}

}  // namespace

TrainResult train(const Dataset& dataset, const TrainConfig& config) {
  dataset.validate();
  config.validate();
  if (config.batch_size > dataset.size()) {
    throw std::invalid_argument("batch size exceeds the dataset size");
  }
  std::mt19937_64 rng(config.seed);
  const Batch first = sample_minibatch(dataset, config.batch_size, rng);
  const HyperInit init = init_hyper(first.inputs, first.targets, rng);

  TrainResult result{DecoupledModel::empty(init.hyper, init.log_noise), {}, 0};
  DecoupledModel& model = result.model;
  const StepSchedule schedule{config.gamma0};
  const Likelihood mc_likelihood = Likelihood::gaussian();

  AdamState adam;
  ModelGradient first_moment = ModelGradient::zeros_like(model);
  ModelGradient second_moment = ModelGradient::zeros_like(model);
  result.trace.reserve(static_cast<std::size_t>(config.iterations));

  for (Index t = 1; t <= config.iterations; ++t) {
    const auto start = std::chrono::steady_clock::now();
    const Batch batch = sample_minibatch(dataset, config.batch_size, rng);
    model = add_basis(std::move(model), batch, config, rng);
    if (config.shared_basis) model.beta = model.alpha;
    grow_to(first_moment, model);
    grow_to(second_moment, model);

    ElboOptions options;
    if (config.kl_column_samples) {
      options.sampling = KlSampling::uniform(model.m_alpha(), *config.kl_column_samples, rng);
    }
    if (config.likelihood == LikelihoodKind::monte_carlo) {
      options.likelihood = &mc_likelihood;
      options.mc_samples = config.mc_samples;
      options.rng = &rng;
    }

    TraceEntry entry;
    entry.iteration = t;
    try {
      ObjectiveEstimate est =
          elbo_objective(model, batch.inputs, batch.targets, dataset.size(), options);
      entry.elbo = est.value;
      mask_gradient(est.gradient, config);
      VectorXd params = flatten_parameters(model);
      adam.first_moment = flatten(first_moment);
      adam.second_moment = flatten(second_moment);
      adam_step(adam, params, flatten(est.gradient), schedule.rate(t));
      assign_parameters(model, params);
      first_moment = unflatten_like(adam.first_moment, model);
      second_moment = unflatten_like(adam.second_moment, model);
      if (config.shared_basis) model.beta = model.alpha;
    } catch (const NonFiniteGradient& e) {
      entry.rejected = true;
      result.rejected_steps += 1;
      std::cerr << "iteration " << t << ": step rejected (" << e.what() << ")\n";
    }
    entry.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    result.trace.push_back(entry);
  }
  return result;
}

}  // namespace dgp
