#pragma once

// Online learning loop: hyperparameter initialization from the first
// minibatch, incremental basis growth, one Adam ascent step per minibatch.

#include "dgp/model.hpp"
#include "dgp/optimizer.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace dgp {

/// Per-feature z-score statistics applied to the inputs at load time.
struct Normalization {
  VectorXd input_mean;
  VectorXd input_scale;
};

struct Dataset {
  MatrixXd inputs;  // D x N, one example per column
  VectorXd targets;
  std::optional<Normalization> normalization;

  Index size() const { return inputs.cols(); }
  Index dim() const { return inputs.rows(); }
  void validate() const;
  /// Rows selected by index, normalization carried over.
  Dataset subset(const std::vector<Index>& indices) const;
};

struct Batch {
  MatrixXd inputs;
  VectorXd targets;
  std::vector<Index> indices;
};

enum class LikelihoodKind { gaussian, monte_carlo };

struct TrainConfig {
  Index m_alpha_cap = 100;
  Index m_beta_cap = 10;
  Index batch_size = 100;
  Index increment = 10;
  Index iterations = 0;
  double gamma0 = 1e-2;
  std::uint64_t seed = 0;
  std::optional<Index> kl_column_samples;  // empty: exact KL gradient
  LikelihoodKind likelihood = LikelihoodKind::gaussian;
  int mc_samples = 100;
  bool shared_basis = false;  // mean and covariance share one basis (coupled model)
  bool learn_hyper = true;
  bool learn_bases = true;

  void validate() const;
};

struct HyperInit {
  KernelHyper hyper;
  double log_noise = 0.0;
};

inline constexpr Index kMedianPairCap = 2000;
inline constexpr double kInitialCholeskyDiagonal = 1e-3;

/// Median trick: per-dimension median of pairwise |x_d - x'_d|, sample target
/// variance for the noise, unit amplitude.
HyperInit init_hyper(const MatrixXd& inputs, const VectorXd& targets, std::mt19937_64& rng);

Batch sample_minibatch(const Dataset& dataset, Index n, std::mt19937_64& rng);

/// Appends up to `increment` batch points to alpha (a = 0, unit multipliers)
/// and the same points to beta (new L diagonal 1e-3), respecting the caps.
DecoupledModel add_basis(DecoupledModel model, const Batch& batch, const TrainConfig& config,
                         std::mt19937_64& rng);

struct TraceEntry {
  Index iteration = 0;
  double elbo = 0.0;  // minibatch estimate before the update
  double wall_ms = 0.0;
  bool rejected = false;
};

struct TrainResult {
  DecoupledModel model;
  std::vector<TraceEntry> trace;
  Index rejected_steps = 0;
};

TrainResult train(const Dataset& dataset, const TrainConfig& config);

}  // namespace dgp
