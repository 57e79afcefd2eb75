#pragma once

// Squared-exponential ARD prior kernel and the generalized SE-ARD kernel used
// for variational basis functions.
//
// All three covariances share one closed form. For a pair of points with
// per-dimension length scales l and l' (l = s * c, with c = 1 for plain
// inputs):
//
//   k = rho^p * prod_d sqrt(2 l_d l'_d / (l_d^2 + l'_d^2))
//               * exp(-(x_d - x'_d)^2 / (l_d^2 + l'_d^2))
//
// with p = 2 for the prior (input, input), p = 1 for the cross covariance
// (input, basis) and p = 0 for basis/basis. Point sets are stored one point
// per column (D x n).

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

namespace dgp {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Shared prior hyperparameters, stored in log space.
struct KernelHyper {
  double log_amplitude = 0.0;
  VectorXd log_lengthscales;

  KernelHyper() = default;
  KernelHyper(double log_amp, VectorXd log_ls)
      : log_amplitude(log_amp), log_lengthscales(std::move(log_ls)) {}

  /// Unit amplitude, unit length scales.
  static KernelHyper unit(Index dim);

  Index dim() const { return log_lengthscales.size(); }
  double amplitude() const;
  VectorXd lengthscales() const;
  void validate() const;
};

/// Location of one inducing function plus its per-dimension length-scale
/// multipliers (log c_d).
struct BasisPoint {
  VectorXd location;
  VectorXd log_multipliers;

  static BasisPoint at(const VectorXd& x);
  Index dim() const { return location.size(); }
};

/// A list of basis points, stored column-wise.
struct BasisSet {
  MatrixXd locations;        // D x M
  MatrixXd log_multipliers;  // D x M

  BasisSet() = default;
  explicit BasisSet(Index dim) : locations(dim, 0), log_multipliers(dim, 0) {}
  BasisSet(MatrixXd locs, MatrixXd log_mults);

  /// Basis points at the given inputs with unit multipliers.
  static BasisSet at(const MatrixXd& points);

  Index size() const { return locations.cols(); }
  Index dim() const { return locations.rows(); }
  BasisPoint point(Index i) const;
  void append(const VectorXd& location, const VectorXd& log_multipliers);
  BasisSet subset(const std::vector<Index>& columns) const;
  bool operator==(const BasisSet& other) const;
};

double se_ard_cov(const VectorXd& x, const VectorXd& x2, const KernelHyper& hyper);

/// psi_b^T psi_b2, without the amplitude factor.
double gen_basis_cov(const BasisPoint& b, const BasisPoint& b2, const KernelHyper& hyper);

/// Covariance between the inducing function at b and f(x).
double gen_cross_cov(const BasisPoint& b, const VectorXd& x, const KernelHyper& hyper);

// ---------------------------------------------------------------------------
// Batched blocks with optional analytic partials.

struct PartialRequest {
  bool amplitude = false;
  bool lengthscales = false;
  bool row_points = false;  // location (and multipliers for basis rows)
  bool col_points = false;

  static PartialRequest all() { return {true, true, true, true}; }
};

struct ParamKey {
  enum class Target : std::uint8_t {
    log_amplitude,
    log_lengthscale,
    row_location,
    row_log_multiplier,
    col_location,
    col_log_multiplier,
  };
  Target target;
  Index point = 0;  // row/column index for point targets
  Index dim = 0;    // input dimension for everything but log_amplitude

  bool operator==(const ParamKey&) const = default;
};

/// A kernel matrix and the partials that were asked for. Point partials are
/// reported separately for the row list and the column list; when the two
/// lists are the same object the caller sums both sides.
struct KernelBlock {
  MatrixXd values;
  std::vector<std::pair<ParamKey, MatrixXd>> partials;

  const MatrixXd* partial(const ParamKey& key) const;
};

/// K_{X,X2}: prior covariance between two input sets.
KernelBlock prior_block(const MatrixXd& rows, const MatrixXd& cols, const KernelHyper& hyper,
                        PartialRequest wants = {});

/// K_{X,basis}: inputs as rows, basis functions as columns.
KernelBlock cross_block(const MatrixXd& rows, const BasisSet& cols, const KernelHyper& hyper,
                        PartialRequest wants = {});

/// K_{basis,basis2}: generalized SE-ARD between two basis sets.
KernelBlock basis_block(const BasisSet& rows, const BasisSet& cols, const KernelHyper& hyper,
                        PartialRequest wants = {});

// ---------------------------------------------------------------------------
// Contractions: sum_ij W_ij dK_ij / dtheta for every parameter at once, in
// Theta(D * rows * cols) without materializing the partial matrices.

struct BlockGradient {
  double log_amplitude = 0.0;
  VectorXd log_lengthscales;     // D
  MatrixXd row_locations;        // D x rows
  MatrixXd row_log_multipliers;  // D x rows (zero for input rows)
  MatrixXd col_locations;        // D x cols
  MatrixXd col_log_multipliers;  // D x cols (zero for input columns)
};

BlockGradient contract_prior_block(const MatrixXd& rows, const MatrixXd& cols,
                                   const KernelHyper& hyper, const MatrixXd& values,
                                   const MatrixXd& weights);
BlockGradient contract_cross_block(const MatrixXd& rows, const BasisSet& cols,
                                   const KernelHyper& hyper, const MatrixXd& values,
                                   const MatrixXd& weights);
BlockGradient contract_basis_block(const BasisSet& rows, const BasisSet& cols,
                                   const KernelHyper& hyper, const MatrixXd& values,
                                   const MatrixXd& weights);

}  // namespace dgp
