#include "dgp/kernels.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dgp {

namespace {

void require_finite(const Eigen::Ref<const MatrixXd>& m, const char* what) {
  if (!m.allFinite()) {
    throw std::invalid_argument(std::string(what) + " contains non-finite values");
  }
}

void require_dim(Index got, Index want, const char* what) {
  if (got != want) {
    throw std::invalid_argument(std::string(what) + ": dimension " + std::to_string(got) +
                                " does not match kernel dimension " + std::to_string(want));
  }
}

// One side of a kernel block: point locations plus effective length scales.
struct Side {
  const MatrixXd* locations;
  MatrixXd lengths;  // D x n, l = s * c
  bool has_multipliers;
};

Side input_side(const MatrixXd& points, const KernelHyper& hyper) {
  require_dim(points.rows(), hyper.dim(), "input points");
  require_finite(points, "input points");
  const VectorXd s = hyper.lengthscales();
  return {&points, s.replicate(1, points.cols()), false};
}

Side basis_side(const BasisSet& basis, const KernelHyper& hyper) {
  require_dim(basis.dim(), hyper.dim(), "basis points");
  if (basis.log_multipliers.rows() != basis.dim() ||
      basis.log_multipliers.cols() != basis.size()) {
    throw std::invalid_argument("basis multipliers do not match basis locations");
  }
  require_finite(basis.locations, "basis locations");
  require_finite(basis.log_multipliers, "basis multipliers");
  const VectorXd s = hyper.lengthscales();
  MatrixXd lengths = basis.log_multipliers.array().exp().matrix();
  lengths.array().colwise() *= s.array();
  return {&basis.locations, std::move(lengths), true};
}

MatrixXd evaluate(const Side& rows, const Side& cols, double amp_factor) {
  const Index n = rows.locations->cols();
  const Index m = cols.locations->cols();
  const Index dim = rows.locations->rows();
  MatrixXd out(n, m);
  for (Index j = 0; j < m; ++j) {
    for (Index i = 0; i < n; ++i) {
      double pref = 1.0;
      double expo = 0.0;
      for (Index d = 0; d < dim; ++d) {
        const double li = rows.lengths(d, i);
        const double lj = cols.lengths(d, j);
        const double sum_sq = li * li + lj * lj;
        const double diff = (*rows.locations)(d, i) - (*cols.locations)(d, j);
        pref *= 2.0 * li * lj / sum_sq;
        expo -= diff * diff / sum_sq;
      }
      out(i, j) = amp_factor * std::sqrt(pref) * std::exp(expo);
    }
  }
  return out;
}

BlockGradient contract(const Side& rows, const Side& cols, double amp_power,
                       const MatrixXd& values, const MatrixXd& weights) {
  const Index n = rows.locations->cols();
  const Index m = cols.locations->cols();
  const Index dim = rows.locations->rows();
  if (values.rows() != n || values.cols() != m || weights.rows() != n || weights.cols() != m) {
    throw std::invalid_argument("contraction weights do not match the kernel block shape");
  }
  BlockGradient g;
  g.log_lengthscales = VectorXd::Zero(dim);
  g.row_locations = MatrixXd::Zero(dim, n);
  g.row_log_multipliers = MatrixXd::Zero(dim, n);
  g.col_locations = MatrixXd::Zero(dim, m);
  g.col_log_multipliers = MatrixXd::Zero(dim, m);
  double wk_total = 0.0;
  for (Index j = 0; j < m; ++j) {
    for (Index i = 0; i < n; ++i) {
      const double wk = weights(i, j) * values(i, j);
      if (wk == 0.0) continue;
      wk_total += wk;
      for (Index d = 0; d < dim; ++d) {
        const double li2 = rows.lengths(d, i) * rows.lengths(d, i);
        const double lj2 = cols.lengths(d, j) * cols.lengths(d, j);
        const double sum_sq = li2 + lj2;
        const double diff = (*rows.locations)(d, i) - (*cols.locations)(d, j);
        const double d2 = diff * diff / (sum_sq * sum_sq);
        const double gz = -2.0 * diff / sum_sq * wk;
        const double gu = (0.5 - li2 / sum_sq + 2.0 * d2 * li2) * wk;
        const double gv = (0.5 - lj2 / sum_sq + 2.0 * d2 * lj2) * wk;
        g.row_locations(d, i) += gz;
        g.col_locations(d, j) -= gz;
        g.log_lengthscales(d) += gu + gv;
        if (rows.has_multipliers) g.row_log_multipliers(d, i) += gu;
        if (cols.has_multipliers) g.col_log_multipliers(d, j) += gv;
      }
    }
  }
  g.log_amplitude = amp_power * wk_total;
  return g;
}

KernelBlock block_with_partials(const Side& rows, const Side& cols, double amp_power,
                                const KernelHyper& hyper, PartialRequest wants) {
  KernelBlock block;
  block.values = evaluate(rows, cols, std::exp(amp_power * hyper.log_amplitude));
  const Index n = block.values.rows();
  const Index m = block.values.cols();
  const Index dim = hyper.dim();
  using T = ParamKey::Target;
  if (wants.amplitude) {
    block.partials.emplace_back(ParamKey{T::log_amplitude, 0, 0}, amp_power * block.values);
  }
  if (!(wants.lengthscales || wants.row_points || wants.col_points)) return block;

  std::vector<MatrixXd> dls(wants.lengthscales ? dim : 0, MatrixXd::Zero(n, m));
  // Point partials only touch one row (or column); collect them sparsely first.
  MatrixXd row_z(wants.row_points ? dim * n : 0, m), row_c(wants.row_points ? dim * n : 0, m);
  MatrixXd col_z(wants.col_points ? dim * m : 0, n), col_c(wants.col_points ? dim * m : 0, n);
  for (Index j = 0; j < m; ++j) {
    for (Index i = 0; i < n; ++i) {
      const double k = block.values(i, j);
      for (Index d = 0; d < dim; ++d) {
        const double li2 = rows.lengths(d, i) * rows.lengths(d, i);
        const double lj2 = cols.lengths(d, j) * cols.lengths(d, j);
        const double sum_sq = li2 + lj2;
        const double diff = (*rows.locations)(d, i) - (*cols.locations)(d, j);
        const double d2 = diff * diff / (sum_sq * sum_sq);
        const double gz = -2.0 * diff / sum_sq * k;
        const double gu = (0.5 - li2 / sum_sq + 2.0 * d2 * li2) * k;
        const double gv = (0.5 - lj2 / sum_sq + 2.0 * d2 * lj2) * k;
        if (wants.lengthscales) dls[d](i, j) = gu + gv;
        if (wants.row_points) {
          row_z(d * n + i, j) = gz;
          row_c(d * n + i, j) = gu;
        }
        if (wants.col_points) {
          col_z(d * m + j, i) = -gz;
          col_c(d * m + j, i) = gv;
        }
      }
    }
  }
  for (Index d = 0; d < Index(dls.size()); ++d) {
    block.partials.emplace_back(ParamKey{T::log_lengthscale, 0, d}, std::move(dls[d]));
  }
  if (wants.row_points) {
    for (Index i = 0; i < n; ++i) {
      for (Index d = 0; d < dim; ++d) {
        MatrixXd pz = MatrixXd::Zero(n, m);
        pz.row(i) = row_z.row(d * n + i);
        block.partials.emplace_back(ParamKey{T::row_location, i, d}, std::move(pz));
        if (rows.has_multipliers) {
          MatrixXd pc = MatrixXd::Zero(n, m);
          pc.row(i) = row_c.row(d * n + i);
          block.partials.emplace_back(ParamKey{T::row_log_multiplier, i, d}, std::move(pc));
        }
      }
    }
  }
  if (wants.col_points) {
    for (Index j = 0; j < m; ++j) {
      for (Index d = 0; d < dim; ++d) {
        MatrixXd pz = MatrixXd::Zero(n, m);
        pz.col(j) = col_z.row(d * m + j).transpose();
        block.partials.emplace_back(ParamKey{T::col_location, j, d}, std::move(pz));
        if (cols.has_multipliers) {
          MatrixXd pc = MatrixXd::Zero(n, m);
          pc.col(j) = col_c.row(d * m + j).transpose();
          block.partials.emplace_back(ParamKey{T::col_log_multiplier, j, d}, std::move(pc));
        }
      }
    }
  }
  return block;
}

void require_nonempty(Index n, const char* what) {
  if (n == 0) throw std::invalid_argument(std::string(what) + " is empty");
}

}  // namespace

// ---------------------------------------------------------------------------

KernelHyper KernelHyper::unit(Index dim) { return {0.0, VectorXd::Zero(dim)}; }

double KernelHyper::amplitude() const { return std::exp(log_amplitude); }

VectorXd KernelHyper::lengthscales() const { return log_lengthscales.array().exp().matrix(); }

void KernelHyper::validate() const {
  if (dim() < 1) throw std::invalid_argument("kernel dimension must be at least 1");
  if (!std::isfinite(log_amplitude) || !log_lengthscales.allFinite()) {
    throw std::invalid_argument("kernel hyperparameters must be finite");
  }
}

BasisPoint BasisPoint::at(const VectorXd& x) { return {x, VectorXd::Zero(x.size())}; }

BasisSet::BasisSet(MatrixXd locs, MatrixXd log_mults)
    : locations(std::move(locs)), log_multipliers(std::move(log_mults)) {
  if (locations.rows() != log_multipliers.rows() || locations.cols() != log_multipliers.cols()) {
    throw std::invalid_argument("basis locations and multipliers differ in shape");
  }
}

BasisSet BasisSet::at(const MatrixXd& points) {
  return {points, MatrixXd::Zero(points.rows(), points.cols())};
}

BasisPoint BasisSet::point(Index i) const { return {locations.col(i), log_multipliers.col(i)}; }

void BasisSet::append(const VectorXd& location, const VectorXd& log_mults) {
  if (location.size() != dim() || log_mults.size() != dim()) {
    throw std::invalid_argument("appended basis point has the wrong dimension");
  }
  const Index m = size();
  locations.conservativeResize(Eigen::NoChange, m + 1);
  log_multipliers.conservativeResize(Eigen::NoChange, m + 1);
  locations.col(m) = location;
  log_multipliers.col(m) = log_mults;
}

BasisSet BasisSet::subset(const std::vector<Index>& columns) const {
  BasisSet out(dim());
  out.locations.resize(dim(), Index(columns.size()));
  out.log_multipliers.resize(dim(), Index(columns.size()));
  for (Index k = 0; k < Index(columns.size()); ++k) {
    out.locations.col(k) = locations.col(columns[k]);
    out.log_multipliers.col(k) = log_multipliers.col(columns[k]);
  }
  return out;
}

bool BasisSet::operator==(const BasisSet& other) const {
  return locations.rows() == other.locations.rows() && size() == other.size() &&
         locations == other.locations && log_multipliers == other.log_multipliers;
}

double se_ard_cov(const VectorXd& x, const VectorXd& x2, const KernelHyper& hyper) {
  require_dim(x.size(), hyper.dim(), "x");
  require_dim(x2.size(), hyper.dim(), "x2");
  require_finite(x, "x");
  require_finite(x2, "x2");
  const VectorXd s = hyper.lengthscales();
  const double r2 = ((x - x2).array() / s.array()).square().sum();
  return std::exp(2.0 * hyper.log_amplitude - 0.5 * r2);
}

double gen_basis_cov(const BasisPoint& b, const BasisPoint& b2, const KernelHyper& hyper) {
  const BasisSet rows(b.location, b.log_multipliers);
  const BasisSet cols(b2.location, b2.log_multipliers);
  return evaluate(basis_side(rows, hyper), basis_side(cols, hyper), 1.0)(0, 0);
}

double gen_cross_cov(const BasisPoint& b, const VectorXd& x, const KernelHyper& hyper) {
  const MatrixXd xs = x;
  const BasisSet basis(b.location, b.log_multipliers);
  return evaluate(input_side(xs, hyper), basis_side(basis, hyper), hyper.amplitude())(0, 0);
}

const MatrixXd* KernelBlock::partial(const ParamKey& key) const {
  for (const auto& [k, m] : partials) {
    if (k == key) return &m;
  }
  return nullptr;
}

KernelBlock prior_block(const MatrixXd& rows, const MatrixXd& cols, const KernelHyper& hyper,
                        PartialRequest wants) {
  require_nonempty(rows.cols(), "row list");
  require_nonempty(cols.cols(), "column list");
  return block_with_partials(input_side(rows, hyper), input_side(cols, hyper), 2.0, hyper, wants);
}

KernelBlock cross_block(const MatrixXd& rows, const BasisSet& cols, const KernelHyper& hyper,
                        PartialRequest wants) {
  require_nonempty(rows.cols(), "row list");
  require_nonempty(cols.size(), "column list");
  return block_with_partials(input_side(rows, hyper), basis_side(cols, hyper), 1.0, hyper, wants);
}

KernelBlock basis_block(const BasisSet& rows, const BasisSet& cols, const KernelHyper& hyper,
                        PartialRequest wants) {
  require_nonempty(rows.size(), "row list");
  require_nonempty(cols.size(), "column list");
  return block_with_partials(basis_side(rows, hyper), basis_side(cols, hyper), 0.0, hyper, wants);
}

BlockGradient contract_prior_block(const MatrixXd& rows, const MatrixXd& cols,
                                   const KernelHyper& hyper, const MatrixXd& values,
                                   const MatrixXd& weights) {
  return contract(input_side(rows, hyper), input_side(cols, hyper), 2.0, values, weights);
}

BlockGradient contract_cross_block(const MatrixXd& rows, const BasisSet& cols,
                                   const KernelHyper& hyper, const MatrixXd& values,
                                   const MatrixXd& weights) {
  return contract(input_side(rows, hyper), basis_side(cols, hyper), 1.0, values, weights);
}

BlockGradient contract_basis_block(const BasisSet& rows, const BasisSet& cols,
                                   const KernelHyper& hyper, const MatrixXd& values,
                                   const MatrixXd& weights) {
  return contract(basis_side(rows, hyper), basis_side(cols, hyper), 0.0, values, weights);
}

}  // namespace dgp
