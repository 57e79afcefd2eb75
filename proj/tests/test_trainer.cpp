#include "doctest.h"

#include "dgp/trainer.hpp"
#include "test_support.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

using namespace dgp;
using namespace dgp::testing;

namespace {

Dataset sine_data(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset d;
  d.inputs = random_matrix(1, n, rng, -3, 3);
  d.targets = d.inputs.row(0).transpose().array().sin().matrix() + 0.1 * random_vector(n, rng);
  return d;
}

}  // namespace

TEST_CASE("init_hyper") {
  std::mt19937_64 rng(41);
  MatrixXd X(1, 3);
  X << 0.0, 1.0, 2.0;
  const HyperInit h = init_hyper(X, VectorXd::LinSpaced(3, 0, 2), rng);
  CHECK(h.hyper.lengthscales()(0) == doctest::Approx(1.0));
  CHECK(h.hyper.log_amplitude == 0.0);
  CHECK(std::exp(h.log_noise) == doctest::Approx(1.0));

  const HyperInit flat = init_hyper(MatrixXd::Constant(2, 4, 3.0), VectorXd::Ones(4), rng);
  CHECK(flat.hyper.lengthscales()(0) == doctest::Approx(1.0));
  CHECK(flat.hyper.lengthscales()(1) == doctest::Approx(1.0));
  CHECK(std::exp(flat.log_noise) == doctest::Approx(1e-8));

  MatrixXd X2(2, 4);
  X2 << 0, 1, 2, 3, 0, 10, 20, 30;
  const HyperInit per_dim = init_hyper(X2, VectorXd::LinSpaced(4, 0, 1), rng);
  CHECK(per_dim.hyper.lengthscales()(0) == doctest::Approx(1.5));
  CHECK(per_dim.hyper.lengthscales()(1) == doctest::Approx(15.0));

  CHECK_THROWS_AS(init_hyper(MatrixXd(1, 0), VectorXd(0), rng), std::invalid_argument);

  const Dataset big = sine_data(500, 1);
  std::mt19937_64 r1(3), r2(3);
  const HyperInit b1 = init_hyper(big.inputs, big.targets, r1);
  const HyperInit b2 = init_hyper(big.inputs, big.targets, r2);
  CHECK(b1.hyper.log_lengthscales == b2.hyper.log_lengthscales);
  CHECK(b1.hyper.lengthscales()(0) == doctest::Approx(6.0 * (1.0 - std::sqrt(0.5))).epsilon(0.1));
}

TEST_CASE("sample_minibatch") {
  const Dataset d = sine_data(10, 2);
  std::mt19937_64 rng(42);
  const Batch all = sample_minibatch(d, 10, rng);
  std::vector<Index> idx = all.indices;
  std::sort(idx.begin(), idx.end());
  for (Index i = 0; i < 10; ++i) CHECK(idx[i] == i);
  for (Index k = 0; k < 10; ++k) {
    CHECK(all.targets(k) == d.targets(all.indices[k]));
  }

  std::mt19937_64 r1(7), r2(7);
  CHECK(sample_minibatch(d, 4, r1).indices == sample_minibatch(d, 4, r2).indices);

  std::vector<int> counts(10, 0);
  std::mt19937_64 r(43);
  for (int k = 0; k < 10000; ++k) counts[sample_minibatch(d, 1, r).indices[0]]++;
  for (int c : counts) {
    CHECK(c >= 850);
    CHECK(c <= 1150);
  }
  CHECK_THROWS_AS(sample_minibatch(d, 11, rng), std::invalid_argument);
  CHECK_THROWS_AS(sample_minibatch(d, 0, rng), std::invalid_argument);
}

TEST_CASE("add_basis") {
  const Dataset d = sine_data(20, 3);
  std::mt19937_64 rng(44);
  TrainConfig cfg;
  cfg.increment = 3;
  const Batch batch = sample_minibatch(d, 10, rng);
  const DecoupledModel empty = DecoupledModel::empty(KernelHyper::unit(1), std::log(0.1));
  const DecoupledModel grown = add_basis(empty, batch, cfg, rng);
  CHECK(grown.m_alpha() == 3);
  CHECK(grown.m_beta() == 3);
  CHECK(grown.a.isZero(0.0));
  CHECK(grown.L.isApprox(1e-3 * MatrixXd::Identity(3, 3)));
  CHECK(grown.alpha == grown.beta);
  CHECK(grown.alpha.log_multipliers.isZero(0.0));

  cfg.m_alpha_cap = 3;
  cfg.m_beta_cap = 3;
  const DecoupledModel same = add_basis(grown, batch, cfg, rng);
  CHECK(same.alpha == grown.alpha);
  CHECK(same.L == grown.L);

  cfg.m_alpha_cap = 100;
  cfg.m_beta_cap = 4;
  std::mt19937_64 r(5);
  DecoupledModel trained = random_model(1, 3, 3, r);
  const DecoupledModel more = add_basis(trained, batch, cfg, rng);
  CHECK(more.m_alpha() == 6);
  CHECK(more.m_beta() == 4);
  CHECK(more.a.head(3) == trained.a);
  CHECK(more.L.topLeftCorner(3, 3) == trained.L);
  CHECK(more.L(3, 3) == kInitialCholeskyDiagonal);
  const MatrixXd Q = random_matrix(1, 25, r, -3, 3);
  const PredictiveMoments before = predict(trained, Q);
  const PredictiveMoments after = predict(more, Q);
  CHECK((before.mean - after.mean).cwiseAbs().maxCoeff() == 0.0);
  CHECK(((before.variance - after.variance).array().abs() / before.variance.array()).maxCoeff() <=
        1e-4);
}

TEST_CASE("train: zero iterations returns the initialization") {
  const Dataset d = sine_data(50, 4);
  TrainConfig cfg;
  cfg.batch_size = 20;
  cfg.iterations = 0;
  cfg.seed = 9;
  const TrainResult res = train(d, cfg);
  CHECK(res.trace.empty());
  CHECK(res.model.m_alpha() == 0);
  CHECK(res.model.m_beta() == 0);
  std::mt19937_64 rng(9);
  const Batch first = sample_minibatch(d, 20, rng);
  const HyperInit init = init_hyper(first.inputs, first.targets, rng);
  CHECK(res.model.hyper.log_lengthscales == init.hyper.log_lengthscales);
  CHECK(res.model.log_noise == init.log_noise);
}

TEST_CASE("train: deterministic, capped and monotone in basis size") {
  const Dataset d = sine_data(80, 5);
  TrainConfig cfg;
  cfg.m_alpha_cap = 25;
  cfg.m_beta_cap = 7;
  cfg.batch_size = 16;
  cfg.increment = 4;
  cfg.iterations = 30;
  cfg.seed = 21;
  cfg.kl_column_samples = 5;
  const TrainResult a = train(d, cfg);
  const TrainResult b = train(d, cfg);
  CHECK(flatten_parameters(a.model) == flatten_parameters(b.model));
  REQUIRE(a.trace.size() == 30);
  for (std::size_t t = 0; t < a.trace.size(); ++t) CHECK(a.trace[t].elbo == b.trace[t].elbo);
  CHECK(a.model.m_alpha() == 25);
  CHECK(a.model.m_beta() == 7);

  Index prev_a = 0, prev_b = 0;
  for (Index T = 1; T <= 8; ++T) {
    cfg.iterations = T;
    const DecoupledModel m = train(d, cfg).model;
    CHECK(m.m_alpha() >= prev_a);
    CHECK(m.m_beta() >= prev_b);
    CHECK(m.m_alpha() <= 25);
    CHECK(m.m_beta() <= 7);
    prev_a = m.m_alpha();
    prev_b = m.m_beta();
  }
}

TEST_CASE("train: shared basis keeps alpha and beta identical") {
  const Dataset d = sine_data(60, 6);
  TrainConfig cfg;
  cfg.m_alpha_cap = 8;
  cfg.m_beta_cap = 8;
  cfg.shared_basis = true;
  cfg.batch_size = 20;
  cfg.increment = 4;
  cfg.iterations = 15;
  const TrainResult r = train(d, cfg);
  CHECK(r.model.alpha == r.model.beta);
  CHECK_NOTHROW(to_canonical(r.model));
}

TEST_CASE("train: Monte-Carlo likelihood runs and is deterministic") {
  const Dataset d = sine_data(40, 7);
  TrainConfig cfg;
  cfg.batch_size = 10;
  cfg.increment = 5;
  cfg.iterations = 10;
  cfg.likelihood = LikelihoodKind::monte_carlo;
  cfg.mc_samples = 20;
  const TrainResult a = train(d, cfg);
  const TrainResult b = train(d, cfg);
  CHECK(flatten_parameters(a.model) == flatten_parameters(b.model));
  CHECK(a.rejected_steps == 0);
}

TEST_CASE("train: full-batch ascent with fixed bases and hyperparameters") {
  const Dataset d = sine_data(40, 8);
  TrainConfig cfg;
  cfg.m_alpha_cap = 10;
  cfg.m_beta_cap = 10;
  cfg.batch_size = 40;
  cfg.increment = 10;
  cfg.learn_bases = false;
  cfg.learn_hyper = false;
  cfg.seed = 3;
  double prev = -std::numeric_limits<double>::infinity();
  for (Index T = 50; T <= 500; T += 50) {
    cfg.iterations = T;
    const DecoupledModel m = train(d, cfg).model;
    const double vlb = elbo(m, d.inputs, d.targets, d.size());
    CHECK(vlb >= prev - 1e-6 * std::abs(vlb));
    prev = vlb;
  }
}

TEST_CASE("config validation") {
  const Dataset d = sine_data(10, 9);
  TrainConfig cfg;
  cfg.batch_size = 5;
  cfg.increment = 6;
  CHECK_THROWS_AS(train(d, cfg), std::invalid_argument);
  cfg.increment = 2;
  cfg.batch_size = 11;
  CHECK_THROWS_AS(train(d, cfg), std::invalid_argument);
  cfg.batch_size = 5;
  cfg.shared_basis = true;
  CHECK_THROWS_AS(train(d, cfg), std::invalid_argument);
}
