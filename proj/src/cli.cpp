#include "dgp/cli.hpp"

#include "dgp/oracles.hpp"

#include "CLI11.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dgp::cli {

namespace {

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, delim)) out.push_back(field);
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::optional<double> parse_number(const std::string& text) {
  const std::string t = trim(text);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

std::size_t resolve_target(const std::vector<std::string>& header, const std::string& target) {
  if (target.empty()) return header.size() - 1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (trim(header[i]) == target) return i;
  }
  std::size_t idx = 0;
  const auto [ptr, ec] = std::from_chars(target.data(), target.data() + target.size(), idx);
  if (ec == std::errc() && ptr == target.data() + target.size() && idx < header.size()) {
    return idx;
  }
  throw std::invalid_argument("target column '" + target + "' not found in header");
}

Json vec_json(const VectorXd& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

VectorXd json_vec(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), Index(v.size()));
}

Json points_json(const MatrixXd& points) {
  Json out = Json::array();
  for (Index i = 0; i < points.cols(); ++i) out.push_back(vec_json(points.col(i)));
  return out;
}

MatrixXd json_points(const Json& j, Index dim) {
  MatrixXd out(dim, Index(j.size()));
  for (Index i = 0; i < out.cols(); ++i) {
    const VectorXd p = json_vec(j.at(std::size_t(i)));
    if (p.size() != dim) throw std::invalid_argument("snapshot point has the wrong dimension");
    out.col(i) = p;
  }
  return out;
}

std::string algo_name(Algo a) {
  switch (a) {
    case Algo::decoupled: return "decoupled";
    case Algo::coupled: return "coupled";
    case Algo::exact: return "exact";
  }
  return "decoupled";
}

void apply_normalization(Dataset& data, const Normalization& norm) {
  data.inputs = ((data.inputs.colwise() - norm.input_mean).array().colwise() /
                 norm.input_scale.array())
                    .matrix();
  data.normalization = norm;
}

Json hyper_json(const KernelHyper& hyper, double log_noise) {
  Json j;
  j["log_amplitude"] = hyper.log_amplitude;
  j["log_lengthscales"] = vec_json(hyper.log_lengthscales);
  j["log_noise"] = log_noise;
  j["amplitude"] = hyper.amplitude();
  j["lengthscales"] = vec_json(hyper.lengthscales());
  j["noise_variance"] = std::exp(log_noise);
  return j;
}

}  // namespace

Dataset load_csv(const std::string& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open data file '" + path + "'");
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split(line, options.delimiter);
      break;
    }
  }
  if (header.size() < 2) {
    throw std::runtime_error(path + ": header must name at least one input and the target");
  }
  const std::size_t target = resolve_target(header, options.target_column);
  const std::size_t cols = header.size();

  std::vector<double> xs;
  std::vector<double> ys;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(line, options.delimiter);
    if (fields.size() != cols) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(cols) + " fields, found " +
                               std::to_string(fields.size()));
    }
    for (std::size_t c = 0; c < cols; ++c) {
      const auto v = parse_number(fields[c]);
      if (!v) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": field '" +
                                 trim(fields[c]) + "' is not a number");
      }
      if (!std::isfinite(*v)) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": non-finite value '" +
                                 trim(fields[c]) + "'");
      }
      (c == target ? ys : xs).push_back(*v);
    }
  }
  if (ys.empty()) throw std::runtime_error(path + ": dataset is empty");

  Dataset data;
  const Index dim = Index(cols - 1);
  data.inputs = Eigen::Map<const MatrixXd>(xs.data(), dim, Index(ys.size()));
  data.targets = Eigen::Map<const VectorXd>(ys.data(), Index(ys.size()));
  if (options.normalize_inputs) {
    Normalization norm;
    norm.input_mean = data.inputs.rowwise().mean();
    norm.input_scale =
        ((data.inputs.colwise() - norm.input_mean).array().square().rowwise().mean().sqrt())
            .matrix();
    for (Index d = 0; d < dim; ++d) {
      if (!(norm.input_scale(d) > 0.0)) norm.input_scale(d) = 1.0;
    }
    apply_normalization(data, norm);
  }
  data.validate();
  return data;
}

void write_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  for (Index d = 0; d < data.dim(); ++d) out << 'x' << (d + 1) << ',';
  out << "y\n";
  out << std::setprecision(17);
  for (Index n = 0; n < data.size(); ++n) {
    for (Index d = 0; d < data.dim(); ++d) out << data.inputs(d, n) << ',';
    out << data.targets(n) << '\n';
  }
}

Metrics evaluate(const DecoupledModel& model, const Dataset& test) {
  test.validate();
  const double mean = test.targets.mean();
  const double var = (test.targets.array() - mean).square().mean();
  if (!(var > 0.0)) throw std::invalid_argument("test targets have zero variance");
  const PredictiveMoments mom = predict(model, test.inputs);
  Metrics m;
  m.nmse = (test.targets - mom.mean).squaredNorm() / double(test.size()) / var;
  m.test_vlb = ell_gaussian(mom, test.targets, model.log_noise) - kl_normal_prior(model);
  return m;
}

Json model_to_json(const DecoupledModel& model, const std::optional<Normalization>& normalization) {
  Json j;
  j["dim"] = model.dim();
  j["log_amplitude"] = model.hyper.log_amplitude;
  j["log_lengthscales"] = vec_json(model.hyper.log_lengthscales);
  j["log_noise"] = model.log_noise;
  j["alpha"] = {{"locations", points_json(model.alpha.locations)},
                {"log_multipliers", points_json(model.alpha.log_multipliers)}};
  j["a"] = vec_json(model.a);
  j["beta"] = {{"locations", points_json(model.beta.locations)},
               {"log_multipliers", points_json(model.beta.log_multipliers)}};
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> L = model.L;
  j["L"] = std::vector<double>(L.data(), L.data() + L.size());
  if (normalization) {
    j["normalization"] = {{"input_mean", vec_json(normalization->input_mean)},
                          {"input_scale", vec_json(normalization->input_scale)}};
  } else {
    j["normalization"] = nullptr;
  }
  return j;
}

DecoupledModel model_from_json(const Json& j) {
  const Index dim = j.at("dim").get<Index>();
  DecoupledModel m;
  m.hyper = {j.at("log_amplitude").get<double>(), json_vec(j.at("log_lengthscales"))};
  m.log_noise = j.at("log_noise").get<double>();
  m.alpha = BasisSet(json_points(j.at("alpha").at("locations"), dim),
                     json_points(j.at("alpha").at("log_multipliers"), dim));
  m.a = json_vec(j.at("a"));
  m.beta = BasisSet(json_points(j.at("beta").at("locations"), dim),
                    json_points(j.at("beta").at("log_multipliers"), dim));
  const VectorXd flat = json_vec(j.at("L"));
  const Index mb = m.beta.size();
  if (flat.size() != mb * mb) throw std::invalid_argument("snapshot L has the wrong size");
  m.L = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      flat.data(), mb, mb);
  m.validate();
  return m;
}

void write_plot_grid(const std::string& path, const DecoupledModel& model, const Dataset& data,
                     Index points) {
  if (data.dim() != 1) throw std::invalid_argument("plot data is only produced for 1-D inputs");
  if (points < 2) throw std::invalid_argument("plot grid needs at least two points");
  const double lo = data.inputs.minCoeff();
  const double hi = data.inputs.maxCoeff();
  const MatrixXd grid = VectorXd::LinSpaced(points, lo, hi).transpose();
  const PredictiveMoments mom = predict(model, grid);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "x,mean,lo,hi\n" << std::setprecision(12);
  for (Index i = 0; i < points; ++i) {
    double x = grid(0, i);
    if (data.normalization) {
      x = x * data.normalization->input_scale(0) + data.normalization->input_mean(0);
    }
    const double band = 2.0 * std::sqrt(mom.variance(i));
    out << x << ',' << mom.mean(i) << ',' << mom.mean(i) - band << ',' << mom.mean(i) + band
        << '\n';
  }
}

Json run_experiment(const RunOptions& opt) {
  CsvOptions csv;
  csv.target_column = opt.target_col;
  csv.normalize_inputs = opt.normalize;
  Dataset all = load_csv(opt.data, csv);

  Dataset train_set;
  Dataset test_set;
  if (!opt.test_data.empty()) {
    train_set = all;
    CsvOptions test_csv = csv;
    test_csv.normalize_inputs = false;
    test_set = load_csv(opt.test_data, test_csv);
    if (test_set.dim() != train_set.dim()) {
      throw std::invalid_argument("test file has a different number of inputs");
    }
    if (all.normalization) apply_normalization(test_set, *all.normalization);
  } else {
    if (!(opt.test_frac > 0.0 && opt.test_frac < 1.0)) {
      throw std::invalid_argument("--test-frac must lie in (0, 1) without --test-data");
    }
    std::vector<Index> order(static_cast<std::size_t>(all.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::mt19937_64 split_rng(opt.seed);
    std::shuffle(order.begin(), order.end(), split_rng);
    const Index n_test = std::clamp<Index>(Index(std::llround(opt.test_frac * double(all.size()))),
                                           1, all.size() - 1);
    test_set = all.subset({order.begin(), order.begin() + n_test});
    train_set = all.subset({order.begin() + n_test, order.end()});
  }

  TrainConfig config;
  config.m_alpha_cap = opt.m_alpha;
  config.m_beta_cap = opt.algo == Algo::coupled ? opt.m_alpha : opt.m_beta;
  config.shared_basis = opt.algo == Algo::coupled;
  config.batch_size = std::min(opt.batch, train_set.size());
  config.increment = std::min(opt.increment, config.batch_size);
  config.iterations = opt.iters;
  config.gamma0 = opt.lr;
  config.seed = opt.seed;
  if (opt.kl_cols != "exact") {
    const auto n = parse_number(opt.kl_cols);
    if (!n || *n < 1 || std::floor(*n) != *n) {
      throw std::invalid_argument("--kl-cols must be 'exact' or a positive integer");
    }
    config.kl_column_samples = Index(*n);
  }
  if (opt.likelihood == "mc") {
    config.likelihood = LikelihoodKind::monte_carlo;
  } else if (opt.likelihood != "gaussian") {
    throw std::invalid_argument("--likelihood must be 'gaussian' or 'mc'");
  }
  config.mc_samples = opt.mc_samples;

  TrainResult result;
  if (opt.algo == Algo::exact) {
    if (train_set.size() > oracles::kMaxDenseSize) {
      throw std::invalid_argument("exact GP regression is limited to " +
                                  std::to_string(oracles::kMaxDenseSize) + " training points");
    }
    std::mt19937_64 rng(opt.seed);
    const HyperInit init = init_hyper(train_set.inputs, train_set.targets, rng);
    result.model = oracles::exact_posterior_model(train_set.inputs, train_set.targets, init.hyper,
                                                  init.log_noise);
  } else {
    result = train(train_set, config);
  }
  const DecoupledModel& model = result.model;
  const Metrics metrics = evaluate(model, test_set);
  const double train_vlb = elbo(model, train_set.inputs, train_set.targets, train_set.size());

  Json report;
  report["config"] = {
      {"data", opt.data},
      {"test_data", opt.test_data},
      {"target_col", opt.target_col},
      {"test_frac", opt.test_frac},
      {"algo", algo_name(opt.algo)},
      {"m_alpha", config.m_alpha_cap},
      {"m_beta", config.m_beta_cap},
      {"batch", config.batch_size},
      {"increment", config.increment},
      {"iters", config.iterations},
      {"lr", config.gamma0},
      {"seed", config.seed},
      {"kl_cols", opt.kl_cols},
      {"likelihood", opt.likelihood},
      {"mc_samples", opt.mc_samples},
      {"normalize", opt.normalize},
      {"n_train", train_set.size()},
      {"n_test", test_set.size()},
      {"dim", train_set.dim()},
  };
  Json trace = Json::array();
  for (const TraceEntry& e : result.trace) {
    trace.push_back({{"iteration", e.iteration},
                     {"wall_ms", e.wall_ms},
                     {"elbo", e.elbo},
                     {"rejected", e.rejected}});
  }
  report["trace"] = std::move(trace);
  report["metrics"] = {
      {"test_nmse", metrics.nmse}, {"test_vlb", metrics.test_vlb}, {"train_vlb", train_vlb}};
  Json summary = {{"m_alpha", model.m_alpha()}, {"m_beta", model.m_beta()}};
  summary["hyper"] = hyper_json(model.hyper, model.log_noise);
  summary["rejected_steps"] = result.rejected_steps;
  report["model"] = std::move(summary);

  if (!opt.plot_grid.empty()) write_plot_grid(opt.plot_grid, model, train_set);
  if (!opt.model_out.empty()) {
    std::ofstream out(opt.model_out);
    if (!out) throw std::runtime_error("cannot write '" + opt.model_out + "'");
    out << model_to_json(model, all.normalization).dump(2) << '\n';
  }
  return report;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunOptions opt;
  CLI::App app{"Decoupled variational GP regression: train, evaluate and report"};
  app.option_defaults()->always_capture_default();
  app.add_option("--data", opt.data, "Training CSV (header row, comma-delimited)")->required();
  app.add_option("--test-data", opt.test_data, "Held-out CSV; replaces the random split");
  app.add_option("--target-col", opt.target_col, "Target column name or index (default: last)");
  app.add_option("--test-frac", opt.test_frac, "Held-out fraction of --data")
      ->check(CLI::Range(0.0, 1.0));
  app.add_option("--m-alpha", opt.m_alpha, "Mean basis cap")->check(CLI::NonNegativeNumber);
  app.add_option("--m-beta", opt.m_beta, "Covariance basis cap")->check(CLI::NonNegativeNumber);
  app.add_option("--batch", opt.batch, "Minibatch size")->check(CLI::PositiveNumber);
  app.add_option("--increment", opt.increment, "Basis points added per iteration")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--iters", opt.iters, "Training iterations")->check(CLI::NonNegativeNumber);
  app.add_option("--lr", opt.lr, "Initial step size gamma0")->check(CLI::PositiveNumber);
  app.add_option("--seed", opt.seed, "Random seed");
  app.add_option("--algo", opt.algo, "decoupled | coupled | exact")
      ->transform(CLI::CheckedTransformer(
                      std::map<std::string, Algo>{{"decoupled", Algo::decoupled},
                                                  {"coupled", Algo::coupled},
                                                  {"exact", Algo::exact}},
                      CLI::ignore_case)
                      .description(""))
      ->default_str("decoupled");
  app.add_option("--kl-cols", opt.kl_cols, "KL mean-gradient columns: exact or a count");
  app.add_option("--likelihood", opt.likelihood, "gaussian (closed form) or mc (Monte Carlo)")
      ->check(CLI::IsMember({"gaussian", "mc"}));
  app.add_option("--mc-samples", opt.mc_samples, "Samples per point for --likelihood mc")
      ->check(CLI::PositiveNumber);
  app.add_flag("--normalize", opt.normalize, "z-score the inputs");
  app.add_option("--report", opt.report, "Write the JSON report here instead of stdout");
  app.add_option("--plot-grid", opt.plot_grid, "Write x,mean,lo,hi plot data (1-D inputs)");
  app.add_option("--model-out", opt.model_out, "Write a JSON model snapshot");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    const Json report = run_experiment(opt);
    if (opt.report.empty()) {
      out << report.dump(2) << '\n';
    } else {
      std::ofstream file(opt.report);
      if (!file) throw std::runtime_error("cannot write '" + opt.report + "'");
      file << report.dump(2) << '\n';
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace dgp::cli
