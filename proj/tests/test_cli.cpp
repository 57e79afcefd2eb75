#include "doctest.h"

#include "dgp/cli.hpp"
#include "test_support.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace dgp;
using namespace dgp::cli;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
  const char* env = std::getenv("DGP_TMP");
  fs::path p = env ? fs::path(env) : fs::temp_directory_path() / "dgp_cli_tests";
  fs::create_directories(p);
  return p;
}

fs::path write_file(const std::string& name, const std::string& text) {
  const fs::path p = tmp_dir() / name;
  std::ofstream(p) << text;
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path sinc_file(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-5, 5);
  std::normal_distribution<double> e(0, 0.1);
  std::ostringstream out;
  out << "x,y\n" << std::setprecision(17);
  for (Index i = 0; i < n; ++i) {
    const double x = u(rng);
    const double px = 3.141592653589793 * x;
    out << x << ',' << (px == 0 ? 1.0 : std::sin(px) / px) + e(rng) << '\n';
  }
  return write_file("sinc_" + std::to_string(seed) + ".csv", out.str());
}

int run(std::vector<std::string> args, std::string* out_text = nullptr,
        std::string* err_text = nullptr) {
  args.insert(args.begin(), "dgp");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(int(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

Json strip_wall_clock(Json report) {
  for (auto& e : report["trace"]) e.erase("wall_ms");
  return report;
}

}  // namespace

TEST_CASE("load_csv parses header and rows") {
  const fs::path p = write_file("three.csv", "x1,x2,y\n1,2,3\n4,5,6\n\n7,8,9.5\n");
  const Dataset d = load_csv(p.string());
  CHECK(d.size() == 3);
  CHECK(d.dim() == 2);
  CHECK(d.inputs(1, 2) == 8.0);
  CHECK(d.targets(2) == 9.5);

  CsvOptions by_name;
  by_name.target_column = "x1";
  const Dataset e = load_csv(p.string(), by_name);
  CHECK(e.targets(1) == 4.0);
  CHECK(e.inputs(0, 1) == 5.0);
  CsvOptions by_index;
  by_index.target_column = "1";
  CHECK(load_csv(p.string(), by_index).targets(0) == 2.0);
}

TEST_CASE("load_csv errors name the row") {
  const fs::path nan = write_file("nan.csv", "x,y\n1,2\n3,NaN\n");
  CHECK_THROWS_WITH_AS(load_csv(nan.string()), doctest::Contains(":3:"), std::runtime_error);
  const fs::path text = write_file("text.csv", "x,y\n1,abc\n");
  CHECK_THROWS_WITH_AS(load_csv(text.string()), doctest::Contains(":2:"), std::runtime_error);
  const fs::path ragged = write_file("ragged.csv", "x,y\n1,2,3\n");
  CHECK_THROWS_AS(load_csv(ragged.string()), std::runtime_error);
  const fs::path empty = write_file("empty.csv", "x,y\n");
  CHECK_THROWS_AS(load_csv(empty.string()), std::runtime_error);
  CHECK_THROWS_AS(load_csv((tmp_dir() / "missing.csv").string()), std::runtime_error);
  CsvOptions bad_target;
  bad_target.target_column = "z";
  CHECK_THROWS_AS(load_csv(nan.string(), bad_target), std::invalid_argument);
}

TEST_CASE("write_csv then load_csv round-trips") {
  std::mt19937_64 rng(51);
  Dataset d;
  d.inputs = testing::random_matrix(3, 12, rng, -100, 100);
  d.targets = testing::random_vector(12, rng);
  d.inputs(0, 0) = 0.1;
  d.targets(0) = 1e-300;
  const fs::path p = tmp_dir() / "roundtrip.csv";
  write_csv(p.string(), d);
  const Dataset back = load_csv(p.string());
  CHECK(back.inputs == d.inputs);
  CHECK(back.targets == d.targets);
}

TEST_CASE("input normalization") {
  const fs::path p = write_file("norm.csv", "a,b,y\n1,5,0\n3,5,1\n5,5,2\n");
  CsvOptions opt;
  opt.normalize_inputs = true;
  const Dataset d = load_csv(p.string(), opt);
  REQUIRE(d.normalization.has_value());
  CHECK(d.normalization->input_mean(0) == doctest::Approx(3.0));
  CHECK(d.normalization->input_scale(1) == 1.0);
  CHECK(d.inputs.row(0).mean() == doctest::Approx(0.0));
  CHECK(d.inputs(1, 0) == 0.0);
}

TEST_CASE("evaluate") {
  std::mt19937_64 rng(52);
  DecoupledModel m = testing::random_model(1, 3, 2, rng);
  Dataset test;
  test.inputs = testing::random_matrix(1, 6, rng, -2, 2);
  const PredictiveMoments mom = predict(m, test.inputs);

  test.targets = mom.mean;
  test.targets(0) += 1e-9;
  CHECK(evaluate(m, test).nmse <= 1e-12);

  test.targets = testing::random_vector(6, rng);
  DecoupledModel constant = m;
  constant.a.setZero();
  Dataset centered = test;
  centered.targets.array() -= centered.targets.mean();
  CHECK(evaluate(constant, centered).nmse == doctest::Approx(1.0).epsilon(1e-12));

  const double var = (test.targets.array() - test.targets.mean()).square().mean();
  const double mse = (test.targets - mom.mean).squaredNorm() / 6.0;
  const Metrics got = evaluate(m, test);
  CHECK(got.nmse == doctest::Approx(mse / var).epsilon(1e-12));
  CHECK(got.test_vlb ==
        doctest::Approx(ell_gaussian(mom, test.targets, m.log_noise) - kl_normal_prior(m)));

  Dataset reversed = test;
  reversed.inputs = test.inputs.rowwise().reverse();
  reversed.targets = test.targets.reverse();
  CHECK(evaluate(m, reversed).nmse == doctest::Approx(got.nmse).epsilon(1e-12));

  test.targets.setConstant(2.0);
  CHECK_THROWS_AS(evaluate(m, test), std::invalid_argument);
}

TEST_CASE("model snapshots round-trip") {
  std::mt19937_64 rng(53);
  const DecoupledModel m = testing::random_model(2, 4, 3, rng);
  const Json j = model_to_json(m, Normalization{VectorXd::Ones(2), VectorXd::Constant(2, 2.0)});
  CHECK(j["L"].size() == 9);
  CHECK(j["L"][1].get<double>() == 0.0);
  CHECK(j["L"][3].get<double>() == m.L(1, 0));
  const DecoupledModel back = model_from_json(Json::parse(j.dump()));
  CHECK(flatten_parameters(back) == flatten_parameters(m));
  CHECK(j["normalization"]["input_scale"][0].get<double>() == 2.0);
}

TEST_CASE("run_cli: exit codes") {
  std::string out, err;
  CHECK(run({"--help"}, &out, &err) == 0);
  CHECK(out.find("--m-alpha") != std::string::npos);
  CHECK(run({"--iters", "3"}, &out, &err) == 2);
  CHECK(run({"--data", "x.csv", "--bogus"}, &out, &err) == 2);
  CHECK(run({"--data", "x.csv", "--algo", "magic"}, &out, &err) == 2);
  CHECK(run({"--data", "x.csv", "--lr", "-1"}, &out, &err) == 2);
  CHECK(run({"--data", (tmp_dir() / "missing.csv").string()}, &out, &err) == 1);
  CHECK(err.find("error") != std::string::npos);
  const fs::path nan = write_file("nan_cli.csv", "x,y\n1,2\n3,nan\n");
  CHECK(run({"--data", nan.string()}, &out, &err) == 1);
  const fs::path data = sinc_file(60, 1);
  CHECK(run({"--data", data.string(), "--kl-cols", "zero"}, &out, &err) == 1);
}

TEST_CASE("run_cli: zero iterations and report schema") {
  const fs::path data = sinc_file(80, 2);
  const fs::path report = tmp_dir() / "report0.json";
  REQUIRE(run({"--data", data.string(), "--iters", "0", "--report", report.string()}) == 0);
  const Json r = Json::parse(read_file(report));
  for (const char* key : {"config", "trace", "metrics", "model"}) CHECK(r.contains(key));
  CHECK(r["trace"].empty());
  CHECK(r["model"]["m_alpha"] == 0);
  CHECK(r["model"]["hyper"]["amplitude"].get<double>() == 1.0);
  for (const char* key : {"test_nmse", "test_vlb", "train_vlb"}) {
    CHECK(std::isfinite(r["metrics"][key].get<double>()));
  }
  CHECK(r["config"]["n_train"].get<int>() + r["config"]["n_test"].get<int>() == 80);
  CHECK(r["config"]["batch"].get<int>() == 72);
}

TEST_CASE("run_cli: seeded runs are reproducible") {
  const fs::path data = sinc_file(120, 3);
  std::vector<std::string> args = {"--data", data.string(), "--iters", "25", "--seed", "7",
                                   "--m-alpha", "20", "--m-beta", "5", "--batch", "30",
                                   "--kl-cols", "8", "--lr", "0.05"};
  std::string a, b;
  REQUIRE(run(args, &a) == 0);
  REQUIRE(run(args, &b) == 0);
  const Json ja = Json::parse(a), jb = Json::parse(b);
  CHECK(strip_wall_clock(ja).dump() == strip_wall_clock(jb).dump());
  CHECK(ja["trace"].size() == 25);
  CHECK(ja["model"]["m_alpha"] == 20);
  CHECK(ja["model"]["m_beta"] == 5);

  args[5] = "8";
  std::string c;
  REQUIRE(run(args, &c) == 0);
  CHECK(strip_wall_clock(Json::parse(c)).dump() != strip_wall_clock(ja).dump());
}

TEST_CASE("run_cli: algorithms, plot data and snapshots") {
  const fs::path data = sinc_file(100, 4);
  const fs::path plot = tmp_dir() / "plot.csv";
  const fs::path snap = tmp_dir() / "model.json";
  std::string out;
  REQUIRE(run({"--data", data.string(), "--algo", "coupled", "--m-alpha", "6", "--iters", "5",
               "--batch", "20", "--increment", "3", "--plot-grid", plot.string(), "--model-out",
               snap.string(), "--normalize"},
              &out) == 0);
  const Json r = Json::parse(out);
  CHECK(r["model"]["m_beta"] == 6);
  const std::string grid = read_file(plot);
  CHECK(grid.rfind("x,mean,lo,hi\n", 0) == 0);
  CHECK(std::count(grid.begin(), grid.end(), '\n') == 201);
  const DecoupledModel m = model_from_json(Json::parse(read_file(snap)));
  CHECK(m.alpha == m.beta);

  REQUIRE(run({"--data", data.string(), "--algo", "exact"}, &out) == 0);
  const Json ex = Json::parse(out);
  CHECK(ex["trace"].empty());
  CHECK(ex["model"]["m_alpha"] == 90);

  const fs::path test = sinc_file(30, 5);
  REQUIRE(run({"--data", data.string(), "--test-data", test.string(), "--iters", "3",
               "--likelihood", "mc", "--mc-samples", "10"},
              &out) == 0);
  CHECK(Json::parse(out)["config"]["n_test"] == 30);
}

TEST_CASE("dgp executable") {
  const char* exe = std::getenv("DGP_CLI");
  if (!exe) return;
  const fs::path data = sinc_file(50, 6);
  const fs::path report = tmp_dir() / "exe_report.json";
  const std::string cmd = std::string(exe) + " --data " + data.string() + " --iters 2 --report " +
                          report.string();
  CHECK(std::system(cmd.c_str()) == 0);
  CHECK(Json::parse(read_file(report))["trace"].size() == 2);
  const std::string bad = std::string(exe) + " --nope > /dev/null 2>&1";
  const int status = std::system(bad.c_str());
  CHECK(WEXITSTATUS(status) == 2);
}
