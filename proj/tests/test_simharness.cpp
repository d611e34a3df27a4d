#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hdboot/error.hpp"
#include "hdboot/io.hpp"
#include "hdboot/simharness.hpp"
#include "hdboot/stats.hpp"

using namespace hdboot;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("hdboot_test_" + name);
  fs::remove_all(dir);
  return dir;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.n = 60;
  c.kappa_grid = {0.1, 0.3};
  c.n_sims = 12;
  c.B = 50;
  c.master_seed = 77;
  c.plots = false;
  for (const char* s : {"pairs", "residual_hat", "jackknife"}) {
    SchemeSpec spec;
    spec.plan.scheme = parse_scheme(s);
    c.schemes.push_back(spec);
  }
  return c;
}

std::string rows_text(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  write_report_csv(rows, os);
  return os.str();
}

}  // namespace

TEST_CASE("gaussian design moments") {
  const MatrixXd X = gen_design(DesignSpec::parse("gaussian"), 100000, 3, 5);
  for (Eigen::Index j = 0; j < 3; ++j) {
    const double m = X.col(j).mean();
    const double v = (X.col(j).array() - m).square().sum() / (X.rows() - 1);
    CHECK(std::abs(m) < 3.0 / std::sqrt(1e5));
    CHECK(std::abs(v - 1.0) < 3.0 * std::sqrt(2.0 / 1e5));
  }
}

TEST_CASE("double exponential design has unit variance") {
  const MatrixXd X = gen_design(DesignSpec::parse("double_exp"), 100000, 2, 6);
  const double v = X.col(0).squaredNorm() / X.rows();
  // Laplace with variance 1 has fourth moment 6, so var(X^2) = 5.
  CHECK(std::abs(v - 1.0) < 3.0 * std::sqrt(5.0 / 1e5));
}

TEST_CASE("elliptical designs scale whole rows") {
  const int n = 20000, p = 50;
  const MatrixXd E = gen_design(DesignSpec::parse("elliptical:unif"), n, p, 7);
  const VectorXd r = E.rowwise().squaredNorm() / p;
  // E[lambda^2] for Unif(0.5, 1.5) is 13/12.
  const double m = r.mean();
  const double sd = std::sqrt((r.array() - m).square().sum() / (n - 1));
  CHECK(std::abs(m - 13.0 / 12.0) < 3.0 * sd / std::sqrt(n));

  // Row norms are far more dispersed than under an iid design.
  const MatrixXd G = gen_design(DesignSpec::parse("gaussian"), n, p, 7);
  const VectorXd g = G.rowwise().squaredNorm() / p;
  const double gsd = std::sqrt((g.array() - g.mean()).square().sum() / (n - 1));
  CHECK(sd > 2.0 * gsd);

  for (const char* name : {"elliptical:exp", "elliptical:normal"}) {
    const MatrixXd L = gen_design(DesignSpec::parse(name), n, 20, 8);
    const double m2 = L.squaredNorm() / (n * 20.0);
    CHECK(m2 == doctest::Approx(1.0).epsilon(0.05));
  }
  CHECK(DesignSpec::parse("elliptical:exp").name() == "elliptical:exp");
  CHECK_THROWS_AS(DesignSpec::parse("elliptical"), Error);
}

TEST_CASE("laplace errors have variance two") {
  const VectorXd e = gen_errors(ErrorLaw::StdLaplace, 100000, 9);
  const double m = e.mean();
  const double v = (e.array() - m).square().sum() / (e.size() - 1);
  // Fourth moment 24, so var(e^2) = 20.
  CHECK(std::abs(v - 2.0) < 3.0 * std::sqrt(20.0 / 1e5));
  CHECK(error_variance(parse_error_law("laplace")) == 2.0);
  CHECK(gen_errors(ErrorLaw::StdNormal, 10, 3) == gen_errors(ErrorLaw::StdNormal, 10, 3));
}

TEST_CASE("config parsing") {
  const std::string text = R"(
schema: 1
experiment: variance_ratio
n: 100
kappa_grid: [0.1, 0.5]
design: elliptical:normal
errors: laplace
loss: huber:1
n_sims: 7
B: 99
master_seed: 12
threads: 2
schemes:
  - pairs
  - scheme: weighted
    weights: calibrated
  - scheme: weighted
    weights: poisson_mix:0.9
  - scheme: jackknife
    correction: ls
  - scheme: deconv
    draw_style: frozen
    bandwidth: 0.3
)";
  const ExperimentConfig c = ExperimentConfig::from_yaml(text);
  CHECK(c.experiment == ExperimentKind::VarianceRatio);
  CHECK(c.n == 100);
  CHECK(c.kappa_grid == std::vector<double>{0.1, 0.5});
  CHECK(c.design.name() == "elliptical:normal");
  CHECK(c.errors == ErrorLaw::StdLaplace);
  CHECK(c.loss == Loss::huber(1.0));
  CHECK(c.n_sims == 7);
  CHECK(c.B == 99);
  CHECK(c.master_seed == 12);
  CHECK(c.threads == 2);
  REQUIRE(c.schemes.size() == 5);
  CHECK(c.schemes[1].label() == "weighted[calibrated]");
  CHECK(c.schemes[2].label() == "weighted[poisson_mix:0.9]");
  CHECK(c.schemes[3].label() == "jackknife[ls]");
  CHECK(c.schemes[4].label() == "deconv[frozen]");
  REQUIRE(c.schemes[4].plan.bandwidth.has_value());
  CHECK(*c.schemes[4].plan.bandwidth == 0.3);
  CHECK(c.p_for(0.5) == 50);

  CHECK_THROWS_AS(ExperimentConfig::from_yaml("n: 100\nschemes: [pairs]"), Error);
  CHECK_THROWS_AS(ExperimentConfig::from_yaml("schema: 2\nschemes: [pairs]"), Error);
  CHECK_THROWS_AS(ExperimentConfig::from_yaml("schema: 1\nschemes: [pairs]\nbogus: 1"), Error);
  CHECK_THROWS_AS(ExperimentConfig::from_yaml("schema: 1\nschemes: [pairs]\nkappa_grid: [1.2]"), Error);
  CHECK_THROWS_AS(ExperimentConfig::from_yaml("schema: 1\nschemes: [pairs]\nn: 10\nkappa_grid: [0.01]"),
                  Error);
  CHECK_THROWS_AS(ExperimentConfig::from_yaml("schema: 1\nschemes: [{scheme: pairs, weights: calibrated}]"),
                  Error);
  CHECK_THROWS_AS(ExperimentConfig::from_yaml("schema: 1\nschemes: [pairs, pairs]"), Error);
  CHECK_THROWS_AS(ExperimentConfig::from_yaml("schema: 1\nn: [1, 2]\nschemes: [pairs]"), Error);
  CHECK_THROWS_AS(ExperimentConfig::from_yaml("schema: 1\n"), Error);
}

TEST_CASE("shipped configs load") {
  int seen = 0;
  for (const auto& entry : std::filesystem::directory_iterator(HDBOOT_CONFIG_DIR)) {
    if (entry.path().extension() != ".yaml") continue;
    CAPTURE(entry.path().string());
    CHECK_NOTHROW(ExperimentConfig::load(entry.path().string()));
    ++seen;
  }
  CHECK(seen >= 4);
}

TEST_CASE("sweeps are deterministic across thread counts") {
  ExperimentConfig c = small_config();
  const SimReport a = run_sweep(c);
  c.threads = 3;
  const SimReport b = run_sweep(c);
  CHECK(rows_text(a.rows) == rows_text(b.rows));
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(to_json_line(a.records[i]) == to_json_line(b.records[i]));
  }
  CHECK(a.records.size() == 24);
  // A record replays on its own.
  CHECK(to_json_line(simulate_one(c, 0.3, 5)) == to_json_line(a.records[12 + 5]));
}

TEST_CASE("report rows carry standard errors") {
  const SimReport r = run_sweep(small_config());
  for (const ReportRow& row : r.rows) {
    CHECK(std::isfinite(row.value));
    CHECK(row.se >= 0.0);
    if (row.metric == "miscoverage") {
      CHECK(row.value >= 0.0);
      CHECK(row.value <= 1.0);
      CHECK(row.se == doctest::Approx(proportion_se(row.value, row.n_sims)));
    }
  }
  CHECK(r.row(0.3, "jackknife", "gamma_hat_mean").value > 1.0);
  CHECK(r.row(0.1, "pairs", "failures").value == 0.0);
  CHECK_THROWS_AS(r.row(0.2, "pairs", "miscoverage"), Error);
}

TEST_CASE("constant weights give a zero variance ratio") {
  ExperimentConfig c = small_config();
  c.kappa_grid = {0.3};
  c.schemes.clear();
  SchemeSpec w;
  w.plan.scheme = Scheme::WeightedIID;
  w.plan.weights = WeightLaw::constant_one();
  c.schemes.push_back(w);
  const SimReport r = run_variance_ratio(c);
  for (const char* m : {"var_ratio_mean", "var_ratio_median", "var_ratio_q1", "var_ratio_q3"}) {
    CHECK(r.row(0.3, "weighted[const1]", m).value == 0.0);
  }
  CHECK_THROWS_AS(r.row(0.3, "weighted[const1]", "miscoverage"), Error);
}

TEST_CASE("parametric residual bootstrap covers at the nominal rate") {
  ExperimentConfig c;
  c.n = 100;
  c.kappa_grid = {0.1};
  c.n_sims = 400;
  c.B = 200;
  c.master_seed = 3;
  SchemeSpec g;
  g.plan.scheme = Scheme::GaussianResidual;
  c.schemes.push_back(g);
  const SimReport r = run_sweep(c);
  const ReportRow& miss = r.row(0.1, "gaussian", "miscoverage");
  MESSAGE("gaussian residual miscoverage " << miss.value << " +- " << miss.se);
  CHECK(std::abs(miss.value - 0.05) < 0.03);
  CHECK(r.row(0.1, "gaussian", "width_ratio").value == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("sweep outputs, dataset dumps and resume") {
  const fs::path dir = scratch_dir("sweep");
  ExperimentConfig c = small_config();
  c.kappa_grid = {0.3};
  c.n_sims = 6;
  c.output_dir = dir.string();
  c.dump_datasets = true;
  c.plots = true;
  const SimReport r = run_sweep(c);
  REQUIRE(fs::exists(dir / "report.csv"));
  REQUIRE(fs::exists(dir / "sims.jsonl"));
  CHECK(!fs::exists(dir / "sims.partial.jsonl"));
  CHECK(fs::exists(dir / "plot_miscoverage.svg"));
  const std::string report = slurp(dir / "report.csv");
  const std::string sims = slurp(dir / "sims.jsonl");
  CHECK(report == rows_text(r.rows));

  // Stored coefficients reproduce from the dumped data.
  const SimRecord& rec = r.records[4];
  const Dataset ds = read_dataset_csv((dir / "datasets" / "p18_sim4.csv").string());
  const FitResult f = fit(ds, c.loss);
  REQUIRE(static_cast<std::size_t>(f.beta_hat.size()) == rec.beta_hat.size());
  for (Eigen::Index j = 0; j < f.beta_hat.size(); ++j) {
    CHECK(std::abs(f.beta_hat[j] - rec.beta_hat[static_cast<std::size_t>(j)]) <= 1e-12);
  }

  // Interrupt after three records, then resume.
  {
    std::istringstream in(sims);
    std::ofstream partial(dir / "sims.partial.jsonl");
    std::string line;
    for (int i = 0; i < 3 && std::getline(in, line); ++i) partial << line << '\n';
    partial << "{\"kappa\": 0.3, \"p\"";  // torn line
  }
  fs::remove(dir / "sims.jsonl");
  fs::remove(dir / "report.csv");
  c.resume = true;
  int computed = 0;
  run_sweep(c, [&](std::size_t done, std::size_t total) {
    ++computed;
    CHECK(done <= total);
  });
  CHECK(computed == 3);
  CHECK(slurp(dir / "sims.jsonl") == sims);
  CHECK(slurp(dir / "report.csv") == report);
  fs::remove_all(dir);
}

TEST_CASE("simulation records round trip through json") {
  SimRecord r;
  r.kappa = 0.3;
  r.p = 60;
  r.sim = 4;
  r.seed = 0xfedcba9876543210ULL;
  r.ok = true;
  r.point = 0.1 / 3.0;
  r.beta_sq_mean = 1e-3;
  r.normal_width = 0.7;
  r.gamma_hat = 1.4285714285714286;
  SchemeRecord s;
  s.scheme = "weighted[poisson_mix:0.9]";
  s.ok = true;
  s.ci_lo = -0.25;
  s.ci_hi = 0.3;
  s.covered = true;
  s.boot_var = 0.01;
  s.redraws = 2;
  r.schemes.push_back(s);
  SchemeRecord bad;
  bad.scheme = "pairs";
  bad.error = "TooManyRedraws: x";
  r.schemes.push_back(bad);
  const std::string line = to_json_line(r);
  CHECK(to_json_line(from_json_line(line)) == line);
  CHECK(from_json_line(line).point == r.point);
  CHECK_THROWS_AS(from_json_line("{\"kappa\": 1}"), Error);
}

TEST_CASE("relative risk experiment") {
  ExperimentConfig c;
  c.experiment = ExperimentKind::RelativeRisk;
  c.n = 100;
  c.kappa_grid = {0.1, 0.5};
  c.errors = ErrorLaw::StdLaplace;
  c.loss = Loss::huber(1.0);
  c.first_pass_sims = 20;
  c.n_sims = 30;
  c.master_seed = 5;
  const SimReport r = run_relative_risk(c);
  for (double k : c.kappa_grid) {
    const double first = r.row(k, "G", "first_pass_risk").value;
    const double g = r.row(k, "G", "risk").value;
    CHECK(first == doctest::Approx(g).epsilon(0.2));
    for (const char* arm : {"G_conv", "G_norm"}) {
      const ReportRow& ratio = r.row(k, arm, "risk_ratio");
      CHECK(ratio.value == doctest::Approx(r.row(k, arm, "risk").value / g));
      CHECK(ratio.value > 0.7);
      CHECK(ratio.value < 1.5);
      CHECK(ratio.se > 0.0);
    }
  }
  // Normal errors are worse than Laplace errors for Huber(1) when p/n is small.
  CHECK(r.row(0.1, "G_norm", "risk_ratio").value > 1.0);
  CHECK(r.records.size() == 2 * (20 + 30));
}

TEST_CASE("dataset csv") {
  Dataset ds;
  ds.X = MatrixXd(2, 2);
  ds.X << 1.0 / 3.0, -2.5e-300, 4.0, 1e300;
  ds.y = VectorXd(2);
  ds.y << 0.1, -7.0;
  std::stringstream ss;
  write_dataset_csv(ds, ss);
  const Dataset back = read_dataset_csv(ss);
  CHECK(back.X == ds.X);
  CHECK(back.y == ds.y);

  std::istringstream ragged("1,2,3\n4,5\n");
  CHECK_THROWS_AS(read_dataset_csv(ragged), Error);
  std::istringstream text("1,2,x\n");
  CHECK_THROWS_AS(read_dataset_csv(text), Error);
  std::istringstream one("1\n2\n");
  CHECK_THROWS_AS(read_dataset_csv(one), Error);
  CHECK_THROWS_AS(read_dataset_csv(std::string("/nonexistent/file.csv")), Error);
}

TEST_CASE("report csv and svg") {
  std::vector<ReportRow> rows{{0.1, "pairs", "l2", "miscoverage", 0.01, 0.005, 300},
                              {0.5, "pairs", "l2", "miscoverage", 0.002, 0.002, 300},
                              {0.1, "residual", "l2", "miscoverage", 0.07, 0.01, 299}};
  std::stringstream ss;
  write_report_csv(rows, ss);
  const auto back = read_report_csv(ss);
  REQUIRE(back.size() == 3);
  CHECK(back[2].scheme == "residual");
  CHECK(back[2].n_sims == 299);
  CHECK(back[1].value == 0.002);

  std::ostringstream svg;
  write_line_chart_svg({{"a<b", {0.1, 0.5}, {0.2, 0.4}, {}}}, "t", "x", "y", svg);
  const std::string s = svg.str();
  CHECK(s.rfind("<svg", 0) == 0);
  CHECK(s.find("polyline") != std::string::npos);
  CHECK(s.find("a&lt;b") != std::string::npos);
  CHECK(s.find("</svg>") != std::string::npos);

  std::istringstream bad_header("a,b\n");
  CHECK_THROWS_AS(read_report_csv(bad_header), Error);
}
