#include "hdboot/simharness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include "hdboot/deconv.hpp"
#include "hdboot/error.hpp"
#include "hdboot/parallel.hpp"
#include "hdboot/stats.hpp"
#include "hdboot/theory.hpp"

namespace hdboot {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

namespace fs = std::filesystem;

namespace {

Error bad_config(const std::string& what) { return Error(ErrorCode::InvalidArgument, "config: " + what); }

void check_keys(const YAML::Node& node, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw bad_config("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get(const YAML::Node& node, const std::string& key) {
  try {
    return node[key].as<T>();
  } catch (const YAML::Exception&) {
    throw bad_config("key '" + key + "' has the wrong type");
  }
}

SchemeSpec parse_scheme_node(const YAML::Node& node) {
  SchemeSpec spec;
  if (node.IsScalar()) {
    spec.plan.scheme = parse_scheme(node.as<std::string>());
    return spec;
  }
  if (!node.IsMap()) throw bad_config("a scheme entry must be a name or a map");
  check_keys(node, {"scheme", "weights", "correction", "draw_style", "bandwidth", "elliptical_noise"},
             "scheme entry");
  if (!node["scheme"]) throw bad_config("scheme entry without 'scheme'");
  spec.plan.scheme = parse_scheme(get<std::string>(node, "scheme"));
  if (node["weights"]) {
    const auto w = get<std::string>(node, "weights");
    if (w == "calibrated") {
      spec.calibrated = true;
    } else {
      spec.plan.weights = WeightLaw::parse(w);
    }
  }
  if (node["correction"]) spec.plan.correction = parse_correction(get<std::string>(node, "correction"));
  if (node["draw_style"]) {
    const auto s = get<std::string>(node, "draw_style");
    if (s == "fresh") spec.plan.draw_style = DrawStyle::FreshDraws;
    else if (s == "frozen") spec.plan.draw_style = DrawStyle::FrozenDraw;
    else throw bad_config("draw_style must be 'fresh' or 'frozen'");
  }
  if (node["bandwidth"]) spec.plan.bandwidth = get<double>(node, "bandwidth");
  if (node["elliptical_noise"]) spec.plan.elliptical_noise = get<bool>(node, "elliptical_noise");
  return spec;
}

double lambda_draw(LambdaLaw law, CounterRng& rng) {
  switch (law) {
    case LambdaLaw::ExpSqrt2:
      return rng.exponential(std::sqrt(2.0));
    case LambdaLaw::StdNormal:
      return rng.normal();
    case LambdaLaw::Unif:
      return 0.5 + rng.uniform();
  }
  return 1.0;
}

// Standard error of an empirical quantile from the order statistics at
// m q -+ z sqrt(m q (1 - q)).
double quantile_se(std::vector<double> sorted, double q) {
  const double m = static_cast<double>(sorted.size());
  if (sorted.size() < 2) return 0.0;
  std::sort(sorted.begin(), sorted.end());
  const double half = 1.959964 * std::sqrt(m * q * (1.0 - q));
  const auto at = [&](double pos) {
    const auto i = static_cast<std::size_t>(std::clamp(std::round(pos), 1.0, m)) - 1;
    return sorted[i];
  };
  return (at(m * q + half) - at(m * q - half)) / (2.0 * 1.959964);
}

double sd_of_mean(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  return std::sqrt(sample_variance(xs) / static_cast<double>(xs.size()));
}

// Delta-method standard error of mean(a) / mean(b) for paired samples.
double ratio_se(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t m = a.size();
  if (m < 2) return 0.0;
  const double ma = mean(a), mb = mean(b);
  if (mb == 0.0) return 0.0;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
    sab += (a[i] - ma) * (b[i] - mb);
  }
  const double d = static_cast<double>(m - 1);
  const double r = ma / mb;
  const double v = (saa / d - 2.0 * r * sab / d + r * r * sbb / d) / (mb * mb * static_cast<double>(m));
  return std::sqrt(std::max(v, 0.0));
}

std::uint64_t sim_seed(const ExperimentConfig& config, int p, int sim) {
  return derive_seed(config.master_seed, static_cast<std::uint64_t>(p), static_cast<std::uint64_t>(sim));
}

bool wants(ExperimentKind experiment, ExperimentKind metric_group) {
  return experiment == ExperimentKind::Sweep || experiment == metric_group;
}

void write_outputs(const SimReport& report) {
  const ExperimentConfig& config = report.config;
  if (config.output_dir.empty()) return;
  const fs::path dir(config.output_dir);
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "sims.jsonl");
    if (!out) throw Error(ErrorCode::Io, "cannot write sims.jsonl in '" + config.output_dir + "'");
    for (const SimRecord& r : report.records) out << to_json_line(r) << '\n';
  }
  {
    std::ofstream out(dir / "report.csv");
    if (!out) throw Error(ErrorCode::Io, "cannot write report.csv in '" + config.output_dir + "'");
    write_report_csv(report.rows, out);
  }
  if (config.plots) write_report_plots(report.rows, config.output_dir);
  std::error_code ec;
  fs::remove(dir / "sims.partial.jsonl", ec);
}

// Previously finished records keyed by (p, sim), from a final or partial log.
std::map<std::pair<int, int>, SimRecord> load_finished(const ExperimentConfig& config) {
  std::map<std::pair<int, int>, SimRecord> done;
  if (!config.resume || config.output_dir.empty()) return done;
  for (const char* name : {"sims.jsonl", "sims.partial.jsonl"}) {
    std::ifstream in(fs::path(config.output_dir) / name);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      SimRecord r;
      try {
        r = from_json_line(line);
      } catch (const std::exception&) {
        continue;  // torn last line of an interrupted run
      }
      if (r.seed != sim_seed(config, r.p, r.sim)) continue;
      done.emplace(std::make_pair(r.p, r.sim), std::move(r));
    }
  }
  return done;
}

// Fits every arm of the relative-risk experiment on one design.
SimRecord risk_one(const ExperimentConfig& config, double kappa, int sim, std::optional<double> conv_sd) {
  const int p = config.p_for(kappa);
  SimRecord rec;
  rec.kappa = kappa;
  rec.p = p;
  rec.sim = sim;
  // The first pass draws from its own streams.
  rec.seed = conv_sd ? sim_seed(config, p, sim)
                     : derive_seed(config.master_seed ^ stream_tag("first-pass"),
                                   static_cast<std::uint64_t>(p), static_cast<std::uint64_t>(sim));
  try {
    Dataset ds;
    ds.X = gen_design(config.design, config.n, p, derive_seed(rec.seed, stream_tag("design")));
    const VectorXd eps = gen_errors(config.errors, config.n, derive_seed(rec.seed, stream_tag("errors")));
    std::vector<VectorXd> arms{eps};
    if (conv_sd) {
      const std::vector<double> ev(eps.data(), eps.data() + eps.size());
      const double sigma = std::sqrt(sample_variance(ev));
      const VectorXd z1 = gen_errors(ErrorLaw::StdNormal, config.n, derive_seed(rec.seed, stream_tag("conv")));
      const VectorXd z2 = gen_errors(ErrorLaw::StdNormal, config.n, derive_seed(rec.seed, stream_tag("norm")));
      VectorXd conv = eps + *conv_sd * z1;
      const std::vector<double> cv(conv.data(), conv.data() + conv.size());
      conv *= sigma / std::sqrt(sample_variance(cv));
      arms.push_back(conv);
      arms.push_back(sigma * z2);
    }
    for (const VectorXd& e : arms) {
      ds.y = e;
      const FitResult f = fit(ds, config.loss);
      if (!f.converged) throw Error(ErrorCode::NonConvergence, "fit did not converge");
      rec.arm_norms.push_back(f.beta_hat.norm());
    }
    rec.ok = true;
  } catch (const Error& e) {
    rec.ok = false;
    rec.error = e.what();
    rec.arm_norms.clear();
  }
  return rec;
}

}  // namespace

DesignSpec DesignSpec::parse(const std::string& text) {
  DesignSpec d;
  if (text == "gaussian") {
    d.kind = DesignKind::GaussianIID;
  } else if (text == "double_exp") {
    d.kind = DesignKind::DoubleExpIID;
  } else if (text == "elliptical:exp") {
    d.kind = DesignKind::Elliptical;
    d.lambda = LambdaLaw::ExpSqrt2;
  } else if (text == "elliptical:normal") {
    d.kind = DesignKind::Elliptical;
    d.lambda = LambdaLaw::StdNormal;
  } else if (text == "elliptical:unif") {
    d.kind = DesignKind::Elliptical;
    d.lambda = LambdaLaw::Unif;
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown design '" + text + "'");
  }
  return d;
}

std::string DesignSpec::name() const {
  switch (kind) {
    case DesignKind::GaussianIID:
      return "gaussian";
    case DesignKind::DoubleExpIID:
      return "double_exp";
    case DesignKind::Elliptical:
      switch (lambda) {
        case LambdaLaw::ExpSqrt2:
          return "elliptical:exp";
        case LambdaLaw::StdNormal:
          return "elliptical:normal";
        case LambdaLaw::Unif:
          return "elliptical:unif";
      }
  }
  return "unknown";
}

ErrorLaw parse_error_law(const std::string& text) {
  if (text == "normal") return ErrorLaw::StdNormal;
  if (text == "laplace") return ErrorLaw::StdLaplace;
  throw Error(ErrorCode::InvalidArgument, "unknown error law '" + text + "'");
}

std::string to_string(ErrorLaw law) { return law == ErrorLaw::StdNormal ? "normal" : "laplace"; }

double error_variance(ErrorLaw law) { return law == ErrorLaw::StdNormal ? 1.0 : 2.0; }

MatrixXd gen_design(const DesignSpec& design, Index n, Index p, std::uint64_t seed) {
  if (n < 1 || p < 1) throw Error(ErrorCode::InvalidArgument, "design dimensions must be positive");
  MatrixXd X(n, p);
  const double lap_scale = 1.0 / std::sqrt(2.0);
  for (Index i = 0; i < n; ++i) {
    CounterRng rng(seed, stream_tag("design-row"), static_cast<std::uint64_t>(i));
    double lambda = 1.0;
    if (design.kind == DesignKind::Elliptical) lambda = lambda_draw(design.lambda, rng);
    for (Index j = 0; j < p; ++j) {
      X(i, j) = design.kind == DesignKind::DoubleExpIID ? rng.laplace(lap_scale) : lambda * rng.normal();
    }
  }
  return X;
}

VectorXd gen_errors(ErrorLaw law, Index n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "need at least one error");
  CounterRng rng(seed, stream_tag("errors"), 0);
  const auto draw = error_sampler(law);
  VectorXd e(n);
  for (Index i = 0; i < n; ++i) e[i] = draw(rng);
  return e;
}

std::function<double(CounterRng&)> error_sampler(ErrorLaw law) {
  if (law == ErrorLaw::StdNormal) return [](CounterRng& rng) { return rng.normal(); };
  return [](CounterRng& rng) { return rng.laplace(1.0); };
}

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::Coverage:
      return "coverage";
    case ExperimentKind::VarianceRatio:
      return "variance_ratio";
    case ExperimentKind::CiWidth:
      return "ci_width";
    case ExperimentKind::Sweep:
      return "sweep";
    case ExperimentKind::RelativeRisk:
      return "relative_risk";
  }
  return "unknown";
}

ExperimentKind parse_experiment(const std::string& text) {
  for (ExperimentKind k : {ExperimentKind::Coverage, ExperimentKind::VarianceRatio, ExperimentKind::CiWidth,
                           ExperimentKind::Sweep, ExperimentKind::RelativeRisk}) {
    if (to_string(k) == text) return k;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown experiment '" + text + "'");
}

std::string SchemeSpec::label() const {
  if (calibrated) return "weighted[calibrated]";
  return plan.label();
}

ExperimentConfig ExperimentConfig::from_yaml(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("config: ") + e.what());
  }
  if (!root.IsMap()) throw bad_config("top level must be a map");
  check_keys(root,
             {"schema", "experiment", "n", "kappa_grid", "design", "errors", "loss", "schemes", "n_sims",
              "B", "level", "master_seed", "threads", "output_dir", "dump_datasets", "plots", "resume",
              "first_pass_sims"},
             "config");
  if (!root["schema"]) throw bad_config("missing 'schema'");
  ExperimentConfig c;
  c.schema = get<int>(root, "schema");
  if (c.schema != 1) throw bad_config("unsupported schema " + std::to_string(c.schema));
  if (root["experiment"]) c.experiment = parse_experiment(get<std::string>(root, "experiment"));
  if (root["n"]) c.n = get<int>(root, "n");
  if (root["kappa_grid"]) c.kappa_grid = get<std::vector<double>>(root, "kappa_grid");
  if (root["design"]) c.design = DesignSpec::parse(get<std::string>(root, "design"));
  if (root["errors"]) c.errors = parse_error_law(get<std::string>(root, "errors"));
  if (root["loss"]) c.loss = Loss::parse(get<std::string>(root, "loss"));
  if (root["schemes"]) {
    if (!root["schemes"].IsSequence()) throw bad_config("'schemes' must be a list");
    for (const auto& node : root["schemes"]) c.schemes.push_back(parse_scheme_node(node));
  }
  if (root["n_sims"]) c.n_sims = get<int>(root, "n_sims");
  if (root["B"]) c.B = get<int>(root, "B");
  if (root["level"]) c.level = get<double>(root, "level");
  if (root["master_seed"]) c.master_seed = get<std::uint64_t>(root, "master_seed");
  if (root["threads"]) c.threads = get<int>(root, "threads");
  if (root["output_dir"]) c.output_dir = get<std::string>(root, "output_dir");
  if (root["dump_datasets"]) c.dump_datasets = get<bool>(root, "dump_datasets");
  if (root["plots"]) c.plots = get<bool>(root, "plots");
  if (root["resume"]) c.resume = get<bool>(root, "resume");
  if (root["first_pass_sims"]) c.first_pass_sims = get<int>(root, "first_pass_sims");
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_yaml(ss.str());
}

int ExperimentConfig::p_for(double kappa) const {
  return static_cast<int>(std::lround(static_cast<double>(n) * kappa));
}

void ExperimentConfig::validate() const {
  if (kappa_grid.empty()) throw bad_config("empty kappa_grid");
  for (double k : kappa_grid) {
    if (!(k > 0.0 && k < 1.0)) throw bad_config("kappa values must lie in (0, 1)");
    const int p = p_for(k);
    if (p < 1 || p >= n) throw bad_config("n * kappa must round to an integer p with 1 <= p < n");
  }
  if (n_sims < 1) throw bad_config("n_sims must be positive");
  if (B < 2) throw bad_config("B must be at least 2");
  if (!(level > 0.0 && level < 1.0)) throw bad_config("level must lie in (0, 1)");
  if (threads < 1) throw bad_config("threads must be positive");
  if (experiment == ExperimentKind::RelativeRisk) {
    if (first_pass_sims < 2) throw bad_config("first_pass_sims must be at least 2");
    return;
  }
  if (schemes.empty()) throw bad_config("no schemes");
  std::set<std::string> labels;
  for (const SchemeSpec& s : schemes) {
    if (s.calibrated && s.plan.scheme != Scheme::WeightedIID) {
      throw bad_config("'calibrated' weights need the weighted scheme");
    }
    if (!labels.insert(s.label()).second) throw bad_config("scheme '" + s.label() + "' listed twice");
  }
}

const ReportRow& SimReport::row(double kappa, const std::string& scheme, const std::string& metric) const {
  for (const ReportRow& r : rows) {
    if (std::abs(r.kappa - kappa) < 1e-12 && r.scheme == scheme && r.metric == metric) return r;
  }
  throw Error(ErrorCode::InvalidArgument, "no report row for " + scheme + " / " + metric);
}

Dataset simulated_dataset(const ExperimentConfig& config, double kappa, int sim) {
  const int p = config.p_for(kappa);
  const std::uint64_t seed = sim_seed(config, p, sim);
  Dataset ds;
  ds.X = gen_design(config.design, config.n, p, derive_seed(seed, stream_tag("design")));
  ds.y = gen_errors(config.errors, config.n, derive_seed(seed, stream_tag("errors")));
  ds.true_beta = VectorXd::Zero(p);
  ds.noise_sd = std::sqrt(error_variance(config.errors));
  return ds;
}

SimRecord simulate_one(const ExperimentConfig& config, double kappa, int sim) {
  SimRecord rec;
  rec.kappa = kappa;
  rec.p = config.p_for(kappa);
  rec.sim = sim;
  rec.seed = sim_seed(config, rec.p, sim);
  Dataset ds;
  try {
    ds = simulated_dataset(config, kappa, sim);
    const FitResult f = fit(ds, config.loss);
    rec.point = f.beta_hat[0];
    rec.beta_sq_mean = f.beta_hat.squaredNorm() / static_cast<double>(rec.p);
    rec.beta_norm = f.beta_hat.norm();
    const LeastSquaresFactor lsf(ds.X);
    const double v11 = lsf.gram_inverse_times(VectorXd::Unit(rec.p, 0))[0];
    rec.normal_width = 2.0 * normal_quantile(0.5 + config.level / 2.0) * std::sqrt(sigma_hat_ls(ds) * v11);
    const bool any_jack = std::any_of(config.schemes.begin(), config.schemes.end(),
                                      [](const SchemeSpec& s) { return s.plan.scheme == Scheme::Jackknife; });
    if (any_jack) {
      try {
        rec.gamma_hat = gamma_hat(ds.X, f.residuals, config.loss);
      } catch (const Error&) {
        rec.gamma_hat.reset();
      }
    }
    if (config.dump_datasets) rec.beta_hat.assign(f.beta_hat.data(), f.beta_hat.data() + f.beta_hat.size());
    rec.ok = true;
  } catch (const Error& e) {
    rec.error = e.what();
    return rec;
  }

  for (const SchemeSpec& spec : config.schemes) {
    SchemeRecord sr;
    sr.scheme = spec.label();
    try {
      ResamplingPlan plan = spec.plan;
      plan.B = config.B;
      plan.ci_level = config.level;
      if (spec.calibrated) plan.weights = WeightLaw::poisson_mixture(calibrate_alpha(kappa));
      const std::uint64_t seed = derive_seed(rec.seed, stream_tag(sr.scheme));
      Interval ci;
      if (plan.scheme == Scheme::Jackknife) {
        const JackknifeOutcome j =
            jackknife(ds, config.loss, plan.contrast(ds.p()), rec.gamma_hat, plan.correction, config.level);
        ci = j.ci;
        sr.boot_var = j.var_jack;
      } else {
        const BootstrapOutcome o = run_bootstrap(ds, config.loss, plan, seed);
        ci = {o.ci_lo, o.ci_hi};
        sr.boot_var = o.boot_variance;
        sr.redraws = o.redraws;
        sr.failed_replicates = o.failed_replicates;
        sr.fallback = o.fallback;
      }
      sr.ci_lo = ci.lo;
      sr.ci_hi = ci.hi;
      sr.covered = ci.contains(0.0);
      sr.ok = true;
    } catch (const Error& e) {
      sr.ok = false;
      sr.error = e.what();
    }
    rec.schemes.push_back(std::move(sr));
  }
  return rec;
}

std::vector<ReportRow> summarize(const ExperimentConfig& config, const std::vector<SimRecord>& records) {
  std::vector<ReportRow> rows;
  const std::string loss = config.loss.name();
  for (double kappa : config.kappa_grid) {
    const int p = config.p_for(kappa);
    std::vector<const SimRecord*> cell;
    for (const SimRecord& r : records) {
      if (r.p == p) cell.push_back(&r);
    }
    auto add = [&](const std::string& scheme, const std::string& metric, double value, double se, int m) {
      rows.push_back({kappa, scheme, loss, metric, value, se, m});
    };

    if (config.experiment == ExperimentKind::RelativeRisk) {
      std::vector<double> first;
      std::vector<std::vector<double>> arms(3);
      for (const SimRecord* r : cell) {
        if (!r->ok) continue;
        if (r->arm_norms.size() == 1) first.push_back(r->arm_norms[0]);
        if (r->arm_norms.size() == 3) {
          for (int a = 0; a < 3; ++a) arms[a].push_back(r->arm_norms[a]);
        }
      }
      const int m0 = static_cast<int>(first.size());
      if (m0 > 0) add("G", "first_pass_risk", mean(first), sd_of_mean(first), m0);
      const int m = static_cast<int>(arms[0].size());
      if (m == 0) continue;
      const char* names[] = {"G", "G_conv", "G_norm"};
      for (int a = 0; a < 3; ++a) add(names[a], "risk", mean(arms[a]), sd_of_mean(arms[a]), m);
      for (int a = 1; a < 3; ++a) {
        add(names[a], "risk_ratio", mean(arms[a]) / mean(arms[0]), ratio_se(arms[a], arms[0]), m);
      }
      continue;
    }

    std::vector<double> beta_sq;
    for (const SimRecord* r : cell) {
      if (r->ok) beta_sq.push_back(r->beta_sq_mean);
    }
    const double emp_var = beta_sq.empty() ? 0.0 : mean(beta_sq);
    const double emp_var_se = sd_of_mean(beta_sq);

    for (std::size_t s = 0; s < config.schemes.size(); ++s) {
      const SchemeSpec& spec = config.schemes[s];
      const std::string label = spec.label();
      std::vector<double> covered, ratios, widths, normal_widths, gammas, redraws;
      int failures = 0, fallbacks = 0;
      for (const SimRecord* r : cell) {
        if (!r->ok || s >= r->schemes.size() || !r->schemes[s].ok) {
          ++failures;
          continue;
        }
        const SchemeRecord& sr = r->schemes[s];
        covered.push_back(sr.covered ? 1.0 : 0.0);
        ratios.push_back(emp_var > 0.0 ? sr.boot_var / emp_var : 0.0);
        widths.push_back(sr.ci_hi - sr.ci_lo);
        normal_widths.push_back(r->normal_width);
        redraws.push_back(sr.redraws);
        if (sr.fallback) ++fallbacks;
        if (r->gamma_hat) gammas.push_back(*r->gamma_hat);
      }
      const int m = static_cast<int>(covered.size());
      const int total = static_cast<int>(cell.size());
      if (m > 0 && wants(config.experiment, ExperimentKind::Coverage)) {
        const double miss = 1.0 - mean(covered);
        add(label, "miscoverage", miss, proportion_se(miss, m), m);
      }
      if (m > 0 && wants(config.experiment, ExperimentKind::VarianceRatio)) {
        add(label, "empirical_var", emp_var, emp_var_se, static_cast<int>(beta_sq.size()));
        add(label, "var_ratio_mean", mean(ratios), sd_of_mean(ratios), m);
        add(label, "var_ratio_median", median(ratios), quantile_se(ratios, 0.5), m);
        add(label, "var_ratio_q1", quantile(ratios, 0.25), quantile_se(ratios, 0.25), m);
        add(label, "var_ratio_q3", quantile(ratios, 0.75), quantile_se(ratios, 0.75), m);
        if (spec.plan.scheme == Scheme::Jackknife && !gammas.empty()) {
          add(label, "gamma_hat_mean", mean(gammas), sd_of_mean(gammas), static_cast<int>(gammas.size()));
        }
      }
      if (m > 0 && wants(config.experiment, ExperimentKind::CiWidth)) {
        add(label, "width_mean", mean(widths), sd_of_mean(widths), m);
        add(label, "normal_width_mean", mean(normal_widths), sd_of_mean(normal_widths), m);
        add(label, "width_ratio", mean(widths) / mean(normal_widths), ratio_se(widths, normal_widths), m);
      }
      if (m > 0) add(label, "redraws_mean", mean(redraws), sd_of_mean(redraws), m);
      if (spec.plan.scheme == Scheme::DeconvolutionResidual) add(label, "fallbacks", fallbacks, 0.0, total);
      add(label, "failures", failures, 0.0, total);
    }
  }
  return rows;
}

SimReport run_sweep(const ExperimentConfig& config, const ProgressFn& progress) {
  config.validate();
  if (config.experiment == ExperimentKind::RelativeRisk) return run_relative_risk(config, progress);
  SimReport report;
  report.config = config;

  // One task per distinct (p, sim); kappas that round to the same p share data.
  std::vector<std::pair<double, int>> tasks;
  std::set<int> seen_p;
  for (double kappa : config.kappa_grid) {
    if (!seen_p.insert(config.p_for(kappa)).second) continue;
    for (int s = 0; s < config.n_sims; ++s) tasks.emplace_back(kappa, s);
  }
  auto finished = load_finished(config);
  std::vector<SimRecord> records(tasks.size());
  std::vector<std::size_t> todo;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto key = std::make_pair(config.p_for(tasks[t].first), tasks[t].second);
    auto it = finished.find(key);
    if (it != finished.end()) {
      records[t] = it->second;
      records[t].kappa = tasks[t].first;
    } else {
      todo.push_back(t);
    }
  }

  std::ofstream partial;
  fs::path data_dir;
  if (!config.output_dir.empty()) {
    fs::create_directories(config.output_dir);
    partial.open(fs::path(config.output_dir) / "sims.partial.jsonl", std::ios::app);
    if (config.dump_datasets) {
      data_dir = fs::path(config.output_dir) / "datasets";
      fs::create_directories(data_dir);
    }
  }
  std::mutex mu;
  std::size_t done = tasks.size() - todo.size();
  parallel_for(todo.size(), config.threads, [&](std::size_t k) {
    const std::size_t t = todo[k];
    const auto [kappa, sim] = tasks[t];
    SimRecord rec = simulate_one(config, kappa, sim);
    if (!data_dir.empty()) {
      const std::string name = "p" + std::to_string(rec.p) + "_sim" + std::to_string(sim) + ".csv";
      write_dataset_csv(simulated_dataset(config, kappa, sim), (data_dir / name).string());
    }
    std::lock_guard lock(mu);
    if (partial.is_open()) partial << to_json_line(rec) << '\n' << std::flush;
    records[t] = std::move(rec);
    ++done;
    if (progress) progress(done, tasks.size());
  });
  if (partial.is_open()) partial.close();

  // Kappas sharing a p reuse the same records.
  for (double kappa : config.kappa_grid) {
    const int p = config.p_for(kappa);
    if (std::any_of(tasks.begin(), tasks.end(), [&](const auto& t) { return t.first == kappa; })) continue;
    for (const SimRecord& r : std::vector<SimRecord>(records)) {
      if (r.p == p) {
        SimRecord copy = r;
        copy.kappa = kappa;
        records.push_back(copy);
      }
    }
  }
  std::sort(records.begin(), records.end(), [](const SimRecord& a, const SimRecord& b) {
    return std::tie(a.kappa, a.sim) < std::tie(b.kappa, b.sim);
  });
  report.records = std::move(records);
  report.rows = summarize(config, report.records);
  write_outputs(report);
  return report;
}

SimReport run_coverage(ExperimentConfig config, const ProgressFn& progress) {
  config.experiment = ExperimentKind::Coverage;
  return run_sweep(config, progress);
}

SimReport run_variance_ratio(ExperimentConfig config, const ProgressFn& progress) {
  config.experiment = ExperimentKind::VarianceRatio;
  return run_sweep(config, progress);
}

SimReport run_ci_width(ExperimentConfig config, const ProgressFn& progress) {
  config.experiment = ExperimentKind::CiWidth;
  return run_sweep(config, progress);
}

SimReport run_relative_risk(ExperimentConfig config, const ProgressFn& progress) {
  config.experiment = ExperimentKind::RelativeRisk;
  config.validate();
  SimReport report;
  report.config = config;
  const std::size_t K = config.kappa_grid.size();
  const auto first_n = static_cast<std::size_t>(config.first_pass_sims);
  const auto main_n = static_cast<std::size_t>(config.n_sims);
  const std::size_t total = K * (first_n + main_n);
  std::mutex mu;
  std::size_t done = 0;
  auto tick = [&] {
    std::lock_guard lock(mu);
    ++done;
    if (progress) progress(done, total);
  };

  // First pass: errors from G, to estimate E||beta_hat - beta||.
  std::vector<SimRecord> first(K * first_n);
  parallel_for(first.size(), config.threads, [&](std::size_t t) {
    first[t] = risk_one(config, config.kappa_grid[t / first_n], static_cast<int>(t % first_n), std::nullopt);
    tick();
  });
  std::vector<double> conv_sd(K);
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> norms;
    for (std::size_t s = 0; s < first_n; ++s) {
      const SimRecord& r = first[k * first_n + s];
      if (r.ok) norms.push_back(r.arm_norms[0]);
    }
    if (norms.empty()) {
      throw Error(ErrorCode::ExcessiveFailures, "every first-pass simulation failed");
    }
    conv_sd[k] = mean(norms);
  }

  std::vector<SimRecord> main(K * main_n);
  parallel_for(main.size(), config.threads, [&](std::size_t t) {
    const std::size_t k = t / main_n;
    main[t] = risk_one(config, config.kappa_grid[k], static_cast<int>(t % main_n), conv_sd[k]);
    tick();
  });

  report.records = std::move(first);
  report.records.insert(report.records.end(), main.begin(), main.end());
  report.rows = summarize(config, report.records);
  write_outputs(report);
  return report;
}

SimReport run_experiment(const ExperimentConfig& config, const ProgressFn& progress) {
  if (config.experiment == ExperimentKind::RelativeRisk) return run_relative_risk(config, progress);
  return run_sweep(config, progress);
}

std::string to_json_line(const SimRecord& r) {
  json j;
  j["kappa"] = r.kappa;
  j["p"] = r.p;
  j["sim"] = r.sim;
  j["seed"] = r.seed;
  j["ok"] = r.ok;
  if (!r.error.empty()) j["error"] = r.error;
  if (!r.arm_norms.empty() || r.schemes.empty()) {
    j["arm_norms"] = r.arm_norms;
    if (r.schemes.empty()) return j.dump();
  }
  j["point"] = r.point;
  j["beta_sq_mean"] = r.beta_sq_mean;
  j["beta_norm"] = r.beta_norm;
  j["normal_width"] = r.normal_width;
  if (r.gamma_hat) j["gamma_hat"] = *r.gamma_hat;
  if (!r.beta_hat.empty()) j["beta_hat"] = r.beta_hat;
  json schemes = json::array();
  for (const SchemeRecord& s : r.schemes) {
    json js;
    js["scheme"] = s.scheme;
    js["ok"] = s.ok;
    if (!s.error.empty()) js["error"] = s.error;
    js["ci_lo"] = s.ci_lo;
    js["ci_hi"] = s.ci_hi;
    js["covered"] = s.covered;
    js["boot_var"] = s.boot_var;
    js["redraws"] = s.redraws;
    js["failed_replicates"] = s.failed_replicates;
    js["fallback"] = s.fallback;
    schemes.push_back(js);
  }
  j["schemes"] = schemes;
  return j.dump();
}

SimRecord from_json_line(const std::string& line) {
  SimRecord r;
  try {
    const json j = json::parse(line);
    r.kappa = j.at("kappa").get<double>();
    r.p = j.at("p").get<int>();
    r.sim = j.at("sim").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.ok = j.at("ok").get<bool>();
    r.error = j.value("error", std::string());
    if (j.contains("arm_norms")) r.arm_norms = j["arm_norms"].get<std::vector<double>>();
    r.point = j.value("point", 0.0);
    r.beta_sq_mean = j.value("beta_sq_mean", 0.0);
    r.beta_norm = j.value("beta_norm", 0.0);
    r.normal_width = j.value("normal_width", 0.0);
    if (j.contains("gamma_hat")) r.gamma_hat = j["gamma_hat"].get<double>();
    if (j.contains("beta_hat")) r.beta_hat = j["beta_hat"].get<std::vector<double>>();
    if (j.contains("schemes")) {
      for (const json& js : j["schemes"]) {
        SchemeRecord s;
        s.scheme = js.at("scheme").get<std::string>();
        s.ok = js.at("ok").get<bool>();
        s.error = js.value("error", std::string());
        s.ci_lo = js.at("ci_lo").get<double>();
        s.ci_hi = js.at("ci_hi").get<double>();
        s.covered = js.at("covered").get<bool>();
        s.boot_var = js.at("boot_var").get<double>();
        s.redraws = js.at("redraws").get<int>();
        s.failed_replicates = js.at("failed_replicates").get<int>();
        s.fallback = js.at("fallback").get<bool>();
        r.schemes.push_back(s);
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, std::string("bad simulation record: ") + e.what());
  }
  return r;
}

}  // namespace hdboot
