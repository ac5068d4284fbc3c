// fivelab: train, evaluate, diagnose and run oracle suites.
//
// Exit codes: 0 success, 1 config, 2 data, 3 numerical, 4 oracle failure.
// Failures print one line `error=<kind> reason="<message>"` on stderr.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fivelab/fivelab.hpp"

#ifndef FIVELAB_VERSION
#define FIVELAB_VERSION "0.0.0-unknown"
#endif

namespace fs = std::filesystem;
using namespace fivelab;

namespace {

enum Exit { kOk = 0, kConfig = 1, kData = 2, kNumerical = 3, kOracle = 4 };

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

int fail(Exit code, const std::string& reason) {
  static const char* kinds[] = {"none", "config", "data", "numerical", "oracle"};
  std::cerr << "error=" << kinds[code] << " reason=" << quote(reason) << "\n";
  return code;
}

struct Manifest {
  std::string command;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> fields;
};

// Claims `dir` for this run and writes the manifest before any computation.
void write_manifest(const std::string& dir, const Manifest& m) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir + ": " + ec.message());
  const fs::path path = fs::path(dir) / "manifest.txt";
  if (fs::exists(path)) throw ConfigError("output directory " + dir + " already holds a run manifest");
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "command=" << m.command << "\n"
     << "seed=" << m.seed << "\n"
     << "version=" << FIVELAB_VERSION << "\n"
     << "out=" << dir << "\n";
  for (const auto& [k, v] : m.fields) os << k << "=" << v << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
  if (!os) throw DataError("failed writing " + path.string());
}

// Maps library exceptions onto the exit-code contract.
template <class F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    return fail(kConfig, e.what());
  } catch (const DomainError& e) {
    return fail(kConfig, e.what());
  } catch (const DataError& e) {
    return fail(kData, e.what());
  } catch (const ParseError& e) {
    return fail(kData, e.what());
  } catch (const ShapeError& e) {
    return fail(kData, e.what());
  } catch (const NumericalError& e) {
    return fail(kNumerical, e.what());
  } catch (const std::exception& e) {
    return fail(kNumerical, e.what());
  }
}

// ---- train ----

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool serial = false;
};

int cmd_train(const TrainArgs& a) {
  return guarded([&] {
    ModelConfig cfg = load_config(a.config);
    if (a.seed) cfg.seed = *a.seed;
    if (a.serial) cfg.serial = true;
    Manifest m{"train", cfg.seed, {}};
    std::istringstream snapshot(to_config_text(cfg));
    for (std::string line; std::getline(snapshot, line);) {
      const auto eq = line.find('=');
      m.fields.emplace_back("config." + line.substr(0, eq), line.substr(eq + 1));
    }
    write_manifest(a.out, m);

    const Dataset ds = load_dataset(cfg);
    const TrainResult r = train_model(cfg, ds);
    save_checkpoint((fs::path(a.out) / "model.ckpt").string(), r.best_model);
    std::ostringstream csv;
    write_metrics_csv(csv, r.metrics);
    write_text(fs::path(a.out) / "metrics.csv", csv.str());
    std::cout << "best_epoch=" << r.best_epoch << " best_val_loss=" << fmtg(r.best_value, 10) << "\n";
    return kOk;
  });
}

// ---- eval ----

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  int k = 100;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  return guarded([&] {
    if (a.k < 1) throw ConfigError("--k must be >= 1");
    write_manifest(a.out, {"eval", a.seed, {{"checkpoint", a.checkpoint}, {"dataset", a.dataset}, {"k", std::to_string(a.k)}}});
    const Model model = load_checkpoint(a.checkpoint);
    const Dataset ds = dataset_from_spec(a.dataset, a.seed);
    if (ds.size() == 0) throw DataError("dataset is empty");
    if (ds.dim() != model.data_dim())
      throw DataError("checkpoint expects n=" + std::to_string(model.data_dim()) + " but dataset has n=" +
                      std::to_string(ds.dim()));
    const DatasetLikelihood ll = dataset_mean_ll(model, ds.x, a.k, a.seed);
    std::ostringstream csv;
    write_likelihood_csv(csv, ll);
    write_text(fs::path(a.out) / "likelihood.csv", csv.str());
    char line[128];
    std::snprintf(line, sizeof line, "mean_log_px=%.17g n=%lld k=%d\n", ll.mean_log_px,
                  static_cast<long long>(ds.size()), a.k);
    write_text(fs::path(a.out) / "summary.txt", line);
    std::cout << line;
    return kOk;
  });
}

// ---- diagnose ----

struct DiagnoseArgs {
  std::string checkpoint;
  std::string grid;
  std::string points;
  std::vector<std::string> point;
  std::string mode = "pullback";
  std::string out;
};

// min:max:count per dimension, comma-separated; cartesian product, first dimension slowest.
std::vector<Vector> parse_grid(const std::string& spec, Eigen::Index d) {
  std::vector<std::vector<double>> axes;
  std::stringstream ss(spec);
  for (std::string tok; std::getline(ss, tok, ',');) {
    std::stringstream ts(tok);
    std::string lo, hi, cnt;
    if (!std::getline(ts, lo, ':') || !std::getline(ts, hi, ':') || !std::getline(ts, cnt))
      throw ConfigError("grid axis '" + tok + "' is not min:max:count");
    double a = 0, b = 0;
    int c = 0;
    try {
      a = std::stod(lo);
      b = std::stod(hi);
      c = std::stoi(cnt);
    } catch (const std::exception&) {
      throw ConfigError("grid axis '" + tok + "' has a malformed number");
    }
    if (c < 1) throw ConfigError("grid axis '" + tok + "' needs count >= 1");
    std::vector<double> axis;
    for (int k = 0; k < c; ++k) axis.push_back(c == 1 ? a : a + (b - a) * k / (c - 1));
    axes.push_back(axis);
  }
  if (static_cast<Eigen::Index>(axes.size()) != d)
    throw ConfigError("grid has " + std::to_string(axes.size()) + " axes but the latent dimension is " +
                      std::to_string(d));
  std::vector<Vector> pts{Vector(0)};
  for (const auto& axis : axes) {
    std::vector<Vector> next;
    for (const auto& p : pts)
      for (double v : axis) {
        Vector q(p.size() + 1);
        q << p, v;
        next.push_back(q);
      }
    pts = std::move(next);
  }
  return pts;
}

Vector parse_point(const std::string& s) {
  std::vector<double> vals;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      vals.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ConfigError("point '" + s + "' has a malformed number");
    }
  }
  return Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

std::vector<Vector> diagnose_points(const DiagnoseArgs& a, Eigen::Index dim) {
  std::vector<Vector> pts;
  if (!a.grid.empty()) pts = parse_grid(a.grid, dim);
  if (!a.points.empty()) {
    const Dataset ds = load_csv_dataset(a.points);
    for (Eigen::Index i = 0; i < ds.size(); ++i) pts.push_back(ds.x.col(i));
  }
  for (const auto& p : a.point) pts.push_back(parse_point(p));
  if (pts.empty()) throw ConfigError("diagnose needs --grid, --points or --point");
  for (const auto& p : pts)
    if (p.size() != dim)
      throw DataError("point of dimension " + std::to_string(p.size()) + " where " + std::to_string(dim) +
                      " is expected");
  return pts;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string pullback_csv(const Model& model, const std::vector<Vector>& pts) {
  const Eigen::Index d = model.latent_dim;
  NetMap dec{&model.decoder};
  std::ostringstream os;
  for (Eigen::Index k = 0; k < d; ++k) os << "z" << k + 1 << ",";
  os << "offdiag_ratio";
  for (Eigen::Index k = 0; k < d; ++k) os << ",lambda_" << k + 1;
  os << "\n";
  for (const auto& z : pts) {
    const PullbackMetric g = pullback_metric(dec, z);
    const Vector ev = sym_eigen(g.metric).values.reverse();
    double ratio = std::numeric_limits<double>::quiet_NaN();
    try {
      ratio = offdiag_ratio(g.metric);
    } catch (const DomainError&) {
    }
    for (Eigen::Index k = 0; k < d; ++k) os << num(z(k)) << ",";
    os << num(ratio);
    for (Eigen::Index k = 0; k < d; ++k) os << "," << num(ev(k));
    os << "\n";
  }
  return os.str();
}

std::string involutivity_csv(const Model& model, const std::vector<Vector>& pts) {
  const Eigen::Index d = model.latent_dim;
  NetMap dec{&model.decoder};
  const auto field = decoder_eigenframe_field(dec);
  std::ostringstream os;
  for (Eigen::Index k = 0; k < d; ++k) os << "z" << k + 1 << ",";
  os << "i,j,residual,status\n";
  for (const auto& z : pts) {
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = i + 1; j < d; ++j) {
        std::string status = "ok";
        double res = std::numeric_limits<double>::quiet_NaN();
        try {
          res = involutivity_residual(field, z, i, j);
        } catch (const DegenerateSpectrumError&) {
          status = "degenerate_spectrum";
        }
        for (Eigen::Index k = 0; k < d; ++k) os << num(z(k)) << ",";
        os << i + 1 << "," << j + 1 << "," << num(res) << "," << status << "\n";
      }
    }
  }
  return os.str();
}

std::string posterior_csv(const Model& model, const std::vector<Vector>& pts) {
  const Eigen::Index d = model.latent_dim;
  std::ostringstream os;
  os << "point,source";
  for (Eigen::Index k = 0; k < d; ++k) os << ",mean_" << k + 1;
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index c = 0; c < d; ++c) os << ",cov_" << r + 1 << "_" << c + 1;
  os << ",status\n";
  auto emit = [&](std::size_t idx, const char* source, const Vector& mean, const Matrix& cov, const std::string& st) {
    os << idx << "," << source;
    for (Eigen::Index k = 0; k < d; ++k) os << "," << num(mean(k));
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index c = 0; c < d; ++c) os << "," << num(cov(r, c));
    os << "," << st << "\n";
  };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    try {
      const GaussianPosterior q = posterior_of(model, pts[i]);
      emit(i, "q", q.mean(), q.covariance(), "ok");
    } catch (const NumericalError&) {
      emit(i, "q", Vector::Constant(d, nan), Matrix::Constant(d, d, nan), "singular");
    }
    const LaplacePosterior p = laplace_posterior(model, pts[i]);
    emit(i, "laplace", p.mode, p.covariance, "ok");
  }
  return os.str();
}

int cmd_diagnose(const DiagnoseArgs& a) {
  return guarded([&] {
    if (a.mode != "pullback" && a.mode != "involutivity" && a.mode != "posterior")
      throw ConfigError("unknown mode '" + a.mode + "'");
    write_manifest(a.out, {"diagnose", 0, {{"checkpoint", a.checkpoint}, {"mode", a.mode}, {"grid", a.grid},
                                           {"points", a.points}}});
    const Model model = load_checkpoint(a.checkpoint);
    if (a.mode == "involutivity" && model.latent_dim < 3) {
      std::cout << "note: d=" << model.latent_dim << " eigen-line fields are trivially involutive\n";
      return kOk;
    }
    const Eigen::Index dim = a.mode == "posterior" ? model.data_dim() : model.latent_dim;
    const auto pts = diagnose_points(a, dim);
    std::string csv;
    if (a.mode == "pullback") csv = pullback_csv(model, pts);
    if (a.mode == "involutivity") csv = involutivity_csv(model, pts);
    if (a.mode == "posterior") csv = posterior_csv(model, pts);
    write_text(fs::path(a.out) / ("diagnose_" + a.mode + ".csv"), csv);
    return kOk;
  });
}

// ---- oracle ----

int cmd_oracle(const std::string& which, std::uint64_t seed, const std::string& out) {
  return guarded([&] {
    if (!out.empty()) write_manifest(out, {"oracle", seed, {{"which", which}}});
    const auto results = run_oracle(which, seed);
    print_checks(std::cout, results);
    if (!out.empty()) {
      std::ostringstream os;
      print_checks(os, results);
      write_text(fs::path(out) / "oracle.txt", os.str());
    }
    return all_pass(results) ? kOk : kOracle;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fivelab: FIVE, FIF and VAE baselines"};
  app.set_version_flag("--version", FIVELAB_VERSION);
  app.require_subcommand(1);

  TrainArgs ta;
  std::uint64_t train_seed = 0;
  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", ta.config, "key=value config file")->required();
  auto* seed_opt = train->add_option("--seed", train_seed, "overrides the config seed");
  train->add_option("--out", ta.out, "output directory")->required();
  train->add_flag("--serial", ta.serial, "serial mode (reproducible metrics file)");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "importance-sampled log-likelihood");
  eval->add_option("--checkpoint", ea.checkpoint)->required();
  eval->add_option("--dataset", ea.dataset, "paraboloid:N[:noise] | linear_gauss:N:d1,.. | mnist:PATH | csv:PATH")
      ->required();
  eval->add_option("--k", ea.k, "samples per datum")->capture_default_str();
  eval->add_option("--seed", ea.seed)->capture_default_str();
  eval->add_option("--out", ea.out)->required();

  DiagnoseArgs da;
  auto* diag = app.add_subcommand("diagnose", "pullback metric, involutivity and posterior diagnostics");
  diag->add_option("--checkpoint", da.checkpoint)->required();
  diag->add_option("--grid", da.grid, "min:max:count per latent dimension, comma-separated");
  diag->add_option("--points", da.points, "CSV file, one point per row");
  diag->add_option("--point", da.point, "comma-separated coordinates (repeatable)");
  diag->add_option("--mode", da.mode)->check(CLI::IsMember({"pullback", "involutivity", "posterior"}))
      ->capture_default_str();
  diag->add_option("--out", da.out)->required();

  std::string which;
  std::uint64_t oracle_seed = 0;
  std::string oracle_out;
  auto* oracle = app.add_subcommand("oracle", "run an oracle suite");
  oracle->add_option("--which", which)
      ->required()
      ->check(CLI::IsMember({"lemma1", "theorem3", "hutchinson", "gradcheck", "importance", "fcvae", "involutivity"}));
  oracle->add_option("--seed", oracle_seed)->capture_default_str();
  oracle->add_option("--out", oracle_out, "optional output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kConfig, e.what());
  }

  if (*train) {
    if (*seed_opt) ta.seed = train_seed;
    return cmd_train(ta);
  }
  if (*eval) return cmd_eval(ea);
  if (*diag) return cmd_diagnose(da);
  return cmd_oracle(which, oracle_seed, oracle_out);
}
