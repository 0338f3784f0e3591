#include "bivas/cli.hpp"

#include "bivas/grid.hpp"
#include "bivas/io.hpp"
#include "bivas/metrics.hpp"
#include "bivas/simulate.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

namespace bivas::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kGroupRowMarker = "#group";

json to_json(const arma::vec& v) { return json(std::vector<double>(v.begin(), v.end())); }
json to_json(const arma::rowvec& v) { return json(std::vector<double>(v.begin(), v.end())); }

arma::vec vec_from(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return arma::vec(values);
}

const json& field(const json& j, const char* key) {
  if (!j.contains(key)) {
    throw Error(ErrorCode::InvalidArgument, std::string("model/truth file lacks field '") + key + "'");
  }
  return j.at(key);
}

json read_json(const std::string& path) {
  const std::string text = io::read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, "cannot parse JSON '" + path + "': " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { io::write_file(path.string(), j.dump(2) + "\n"); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create directory '" + dir.string() + "': " + ec.message());
}

int resolve_threads(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("BIVAS_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Options shared by fit and multifit.
struct FitFlags {
  std::string response = "y";
  std::string covariates;
  bool no_intercept = false;
  int grid_size = 20;
  int threads = 0;
  double fdr = 0.05;
  double tol = 1e-5;
  int max_iter = 200;
  std::uint64_t seed = 1;
  bool standardize = false;
  int sweeps = 1;
  std::string out = "bivas_out";

  EmOptions em() const {
    EmOptions o;
    o.rel_tol = tol;
    o.max_iter = max_iter;
    o.estep_sweeps = sweeps;
    o.trace = false;
    return o;
  }

  json options_json() const {
    return {{"grid_size", grid_size}, {"fdr", fdr},     {"tol", tol},
            {"max_iter", max_iter},   {"seed", seed},   {"sweeps", sweeps},
            {"standardize", standardize}};
  }
};

void add_fit_flags(CLI::App* cmd, FitFlags& f) {
  cmd->add_option("--response", f.response, "response column name");
  cmd->add_option("--covariates", f.covariates, "comma-separated covariate columns");
  cmd->add_flag("--no-intercept", f.no_intercept, "do not add an intercept column");
  cmd->add_option("--grid-size", f.grid_size, "number of pi grid points")->check(CLI::Range(1, 1000));
  cmd->add_option("--threads", f.threads, "worker threads (default: BIVAS_THREADS or all cores)");
  cmd->add_option("--fdr", f.fdr, "local fdr selection threshold");
  cmd->add_option("--tol", f.tol, "relative lower-bound tolerance");
  cmd->add_option("--max-iter", f.max_iter, "maximum EM iterations per grid point");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_flag("--standardize", f.standardize, "center and scale predictor columns");
  cmd->add_option("--sweeps", f.sweeps, "coordinate sweeps per M-step");
  cmd->add_option("--out", f.out, "output directory");
}

// Column bookkeeping for one data file.
struct LoadedTable {
  RawTable raw;
  std::vector<std::string> group_row;  // inline labels, empty when absent
};

LoadedTable load_table(const std::string& path) {
  LoadedTable t;
  const RawTable raw = io::read_table(path);
  t.raw = io::extract_marked_row(raw, kGroupRowMarker, &t.group_row);
  return t;
}

std::vector<std::string> predictor_columns(const RawTable& raw, const std::string& response,
                                           const std::vector<std::string>& covariates) {
  std::unordered_set<std::string> skip(covariates.begin(), covariates.end());
  skip.insert(response);
  bool seen_response = false;
  std::vector<std::string> out;
  for (const auto& h : raw.header) {
    if (h == response) seen_response = true;
    if (!skip.count(h) && !h.empty() && h.front() != '#') out.push_back(h);
  }
  if (!seen_response) {
    throw Error(ErrorCode::DimensionMismatch, "response column '" + response + "' not found");
  }
  return out;
}

struct DesignBundle {
  GroupedDesign design;
  ColumnRoles roles;
};

DesignBundle load_group_design(const std::string& data_path, const std::string& groups_path,
                               const FitFlags& f) {
  LoadedTable t = load_table(data_path);
  ColumnRoles roles;
  roles.response = f.response;
  roles.covariates = io::split_list(f.covariates);
  roles.intercept = !f.no_intercept;
  const auto candidates = predictor_columns(t.raw, roles.response, roles.covariates);

  if (!groups_path.empty()) {
    auto entries = io::read_group_map(groups_path);
    std::unordered_set<std::string> columns(candidates.begin(), candidates.end());
    if (!entries.empty() && !columns.count(entries.front().first)) entries.erase(entries.begin());
    std::unordered_map<std::string, std::string> label_of;
    for (const auto& [name, label] : entries) {
      if (!columns.count(name)) {
        throw Error(ErrorCode::DimensionMismatch, "group map names unknown predictor '" + name + "'");
      }
      label_of[name] = label;
    }
    for (const auto& name : candidates) {
      auto it = label_of.find(name);
      if (it == label_of.end()) {
        throw Error(ErrorCode::DimensionMismatch, "predictor '" + name + "' has no group label");
      }
      roles.predictors.push_back(name);
      roles.group_labels.push_back(it->second);
    }
  } else if (!t.group_row.empty()) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t c = 0; c < t.raw.header.size(); ++c) index.emplace(t.raw.header[c], c);
    if (t.group_row.size() != t.raw.header.size()) {
      throw Error(ErrorCode::DimensionMismatch, "inline group row has the wrong number of fields");
    }
    for (const auto& name : candidates) {
      const std::string& label = t.group_row[index.at(name)];
      if (label.empty()) {
        throw Error(ErrorCode::DimensionMismatch, "predictor '" + name + "' has no group label");
      }
      roles.predictors.push_back(name);
      roles.group_labels.push_back(label);
    }
  } else {
    throw Error(ErrorCode::InvalidArgument,
                "no group labels: pass --groups or add a '#group' row to the data file");
  }
  DesignOptions opts;
  opts.standardize = f.standardize;
  return DesignBundle{validate_design(t.raw, roles, opts), roles};
}

// Applies the stored column transform and builds Z for new data.
void build_new_design(const RawTable& raw, const ColumnRoles& roles, const arma::rowvec& center,
                      const arma::rowvec& scale, arma::mat& Z, arma::mat& X) {
  ColumnRoles numeric = roles;
  // Reuse validate_design's parsing through a throwaway response column.
  RawTable copy = raw;
  std::string dummy = "__bivas_dummy_response";
  copy.header.push_back(dummy);
  for (auto& row : copy.rows) row.push_back("0");
  numeric.response = dummy;
  numeric.group_labels.assign(numeric.predictors.size(), "g");
  // rank checks on Z do not apply to prediction-time data
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t c = 0; c < copy.header.size(); ++c) index.emplace(copy.header[c], c);
  auto col = [&](const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw Error(ErrorCode::DimensionMismatch, "column '" + name + "' not found");
    arma::vec v(copy.rows.size());
    for (std::size_t i = 0; i < copy.rows.size(); ++i) {
      if (copy.rows[i].size() != copy.header.size()) {
        throw Error(ErrorCode::DimensionMismatch, "row " + std::to_string(i + 1) + " has the wrong number of fields");
      }
      const std::string& cell = copy.rows[i][it->second];
      char* end = nullptr;
      const double x = std::strtod(cell.c_str(), &end);
      if (cell.empty() || end != cell.c_str() + cell.size()) {
        throw Error(ErrorCode::NonNumeric, "non-numeric value '" + cell + "' in column '" + name + "'");
      }
      if (!std::isfinite(x)) throw Error(ErrorCode::NaNPresent, "non-finite value in column '" + name + "'");
      v(i) = x;
    }
    return v;
  };
  const arma::uword n = copy.rows.size();
  Z.set_size(n, roles.covariates.size() + (roles.intercept ? 1 : 0));
  arma::uword zc = 0;
  if (roles.intercept) Z.col(zc++).ones();
  for (const auto& c : roles.covariates) Z.col(zc++) = col(c);
  X.set_size(n, roles.predictors.size());
  for (std::size_t j = 0; j < roles.predictors.size(); ++j) {
    X.col(j) = (col(roles.predictors[j]) - center(j)) / scale(j);
  }
}

json params_json(const ModelParams& p) {
  return {{"alpha", p.alpha},
          {"pi", p.pi},
          {"sigma_beta2", p.sigma_beta2},
          {"sigma_e2", p.sigma_e2},
          {"omega", to_json(p.omega)}};
}

template <class Fit>
json grid_table(const Fit& fit) {
  json rows = json::array();
  for (std::size_t i = 0; i < fit.runs.size(); ++i) {
    rows.push_back({{"index", i},
                    {"pi", fit.pi_values[i]},
                    {"elbo", fit.runs[i].elbo},
                    {"weight", fit.weights(i)},
                    {"iterations", fit.runs[i].iterations},
                    {"converged", fit.runs[i].converged},
                    {"seed", fit.seeds[i]}});
  }
  return rows;
}

std::string fmt(double v) { return io::format_double(v); }

// ---------------------------------------------------------------- fit

struct FitArgs {
  FitFlags flags;
  std::string data;
  std::string groups;
};

int cmd_fit(const FitArgs& a, std::ostream& out) {
  const FitFlags& f = a.flags;
  DesignBundle b = load_group_design(a.data, a.groups, f);
  const GroupedDesign& d = b.design;
  const PiGrid grid = make_pi_grid(d.K(), f.grid_size);
  const GridFit fit = run_grid(d, grid, f.em(), resolve_threads(f.threads), f.seed);
  const PosteriorSummary s = aggregate(fit, d);
  const SelectionReport sel = select(s, f.fdr);

  const fs::path dir(f.out);
  ensure_dir(dir);

  std::vector<std::string> group_names(d.group_of.size());
  for (std::size_t j = 0; j < d.group_of.size(); ++j) group_names[j] = d.group_labels[d.group_of[j]];

  json model = {
      {"format", "bivas-model"},
      {"version", 1},
      {"kind", "group"},
      {"response", b.roles.response},
      {"covariates", b.roles.covariates},
      {"intercept", b.roles.intercept},
      {"predictors", b.roles.predictors},
      {"groups", d.group_labels},
      {"group_of", d.group_of},
      {"x_center", to_json(d.x_center)},
      {"x_scale", to_json(d.x_scale)},
      {"params", params_json(s.params)},
      {"grid", grid_table(fit)},
      {"options", f.options_json()},
      {"posterior",
       {{"pi_tilde", to_json(s.pi_tilde)},
        {"alpha_tilde", to_json(s.alpha_tilde)},
        {"mu_tilde", to_json(s.mu_tilde)},
        {"effect", to_json(s.effect)}}},
  };
  write_json(dir / "model.json", model);

  std::ostringstream post;
  post << "id,group,pi_tilde,alpha_tilde,mu_tilde,effect,group_fdr,var_fdr\n";
  for (arma::uword j = 0; j < d.p(); ++j) {
    const arma::uword k = d.group_of[j];
    post << b.roles.predictors[j] << ',' << d.group_labels[k] << ',' << fmt(s.pi_tilde(k)) << ','
         << fmt(s.alpha_tilde(j)) << ',' << fmt(s.mu_tilde(j)) << ',' << fmt(s.effect(j)) << ','
         << fmt(s.group_fdr(k)) << ',' << fmt(s.var_fdr(j)) << '\n';
  }
  io::write_file((dir / "posterior.csv").string(), post.str());

  std::ostringstream groups;
  groups << "group,size,pi_tilde,fdr\n";
  for (arma::uword k = 0; k < d.K(); ++k) {
    groups << d.group_labels[k] << ',' << d.group_size(k) << ',' << fmt(s.pi_tilde(k)) << ','
           << fmt(s.group_fdr(k)) << '\n';
  }
  io::write_file((dir / "groups.csv").string(), groups.str());

  json selection = {{"threshold", f.fdr}, {"groups", json::array()}, {"variables", json::array()}};
  for (arma::uword k : sel.groups) {
    selection["groups"].push_back({{"group", d.group_labels[k]}, {"fdr", sel.group_fdr(k)}});
  }
  for (arma::uword j : sel.variables) {
    selection["variables"].push_back({{"id", b.roles.predictors[j]},
                                      {"group", d.group_labels[d.group_of[j]]},
                                      {"fdr", sel.var_fdr(j)}});
  }
  write_json(dir / "selection.json", selection);

  out << "fit: n=" << d.n() << " p=" << d.p() << " K=" << d.K() << " grid=" << grid.h()
      << " selected groups=" << sel.groups.size() << " variables=" << sel.variables.size()
      << " -> " << dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- multifit

struct MultiFitArgs {
  FitFlags flags;
  std::vector<std::string> tasks;
};

struct TaskBundle {
  MultiTaskData data;
  ColumnRoles roles;  // shared roles (predictors = features)
};

TaskBundle load_tasks(const std::vector<std::string>& paths, const FitFlags& f) {
  std::vector<Task> tasks;
  ColumnRoles roles;
  roles.response = f.response;
  roles.covariates = io::split_list(f.covariates);
  roles.intercept = !f.no_intercept;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    LoadedTable t = load_table(paths[i]);
    const auto features = predictor_columns(t.raw, roles.response, roles.covariates);
    if (i == 0) {
      roles.predictors = features;
    } else {
      std::set<std::string> a(features.begin(), features.end());
      std::set<std::string> b(roles.predictors.begin(), roles.predictors.end());
      if (a != b) {
        throw Error(ErrorCode::DimensionMismatch,
                    "task '" + paths[i] + "' does not have the same predictor columns as the first task");
      }
    }
    ColumnRoles task_roles = roles;
    task_roles.group_labels.clear();
    for (std::size_t k = 0; k < roles.predictors.size(); ++k) task_roles.group_labels.push_back(std::to_string(k));
    DesignOptions opts;
    opts.standardize = f.standardize;
    GroupedDesign d = validate_design(t.raw, task_roles, DesignOptions{});
    tasks.push_back(make_task(std::move(d.y), std::move(d.Z), std::move(d.X), opts));
  }
  return TaskBundle{make_multitask(std::move(tasks), roles.predictors), roles};
}

int cmd_multifit(const MultiFitArgs& a, std::ostream& out) {
  const FitFlags& f = a.flags;
  TaskBundle b = load_tasks(a.tasks, f);
  const MultiTaskData& d = b.data;
  const PiGrid grid = make_pi_grid(d.K(), f.grid_size);
  const MtGridFit fit = run_grid(d, grid, f.em(), resolve_threads(f.threads), f.seed);
  const MtPosteriorSummary s = aggregate(fit);
  const MtSelectionReport sel = select(s, f.fdr);

  const fs::path dir(f.out);
  ensure_dir(dir);

  json task_params = json::array();
  json transforms = json::array();
  for (arma::uword j = 0; j < d.L(); ++j) {
    task_params.push_back({{"sigma_beta2", s.params.sigma_beta2(j)},
                           {"sigma_e2", s.params.sigma_e2(j)},
                           {"omega", to_json(s.params.omega[j])}});
    transforms.push_back({{"x_center", to_json(d.tasks[j].x_center)},
                          {"x_scale", to_json(d.tasks[j].x_scale)}});
  }
  json effect = json::array();
  json alpha = json::array();
  json mu = json::array();
  for (arma::uword j = 0; j < d.L(); ++j) {
    effect.push_back(to_json(arma::vec(s.effect.col(j))));
    alpha.push_back(to_json(arma::vec(s.alpha_tilde.col(j))));
    mu.push_back(to_json(arma::vec(s.mu_tilde.col(j))));
  }
  json model = {
      {"format", "bivas-model"},
      {"version", 1},
      {"kind", "multitask"},
      {"response", b.roles.response},
      {"covariates", b.roles.covariates},
      {"intercept", b.roles.intercept},
      {"predictors", b.roles.predictors},
      {"tasks", a.tasks.size()},
      {"transforms", transforms},
      {"params", {{"alpha", s.params.alpha}, {"pi", s.params.pi}, {"tasks", task_params}}},
      {"grid", grid_table(fit)},
      {"options", f.options_json()},
      {"posterior",
       {{"pi_tilde", to_json(s.pi_tilde)}, {"alpha_tilde", alpha}, {"mu_tilde", mu}, {"effect", effect}}},
  };
  write_json(dir / "model.json", model);

  std::ostringstream post;
  post << "id,task,pi_tilde,alpha_tilde,mu_tilde,effect,group_fdr,var_fdr\n";
  for (arma::uword k = 0; k < d.K(); ++k) {
    for (arma::uword j = 0; j < d.L(); ++j) {
      post << b.roles.predictors[k] << ',' << (j + 1) << ',' << fmt(s.pi_tilde(k)) << ','
           << fmt(s.alpha_tilde(k, j)) << ',' << fmt(s.mu_tilde(k, j)) << ',' << fmt(s.effect(k, j))
           << ',' << fmt(s.group_fdr(k)) << ',' << fmt(s.var_fdr(k, j)) << '\n';
    }
  }
  io::write_file((dir / "posterior.csv").string(), post.str());

  std::ostringstream groups;
  groups << "group,size,pi_tilde,fdr\n";
  for (arma::uword k = 0; k < d.K(); ++k) {
    groups << b.roles.predictors[k] << ',' << d.L() << ',' << fmt(s.pi_tilde(k)) << ','
           << fmt(s.group_fdr(k)) << '\n';
  }
  io::write_file((dir / "groups.csv").string(), groups.str());

  json selection = {{"threshold", f.fdr}, {"groups", json::array()}, {"variables", json::array()}};
  for (arma::uword k : sel.groups) {
    selection["groups"].push_back({{"group", b.roles.predictors[k]}, {"fdr", sel.group_fdr(k)}});
  }
  for (const auto& [k, j] : sel.variables) {
    selection["variables"].push_back(
        {{"id", b.roles.predictors[k]}, {"task", j + 1}, {"fdr", sel.var_fdr(k, j)}});
  }
  write_json(dir / "selection.json", selection);

  out << "multifit: L=" << d.L() << " K=" << d.K() << " grid=" << grid.h()
      << " selected features=" << sel.groups.size() << " task effects=" << sel.variables.size()
      << " -> " << dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- simulate

struct SimArgs {
  SimConfig cfg;
  std::string tasks;
  std::string out = "bivas_sim";
};

std::string data_csv(const arma::vec& y, const arma::mat& X, const std::vector<std::string>& names) {
  std::ostringstream s;
  s << "y";
  for (const auto& n : names) s << ',' << n;
  s << '\n';
  for (arma::uword i = 0; i < y.n_elem; ++i) {
    s << fmt(y(i));
    for (arma::uword j = 0; j < X.n_cols; ++j) s << ',' << fmt(X(i, j));
    s << '\n';
  }
  return s.str();
}

std::vector<std::string> numbered(const std::string& prefix, arma::uword count) {
  std::vector<std::string> out;
  for (arma::uword j = 0; j < count; ++j) out.push_back(prefix + std::to_string(j + 1));
  return out;
}

json config_json(const SimConfig& c) {
  return {{"n", c.n},         {"p", c.p},     {"K", c.K},         {"rho", c.rho},
          {"pi", c.pi_true},  {"alpha", c.alpha_true},            {"snr", c.snr},
          {"seed", c.seed},   {"task_sizes", c.task_sizes}};
}

int cmd_simulate(SimArgs a, std::ostream& out) {
  const fs::path dir(a.out);
  ensure_dir(dir);
  if (!a.tasks.empty()) {
    for (const auto& s : io::split_list(a.tasks)) a.cfg.task_sizes.push_back(std::stoul(s));
    const MtSimDataset sim = gen_multitask(a.cfg);
    const auto names = numbered("x", sim.data.K());
    json files = json::array();
    for (arma::uword j = 0; j < sim.data.L(); ++j) {
      const std::string file = "task" + std::to_string(j + 1) + ".csv";
      io::write_file((dir / file).string(), data_csv(sim.data.tasks[j].y, sim.data.tasks[j].X, names));
      files.push_back(file);
    }
    json coef = json::array();
    json gamma = json::array();
    json beta = json::array();
    for (arma::uword j = 0; j < sim.data.L(); ++j) {
      coef.push_back(to_json(arma::vec(sim.truth.coef.col(j))));
      beta.push_back(to_json(arma::vec(sim.truth.beta.col(j))));
      gamma.push_back(std::vector<arma::uword>(sim.truth.gamma.begin_col(j), sim.truth.gamma.end_col(j)));
    }
    json truth = {{"kind", "multitask"},
                  {"predictors", names},
                  {"files", files},
                  {"eta", std::vector<arma::uword>(sim.truth.eta.begin(), sim.truth.eta.end())},
                  {"gamma", gamma},
                  {"beta", beta},
                  {"coef", coef},
                  {"sigma_e2", to_json(sim.truth.sigma_e2)},
                  {"config", config_json(a.cfg)}};
    write_json(dir / "truth.json", truth);
    out << "simulate: " << sim.data.L() << " tasks, K=" << sim.data.K() << " -> " << dir.string() << "\n";
    return kExitOk;
  }

  const SimDataset sim = simulate_group(a.cfg);
  const auto names = numbered("x", sim.design.p());
  io::write_file((dir / "data.csv").string(), data_csv(sim.design.y, sim.design.X, names));
  std::ostringstream groups;
  groups << "predictor,group\n";
  std::vector<std::string> group_names;
  for (arma::uword k = 0; k < a.cfg.K; ++k) group_names.push_back("g" + std::to_string(k + 1));
  for (arma::uword j = 0; j < sim.design.p(); ++j) {
    groups << names[j] << ',' << group_names[sim.truth.group_of[j]] << '\n';
  }
  io::write_file((dir / "groups.csv").string(), groups.str());
  json truth = {{"kind", "group"},
                {"predictors", names},
                {"group_names", group_names},
                {"group_of", sim.truth.group_of},
                {"eta", std::vector<arma::uword>(sim.truth.eta.begin(), sim.truth.eta.end())},
                {"gamma", std::vector<arma::uword>(sim.truth.gamma.begin(), sim.truth.gamma.end())},
                {"beta", to_json(sim.truth.beta)},
                {"coef", to_json(sim.truth.coef)},
                {"sigma_e2", sim.truth.sigma_e2},
                {"config", config_json(a.cfg)}};
  write_json(dir / "truth.json", truth);
  out << "simulate: n=" << a.cfg.n << " p=" << a.cfg.p << " K=" << a.cfg.K << " -> " << dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- evaluate

struct EvalArgs {
  std::string fit;
  std::string truth;
  double fdr = 0.05;
  std::string out;
  std::vector<std::string> labels;
};

std::string metric_cell(double v) { return std::isfinite(v) ? fmt(v) : "NA"; }

double safe_auc(const arma::vec& score, const arma::uvec& labels) {
  try {
    return auc(score, labels);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::DegenerateLabels) return std::nan("");
    throw;
  }
}

int cmd_evaluate(const EvalArgs& a, std::ostream& out) {
  const json model = read_json((fs::path(a.fit) / "model.json").string());
  const json truth = read_json(a.truth);
  const json& post = field(model, "posterior");
  const auto model_names = field(model, "predictors").get<std::vector<std::string>>();
  const auto truth_names = field(truth, "predictors").get<std::vector<std::string>>();
  std::unordered_map<std::string, std::size_t> truth_index;
  for (std::size_t i = 0; i < truth_names.size(); ++i) truth_index.emplace(truth_names[i], i);
  std::vector<std::size_t> to_truth;
  for (const auto& n : model_names) {
    auto it = truth_index.find(n);
    if (it == truth_index.end()) throw Error(ErrorCode::DimensionMismatch, "predictor '" + n + "' missing from truth");
    to_truth.push_back(it->second);
  }
  if (to_truth.size() != truth_names.size()) {
    throw Error(ErrorCode::DimensionMismatch, "fit and truth have different predictor sets");
  }

  std::vector<std::pair<std::string, double>> metrics;
  const std::string kind = field(model, "kind").get<std::string>();
  if (kind != field(truth, "kind").get<std::string>()) {
    throw Error(ErrorCode::InvalidArgument, "fit kind does not match truth kind");
  }
  if (kind == "group") {
    const arma::vec pi_tilde = vec_from(field(post, "pi_tilde"));
    const arma::vec alpha_tilde = vec_from(field(post, "alpha_tilde"));
    const arma::vec effect = vec_from(field(post, "effect"));
    const auto group_of = field(model, "group_of").get<std::vector<arma::uword>>();
    const auto model_groups = field(model, "groups").get<std::vector<std::string>>();
    const auto truth_groups = field(truth, "group_names").get<std::vector<std::string>>();
    const auto truth_eta = field(truth, "eta").get<std::vector<arma::uword>>();
    const arma::vec truth_coef = vec_from(field(truth, "coef"));

    std::unordered_map<std::string, std::size_t> tg;
    for (std::size_t k = 0; k < truth_groups.size(); ++k) tg.emplace(truth_groups[k], k);
    arma::uvec eta(model_groups.size());
    for (std::size_t k = 0; k < model_groups.size(); ++k) {
      auto it = tg.find(model_groups[k]);
      if (it == tg.end()) throw Error(ErrorCode::DimensionMismatch, "group '" + model_groups[k] + "' missing from truth");
      eta(k) = truth_eta[it->second];
    }
    const arma::uword p = model_names.size();
    arma::vec coef(p);
    arma::uvec nonzero(p);
    arma::vec score(p);
    for (arma::uword j = 0; j < p; ++j) {
      coef(j) = truth_coef(to_truth[j]);
      nonzero(j) = coef(j) != 0.0;
      score(j) = pi_tilde(group_of[j]) * alpha_tilde(j);
    }
    const auto selected = below_threshold(1.0 - alpha_tilde, a.fdr);
    const FdrPower fp = fdr_power(selected, nonzero);
    metrics = {{"auc", safe_auc(score, nonzero)},
               {"group_auc", safe_auc(pi_tilde, eta)},
               {"fdr", fp.fdr},
               {"power", fp.power},
               {"mse", coef_mse(effect, coef)}};
  } else {
    const arma::vec pi_tilde = vec_from(field(post, "pi_tilde"));
    const auto& alpha_j = field(post, "alpha_tilde");
    const auto& effect_j = field(post, "effect");
    const auto& coef_j = field(truth, "coef");
    const arma::uword L = alpha_j.size();
    const arma::uword K = pi_tilde.n_elem;
    if (coef_j.size() != L) throw Error(ErrorCode::DimensionMismatch, "task count differs from truth");
    const auto truth_eta = field(truth, "eta").get<std::vector<arma::uword>>();
    arma::uvec eta(K);
    arma::vec score(K * L), alpha(K * L), effect(K * L), coef(K * L);
    arma::uvec nonzero(K * L);
    std::vector<std::pair<std::string, double>> per_task;
    for (arma::uword j = 0; j < L; ++j) {
      const arma::vec a_col = vec_from(alpha_j[j]);
      const arma::vec e_col = vec_from(effect_j[j]);
      const arma::vec c_col = vec_from(coef_j[j]);
      arma::vec c_aligned(K);
      for (arma::uword k = 0; k < K; ++k) {
        const arma::uword i = j * K + k;
        c_aligned(k) = c_col(to_truth[k]);
        score(i) = pi_tilde(k) * a_col(k);
        alpha(i) = a_col(k);
        effect(i) = e_col(k);
        coef(i) = c_aligned(k);
        nonzero(i) = coef(i) != 0.0;
      }
      per_task.emplace_back("mse_task" + std::to_string(j + 1), coef_mse(e_col, c_aligned));
    }
    for (arma::uword k = 0; k < K; ++k) eta(k) = truth_eta[to_truth[k]];
    const FdrPower fp = fdr_power(below_threshold(1.0 - alpha, a.fdr), nonzero);
    metrics = {{"auc", safe_auc(score, nonzero)},
               {"group_auc", safe_auc(pi_tilde, eta)},
               {"fdr", fp.fdr},
               {"power", fp.power},
               {"mse", coef_mse(effect, coef)}};
    metrics.insert(metrics.end(), per_task.begin(), per_task.end());
  }

  std::vector<std::pair<std::string, std::string>> labels;
  for (const auto& l : a.labels) {
    const auto eq = l.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(ErrorCode::InvalidArgument, "label '" + l + "' must look like key=value");
    }
    labels.emplace_back(l.substr(0, eq), l.substr(eq + 1));
  }
  std::ostringstream header, row;
  bool first = true;
  auto put = [&](const std::string& h, const std::string& v) {
    if (!first) {
      header << ',';
      row << ',';
    }
    first = false;
    header << h;
    row << v;
  };
  for (const auto& [k, v] : labels) put(k, v);
  for (const auto& [k, v] : metrics) put(k, metric_cell(v));

  const fs::path target = a.out.empty() ? fs::path(a.fit) / "metrics.csv" : fs::path(a.out);
  std::string content;
  if (fs::exists(target)) {
    content = io::read_file(target.string());
    const std::string existing = content.substr(0, content.find('\n'));
    if (existing != header.str()) {
      throw Error(ErrorCode::DimensionMismatch, "existing metrics file '" + target.string() + "' has a different header");
    }
    if (!content.empty() && content.back() != '\n') content += '\n';
  } else {
    content = header.str() + "\n";
  }
  content += row.str() + "\n";
  io::write_file(target.string(), content);
  out << header.str() << "\n" << row.str() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- report

struct ReportArgs {
  std::vector<std::string> metrics;
  std::string out = "report.csv";
};

bool is_metric(const std::string& name) {
  static const std::set<std::string> known = {"auc", "group_auc", "fdr", "power", "mse"};
  return known.count(name) || name.rfind("mse_task", 0) == 0;
}

int cmd_report(const ReportArgs& a, std::ostream& out) {
  std::vector<std::string> label_cols;
  std::vector<std::string> metric_cols;
  // key: label values; value: metric -> samples
  std::map<std::vector<std::string>, std::map<std::string, std::vector<double>>> cells;
  for (const auto& path : a.metrics) {
    const RawTable t = io::read_table(path);
    std::vector<std::string> labels_here, metrics_here;
    for (const auto& h : t.header) (is_metric(h) ? metrics_here : labels_here).push_back(h);
    if (label_cols.empty() && metric_cols.empty()) {
      label_cols = labels_here;
      metric_cols = metrics_here;
    } else if (labels_here != label_cols || metrics_here != metric_cols) {
      throw Error(ErrorCode::DimensionMismatch, "metrics file '" + path + "' has a different layout");
    }
    for (const auto& row : t.rows) {
      if (row.size() != t.header.size()) {
        throw Error(ErrorCode::DimensionMismatch, "malformed row in '" + path + "'");
      }
      std::vector<std::string> key;
      auto& bucket = cells[key];
      (void)bucket;
      for (std::size_t c = 0; c < t.header.size(); ++c) {
        if (!is_metric(t.header[c])) key.push_back(row[c]);
      }
      auto& target = cells[key];
      for (std::size_t c = 0; c < t.header.size(); ++c) {
        if (!is_metric(t.header[c]) || row[c] == "NA") continue;
        char* end = nullptr;
        const double v = std::strtod(row[c].c_str(), &end);
        if (end != row[c].c_str() + row[c].size()) {
          throw Error(ErrorCode::NonNumeric, "non-numeric metric '" + row[c] + "' in '" + path + "'");
        }
        target[t.header[c]].push_back(v);
      }
    }
  }
  cells.erase(std::vector<std::string>{});
  if (label_cols.empty()) {
    // no label columns: everything lands in one bucket keyed by the empty vector
  }

  std::ostringstream s;
  for (const auto& l : label_cols) s << l << ',';
  s << "metric,mean,sd,n\n";
  auto emit = [&](const std::vector<std::string>& key, const std::map<std::string, std::vector<double>>& m) {
    for (const auto& metric : metric_cols) {
      auto it = m.find(metric);
      const std::size_t n = it == m.end() ? 0 : it->second.size();
      double mean = std::nan(""), sd = std::nan("");
      if (n > 0) {
        const arma::vec v(it->second);
        mean = arma::mean(v);
        sd = n > 1 ? arma::stddev(v) : 0.0;
      }
      for (const auto& k : key) s << k << ',';
      s << metric << ',' << metric_cell(mean) << ',' << metric_cell(sd) << ',' << n << '\n';
    }
  };
  for (const auto& [key, m] : cells) emit(key, m);
  io::write_file(a.out, s.str());
  out << s.str();
  return kExitOk;
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
  std::string model;
  std::string data;
  std::vector<std::string> tasks;
  std::string out = "predictions.csv";
};

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const json model = read_json(a.model);
  const std::string kind = field(model, "kind").get<std::string>();
  ColumnRoles roles;
  roles.response = field(model, "response").get<std::string>();
  roles.covariates = field(model, "covariates").get<std::vector<std::string>>();
  roles.intercept = field(model, "intercept").get<bool>();
  roles.predictors = field(model, "predictors").get<std::vector<std::string>>();
  const json& post = field(model, "posterior");
  const json& params = field(model, "params");

  std::ostringstream s;
  if (kind == "group") {
    if (a.data.empty()) throw Error(ErrorCode::InvalidArgument, "--data is required for a group model");
    PosteriorSummary summary;
    summary.effect = vec_from(field(post, "effect"));
    summary.params.omega = vec_from(field(params, "omega"));
    const LoadedTable t = load_table(a.data);
    arma::mat Z, X;
    build_new_design(t.raw, roles, vec_from(field(model, "x_center")).t(),
                     vec_from(field(model, "x_scale")).t(), Z, X);
    const arma::vec yhat = predict(summary, Z, X);
    s << "row,prediction\n";
    for (arma::uword i = 0; i < yhat.n_elem; ++i) s << (i + 1) << ',' << fmt(yhat(i)) << '\n';
  } else {
    const auto& task_params = field(params, "tasks");
    const auto& transforms = field(model, "transforms");
    const auto& effects = field(post, "effect");
    const std::size_t L = task_params.size();
    if (a.tasks.size() != L) {
      throw Error(ErrorCode::DimensionMismatch,
                  "model has " + std::to_string(L) + " tasks; got " + std::to_string(a.tasks.size()) + " --task-data files");
    }
    MtPosteriorSummary summary;
    summary.effect.set_size(roles.predictors.size(), L);
    summary.params.omega.resize(L);
    std::vector<arma::mat> Zs(L), Xs(L);
    for (std::size_t j = 0; j < L; ++j) {
      summary.effect.col(j) = vec_from(effects[j]);
      summary.params.omega[j] = vec_from(field(task_params[j], "omega"));
      const LoadedTable t = load_table(a.tasks[j]);
      build_new_design(t.raw, roles, vec_from(field(transforms[j], "x_center")).t(),
                       vec_from(field(transforms[j], "x_scale")).t(), Zs[j], Xs[j]);
    }
    const auto yhat = predict(summary, Zs, Xs);
    s << "task,row,prediction\n";
    for (std::size_t j = 0; j < L; ++j) {
      for (arma::uword i = 0; i < yhat[j].n_elem; ++i) s << (j + 1) << ',' << (i + 1) << ',' << fmt(yhat[j](i)) << '\n';
    }
  }
  io::write_file(a.out, s.str());
  out << "predict: wrote " << a.out << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bayesian bi-level variable selection by variational EM"};
  app.require_subcommand(1);

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "fit the group model over a pi grid");
  fit_cmd->add_option("--data", fit.data, "CSV/TSV data file")->required();
  fit_cmd->add_option("--groups", fit.groups, "predictor -> group map (CSV/TSV)");
  add_fit_flags(fit_cmd, fit.flags);

  MultiFitArgs multifit;
  auto* mf_cmd = app.add_subcommand("multifit", "fit the multi-task model over a pi grid");
  mf_cmd->add_option("--task-data", multifit.tasks, "data file of one task (repeat per task)")->required();
  add_fit_flags(mf_cmd, multifit.flags);

  SimArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "generate a synthetic data set");
  sim_cmd->add_option("--n", sim.cfg.n, "observations");
  sim_cmd->add_option("--p", sim.cfg.p, "predictors (group model)");
  sim_cmd->add_option("--K", sim.cfg.K, "groups, or features for multi-task");
  sim_cmd->add_option("--rho", sim.cfg.rho, "AR(1) correlation between adjacent columns");
  sim_cmd->add_option("--pi", sim.cfg.pi_true, "group-level inclusion probability");
  sim_cmd->add_option("--alpha", sim.cfg.alpha_true, "variable-level inclusion probability");
  sim_cmd->add_option("--snr", sim.cfg.snr, "signal-to-noise ratio var(X b) / sigma_e2");
  sim_cmd->add_option("--seed", sim.cfg.seed, "seed");
  sim_cmd->add_option("--tasks", sim.tasks, "comma-separated task sample sizes (multi-task)");
  sim_cmd->add_option("--out", sim.out, "output directory");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "score a fit against simulation truth");
  eval_cmd->add_option("--fit", eval.fit, "fit output directory")->required();
  eval_cmd->add_option("--truth", eval.truth, "truth.json from simulate")->required();
  eval_cmd->add_option("--fdr", eval.fdr, "selection threshold");
  eval_cmd->add_option("--out", eval.out, "metrics CSV (appended; default <fit>/metrics.csv)");
  eval_cmd->add_option("--label", eval.labels, "key=value column added to the row (repeatable)");

  PredictArgs pred;
  auto* pred_cmd = app.add_subcommand("predict", "predict responses for new data");
  pred_cmd->add_option("--model", pred.model, "model.json from fit/multifit")->required();
  pred_cmd->add_option("--data", pred.data, "new data (group model)");
  pred_cmd->add_option("--task-data", pred.tasks, "new data per task (multi-task model)");
  pred_cmd->add_option("--out", pred.out, "predictions CSV");

  ReportArgs report;
  auto* rep_cmd = app.add_subcommand("report", "summarize replicate metrics into mean/sd tables");
  rep_cmd->add_option("--metrics", report.metrics, "metrics CSV files")->required();
  rep_cmd->add_option("--out", report.out, "summary CSV");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }

  try {
    if (fit_cmd->parsed()) return cmd_fit(fit, out);
    if (mf_cmd->parsed()) return cmd_multifit(multifit, out);
    if (sim_cmd->parsed()) return cmd_simulate(sim, out);
    if (eval_cmd->parsed()) return cmd_evaluate(eval, out);
    if (pred_cmd->parsed()) return cmd_predict(pred, out);
    if (rep_cmd->parsed()) return cmd_report(report, out);
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return e.code() == ErrorCode::Io ? kExitIo : kExitValidation;
  } catch (const json::exception& e) {
    err << "error: malformed JSON content: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitIo;
}

}  // namespace bivas::cli
