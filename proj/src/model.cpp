#include "bivas/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <unordered_map>

namespace bivas {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonNumeric: return "NonNumeric";
    case ErrorCode::NaNPresent: return "NaNPresent";
    case ErrorCode::RankDeficientZ: return "RankDeficientZ";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidCount: return "InvalidCount";
    case ErrorCode::InvalidThreshold: return "InvalidThreshold";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

double clamp_prob(double p) {
  if (std::isnan(p)) return 0.5;
  return std::clamp(p, kProbEps, 1.0 - kProbEps);
}

double floor_var(double v) { return std::isnan(v) ? kVarFloor : std::max(v, kVarFloor); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

void check_finite(const arma::mat& m, const std::string& what) {
  if (!m.is_finite()) {
    throw Error(ErrorCode::NaNPresent, what + " contains NaN or Inf entries");
  }
}

arma::mat checked_gram_cholesky(const arma::mat& Z) {
  const arma::mat gram = Z.t() * Z;
  if (gram.n_rows == 0) return arma::mat();
  arma::vec eig;
  if (!arma::eig_sym(eig, gram)) {
    throw Error(ErrorCode::RankDeficientZ, "eigendecomposition of Z'Z failed");
  }
  const double top = eig.max();
  if (!(top > 0.0) || eig.min() < 1e-10 * top) {
    throw Error(ErrorCode::RankDeficientZ,
                "covariate matrix Z is rank deficient (Z'Z numerically singular)");
  }
  arma::mat R;
  if (!arma::chol(R, gram)) {
    throw Error(ErrorCode::RankDeficientZ, "Cholesky factorization of Z'Z failed");
  }
  return R;
}

arma::vec gram_solve(const arma::mat& ztz_chol, const arma::mat& Z,
                     const arma::vec& v) {
  if (Z.n_cols == 0) return arma::vec();
  const arma::vec rhs = Z.t() * v;
  const arma::vec tmp =
      arma::solve(arma::trimatl(ztz_chol.t()), rhs, arma::solve_opts::no_approx);
  return arma::solve(arma::trimatu(ztz_chol), tmp, arma::solve_opts::no_approx);
}

namespace {

void standardize_columns(arma::mat& X, arma::rowvec& center, arma::rowvec& scale,
                         bool enabled) {
  center.zeros(X.n_cols);
  scale.ones(X.n_cols);
  if (!enabled || X.n_rows < 2) return;
  center = arma::mean(X, 0);
  X.each_row() -= center;
  for (arma::uword j = 0; j < X.n_cols; ++j) {
    const double sd = arma::stddev(X.col(j));
    // constant columns stay at zero after centering
    if (sd > 0.0) {
      scale(j) = sd;
      X.col(j) /= sd;
    }
  }
}

}  // namespace

GroupedDesign make_design(arma::vec y, arma::mat Z, arma::mat X,
                          const std::vector<std::string>& labels,
                          const DesignOptions& opts) {
  const arma::uword n = y.n_elem;
  if (Z.n_rows != n || X.n_rows != n) {
    throw Error(ErrorCode::DimensionMismatch,
                "y, Z and X must have the same number of rows");
  }
  if (labels.size() != X.n_cols) {
    throw Error(ErrorCode::DimensionMismatch,
                "need one group label per predictor column (got " +
                    std::to_string(labels.size()) + " labels for " +
                    std::to_string(X.n_cols) + " columns)");
  }
  if (Z.n_cols >= n && n > 0) {
    throw Error(ErrorCode::RankDeficientZ, "need more observations than covariates");
  }
  check_finite(y, "response");
  check_finite(Z, "covariates");
  check_finite(X, "predictors");

  GroupedDesign d;
  d.ztz_chol = checked_gram_cholesky(Z);
  standardize_columns(X, d.x_center, d.x_scale, opts.standardize);

  std::unordered_map<std::string, arma::uword> dense;
  d.group_of.resize(labels.size());
  for (std::size_t j = 0; j < labels.size(); ++j) {
    auto [it, inserted] = dense.try_emplace(labels[j], d.group_labels.size());
    if (inserted) {
      d.group_labels.push_back(labels[j]);
      d.members.emplace_back();
    }
    d.group_of[j] = it->second;
    d.members[it->second].push_back(j);
  }
  for (const auto& m : d.members) {
    if (m.empty()) throw Error(ErrorCode::EmptyGroup, "empty group");
  }

  d.xtx = arma::sum(arma::square(X), 0).t();
  d.y = std::move(y);
  d.Z = std::move(Z);
  d.X = std::move(X);
  return d;
}

namespace {

double parse_cell(const std::string& cell, const std::string& column, std::size_t row) {
  std::string s = cell;
  s.erase(0, s.find_first_not_of(" \t\r"));
  s.erase(s.find_last_not_of(" \t\r") + 1);
  const std::string lower = [&] {
    std::string t = s;
    std::transform(t.begin(), t.end(), t.begin(), ::tolower);
    return t;
  }();
  if (s.empty() || lower == "na" || lower == "nan" || lower == "inf" ||
      lower == "-inf" || lower == "+inf") {
    throw Error(ErrorCode::NaNPresent, "missing or non-finite value in column '" +
                                           column + "' row " + std::to_string(row + 1));
  }
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::NonNumeric, "non-numeric value '" + s + "' in column '" +
                                           column + "' row " + std::to_string(row + 1));
  }
  if (!std::isfinite(v)) {
    throw Error(ErrorCode::NaNPresent, "non-finite value in column '" + column + "'");
  }
  return v;
}

}  // namespace

GroupedDesign validate_design(const RawTable& raw, const ColumnRoles& roles,
                              const DesignOptions& opts) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t c = 0; c < raw.header.size(); ++c) index.emplace(raw.header[c], c);
  auto column = [&](const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) {
      throw Error(ErrorCode::DimensionMismatch, "column '" + name + "' not found");
    }
    return it->second;
  };

  const std::size_t n = raw.rows.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (raw.rows[i].size() != raw.header.size()) {
      throw Error(ErrorCode::DimensionMismatch,
                  "row " + std::to_string(i + 1) + " has " +
                      std::to_string(raw.rows[i].size()) + " fields, header has " +
                      std::to_string(raw.header.size()));
    }
  }
  if (roles.group_labels.size() != roles.predictors.size()) {
    throw Error(ErrorCode::DimensionMismatch, "group labels do not match predictors");
  }

  auto numeric_column = [&](const std::string& name) {
    const std::size_t c = column(name);
    arma::vec v(n);
    for (std::size_t i = 0; i < n; ++i) v(i) = parse_cell(raw.rows[i][c], name, i);
    return v;
  };

  arma::vec y = numeric_column(roles.response);
  const arma::uword r = roles.covariates.size() + (roles.intercept ? 1 : 0);
  arma::mat Z(n, r);
  arma::uword zc = 0;
  if (roles.intercept) Z.col(zc++).ones();
  for (const auto& name : roles.covariates) Z.col(zc++) = numeric_column(name);
  arma::mat X(n, roles.predictors.size());
  for (std::size_t j = 0; j < roles.predictors.size(); ++j) {
    X.col(j) = numeric_column(roles.predictors[j]);
  }
  return make_design(std::move(y), std::move(Z), std::move(X), roles.group_labels, opts);
}

void ModelParams::sanitize() {
  alpha = clamp_prob(alpha);
  pi = clamp_prob(pi);
  sigma_beta2 = floor_var(sigma_beta2);
  sigma_e2 = floor_var(sigma_e2);
}

void MultiTaskParams::sanitize() {
  alpha = clamp_prob(alpha);
  pi = clamp_prob(pi);
  sigma_beta2.transform([](double v) { return floor_var(v); });
  sigma_e2.transform([](double v) { return floor_var(v); });
}

void refresh_residual(VariationalState& state, const GroupedDesign& data,
                      const ModelParams& params) {
  const arma::uword n = data.n();
  const arma::uword K = data.K();
  state.group_fit.zeros(n, K);
  state.residual = data.y;
  if (data.r() > 0) state.residual -= data.Z * params.omega;
  for (arma::uword k = 0; k < K; ++k) {
    auto g = state.group_fit.col(k);
    for (arma::uword j : data.members[k]) {
      const double c = state.alpha_jk(j) * state.mu(j);
      if (c != 0.0) g += c * data.X.col(j);
    }
    state.residual -= state.pi_k(k) * g;
  }
}

Task make_task(arma::vec y, arma::mat Z, arma::mat X, const DesignOptions& opts) {
  const arma::uword n = y.n_elem;
  if (Z.n_rows != n || X.n_rows != n) {
    throw Error(ErrorCode::DimensionMismatch,
                "task y, Z and X must have the same number of rows");
  }
  if (Z.n_cols >= n && n > 0) {
    throw Error(ErrorCode::RankDeficientZ, "need more observations than covariates");
  }
  check_finite(y, "task response");
  check_finite(Z, "task covariates");
  check_finite(X, "task predictors");
  Task t;
  t.ztz_chol = checked_gram_cholesky(Z);
  standardize_columns(X, t.x_center, t.x_scale, opts.standardize);
  t.xtx = arma::sum(arma::square(X), 0).t();
  t.y = std::move(y);
  t.Z = std::move(Z);
  t.X = std::move(X);
  return t;
}

MultiTaskData make_multitask(std::vector<Task> tasks,
                             std::vector<std::string> feature_names) {
  if (tasks.empty()) throw Error(ErrorCode::InvalidCount, "need at least one task");
  const arma::uword K = tasks.front().X.n_cols;
  for (const auto& t : tasks) {
    if (t.X.n_cols != K) {
      throw Error(ErrorCode::DimensionMismatch,
                  "every task must have the same number of predictors");
    }
  }
  if (feature_names.empty()) {
    for (arma::uword k = 0; k < K; ++k) feature_names.push_back("x" + std::to_string(k + 1));
  } else if (feature_names.size() != K) {
    throw Error(ErrorCode::DimensionMismatch, "feature names do not match predictors");
  }
  return MultiTaskData{std::move(tasks), std::move(feature_names)};
}

}  // namespace bivas
