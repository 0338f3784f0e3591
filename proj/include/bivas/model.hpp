#pragma once

// Domain types shared by the group and multi-task inference engines.

#include <armadillo>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace bivas {

enum class ErrorCode {
  NonNumeric,
  NaNPresent,
  RankDeficientZ,
  EmptyGroup,
  DimensionMismatch,
  InvalidCount,
  InvalidThreshold,
  InvalidArgument,
  TooLarge,
  DegenerateLabels,
  Io,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline constexpr double kProbEps = 1e-12;
inline constexpr double kVarFloor = 1e-10;

double clamp_prob(double p);
double floor_var(double v);
double sigmoid(double x);
double logit(double p);

// Binary entropy-style term x log(x), with 0 log 0 = 0.
double xlogx(double x);

struct DesignOptions {
  bool standardize = false;
};

// Response, covariates and labelled predictors. Immutable after construction.
struct GroupedDesign {
  arma::vec y;
  arma::mat Z;
  arma::mat X;
  std::vector<arma::uword> group_of;            // size p, dense ids in [0,K)
  std::vector<std::vector<arma::uword>> members;  // size K, column indices
  std::vector<std::string> group_labels;          // original label of each dense id
  arma::vec xtx;                                  // x_j'x_j
  arma::mat ztz_chol;                             // upper Cholesky factor of Z'Z

  // Column transform applied to X (identity unless standardized).
  arma::rowvec x_center;
  arma::rowvec x_scale;

  arma::uword n() const { return y.n_elem; }
  arma::uword p() const { return X.n_cols; }
  arma::uword r() const { return Z.n_cols; }
  arma::uword K() const { return members.size(); }
  arma::uword group_size(arma::uword k) const { return members[k].size(); }
};

// Builds a validated design; labels are arbitrary strings re-indexed densely
// in order of first appearance.
GroupedDesign make_design(arma::vec y, arma::mat Z, arma::mat X,
                          const std::vector<std::string>& labels,
                          const DesignOptions& opts = {});

// Raw text table plus the roles of its columns.
struct RawTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

struct ColumnRoles {
  std::string response;
  std::vector<std::string> covariates;   // empty: none besides intercept
  std::vector<std::string> predictors;   // columns of X, in order
  std::vector<std::string> group_labels;  // one per predictor
  bool intercept = true;
};

GroupedDesign validate_design(const RawTable& raw, const ColumnRoles& roles,
                              const DesignOptions& opts = {});

// Upper Cholesky factor of Z'Z; throws RankDeficientZ when the Gram matrix is
// numerically singular (min eigenvalue < 1e-10 * max eigenvalue).
arma::mat checked_gram_cholesky(const arma::mat& Z);

// Solves (Z'Z) w = Z'v given the upper Cholesky factor of Z'Z.
arma::vec gram_solve(const arma::mat& ztz_chol, const arma::mat& Z,
                     const arma::vec& v);

void check_finite(const arma::mat& m, const std::string& what);

struct ModelParams {
  double alpha = 0.1;
  double pi = 0.5;
  double sigma_beta2 = 1.0;
  double sigma_e2 = 1.0;
  arma::vec omega;

  // Applies the probability clamps and variance floors in place.
  void sanitize();
};

// Variational posterior for the group model. Beyond the free parameters it
// carries two caches kept consistent with them:
//   residual  = y - Z omega - sum_k pi_k g_k
//   group_fit = [g_1 ... g_K], g_k = sum_{j in k} alpha_j mu_j x_j
struct VariationalState {
  arma::vec mu;
  arma::vec s2;
  arma::vec alpha_jk;
  arma::vec pi_k;
  arma::vec residual;
  arma::mat group_fit;
};

// Recomputes residual and group_fit from mu, alpha_jk, pi_k and omega.
void refresh_residual(VariationalState& state, const GroupedDesign& data,
                      const ModelParams& params);

// One task of a multi-task problem. Column k of X is feature k in every task.
struct Task {
  arma::vec y;
  arma::mat Z;
  arma::mat X;
  arma::vec xtx;
  arma::mat ztz_chol;
  arma::rowvec x_center;
  arma::rowvec x_scale;

  arma::uword n() const { return y.n_elem; }
};

struct MultiTaskData {
  std::vector<Task> tasks;
  std::vector<std::string> feature_names;

  arma::uword L() const { return tasks.size(); }
  arma::uword K() const { return tasks.empty() ? 0 : tasks.front().X.n_cols; }
};

Task make_task(arma::vec y, arma::mat Z, arma::mat X,
               const DesignOptions& opts = {});
MultiTaskData make_multitask(std::vector<Task> tasks,
                             std::vector<std::string> feature_names = {});

struct MultiTaskParams {
  double alpha = 0.1;
  double pi = 0.5;
  arma::vec sigma_beta2;  // per task
  arma::vec sigma_e2;     // per task
  std::vector<arma::vec> omega;

  void sanitize();
};

}  // namespace bivas
