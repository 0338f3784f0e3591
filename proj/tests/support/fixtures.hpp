#pragma once

// Random instances and independent reference implementations used by the
// unit and acceptance tests.

#include "bivas/grid.hpp"
#include "bivas/group_em.hpp"
#include "bivas/model.hpp"
#include "bivas/multitask_em.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace fixtures {

using Rng = std::mt19937_64;

arma::vec normal_vec(Rng& rng, arma::uword n);
arma::mat normal_mat(Rng& rng, arma::uword n, arma::uword p);
double uniform(Rng& rng, double lo, double hi);

// AR(1)-correlated columns built directly from the Cholesky factor of the
// target covariance (not through the simulator).
arma::mat correlated_columns(Rng& rng, arma::uword n, arma::uword p, double rho);

struct GroupSpec {
  arma::uword n = 30;
  std::vector<arma::uword> sizes{2, 3, 1};
  arma::uword covariates = 1;  // intercept plus (covariates - 1) random columns
  double rho = 0.0;
  double signal = 1.0;
};

bivas::GroupedDesign random_design(Rng& rng, const GroupSpec& spec);
bivas::ModelParams random_params(Rng& rng, const bivas::GroupedDesign& d);
// Random state with caches consistent with its free parameters.
bivas::VariationalState random_state(Rng& rng, const bivas::GroupedDesign& d,
                                     const bivas::ModelParams& params);

// Lower bound from the full Gram matrix and explicit second moments.
double naive_elbo(const bivas::VariationalState& s, const bivas::GroupedDesign& d,
                  const bivas::ModelParams& params);

// One coordinate-ascent sweep from the textbook definitions: mu and s2 from the
// expected partial residual, alpha and pi from exact coefficients of the bound
// (obtained as differences of naive_elbo, which is linear in each of them).
bivas::VariationalState reference_sweep(bivas::VariationalState s, const bivas::GroupedDesign& d,
                                        const bivas::ModelParams& params);

// Numerator of the mu update computed from its definition.
double direct_numerator(const bivas::VariationalState& s, const bivas::GroupedDesign& d,
                        const bivas::ModelParams& params, arma::uword j);

struct MtSpec {
  std::vector<arma::uword> n{10, 12, 8};
  arma::uword K = 5;
  double rho = 0.0;
};

bivas::MultiTaskData random_multitask(Rng& rng, const MtSpec& spec);
bivas::MultiTaskParams random_mt_params(Rng& rng, const bivas::MultiTaskData& d);
bivas::MtVariationalState random_mt_state(Rng& rng, const bivas::MultiTaskData& d,
                                          const bivas::MultiTaskParams& params);
double naive_mt_elbo(const bivas::MtVariationalState& s, const bivas::MultiTaskData& d,
                     const bivas::MultiTaskParams& params);
bivas::MtVariationalState reference_mt_sweep(bivas::MtVariationalState s,
                                             const bivas::MultiTaskData& d,
                                             const bivas::MultiTaskParams& params);

// Single-task data as a group design with one predictor per group.
bivas::GroupedDesign as_singleton_design(const bivas::Task& t);
bivas::ModelParams as_group_params(const bivas::MultiTaskParams& p);

// log p(y) for K = 2 singleton groups by brute-force 2-D trapezoid
// integration over the effects (independent of the Woodbury path).
double quadrature_log_marginal(const bivas::GroupedDesign& d, const bivas::ModelParams& params,
                               int points = 801);

double max_abs_diff(const arma::mat& a, const arma::mat& b);
double rel_diff(double a, double b);

}  // namespace fixtures
