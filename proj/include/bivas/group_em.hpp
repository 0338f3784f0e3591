#pragma once

// Variational EM for the grouped spike-and-slab model with hierarchical
// (group indicator -> variable indicator -> effect) posterior factorization.

#include "bivas/model.hpp"

#include <vector>

namespace bivas {

struct EmOptions {
  int max_iter = 200;
  double rel_tol = 1e-5;
  bool fix_pi = false;
  bool fix_alpha = false;
  bool trace = true;
  int estep_sweeps = 1;  // coordinate sweeps per M-step

  void validate() const;
};

struct EmResult {
  ModelParams params;
  VariationalState state;
  double elbo = 0.0;
  std::vector<double> elbo_trace;
  int iterations = 0;
  bool converged = false;
};

// Deterministic starting point: OLS for omega, residual variance for sigma_e2,
// alpha = 0.1 and sigma_beta2 scaled so that the prior explains roughly var(y).
ModelParams initial_params(const GroupedDesign& data, double pi, double alpha0 = 0.1);
VariationalState initial_state(const GroupedDesign& data, const ModelParams& params);

// One in-place coordinate-ascent sweep, group-major. Caches must be consistent
// on entry and are maintained incrementally.
void estep_sweep(VariationalState& state, const GroupedDesign& data,
                 const ModelParams& params);

// Lower bound for the given state and parameters. Does not trust the caches.
double elbo_group(const VariationalState& state, const GroupedDesign& data,
                  const ModelParams& params);

// Same bound, assuming residual/group_fit are consistent. O(n K + p).
double elbo_group_cached(const VariationalState& state, const GroupedDesign& data,
                         const ModelParams& params);

ModelParams mstep_update(const VariationalState& state, const GroupedDesign& data,
                         const ModelParams& params, const EmOptions& opts);

EmResult em_fit(const GroupedDesign& data, const ModelParams& init,
                const EmOptions& opts);

// Fitted values Z omega + sum_k pi_k g_k of a state.
arma::vec fitted_values(const VariationalState& state, const GroupedDesign& data,
                        const ModelParams& params);

}  // namespace bivas
