#pragma once

// Variational EM for multi-task regression: L regressions over the same K
// features with group indicators shared across tasks.
//
// Indexing: task j, feature k. Per-task quantities live in column j of the
// K x L matrices below.

#include "bivas/group_em.hpp"
#include "bivas/model.hpp"

#include <vector>

namespace bivas {

struct MtVariationalState {
  arma::mat mu;        // K x L
  arma::mat s2;        // K x L
  arma::mat alpha_jk;  // K x L
  arma::vec pi_k;      // K
  std::vector<arma::vec> residuals;  // r_j = y_j - Z_j w_j - sum_k pi_k a_jk mu_jk x_jk
};

struct MtEmResult {
  MultiTaskParams params;
  MtVariationalState state;
  double elbo = 0.0;
  std::vector<double> elbo_trace;
  int iterations = 0;
  bool converged = false;
};

MultiTaskParams mt_initial_params(const MultiTaskData& data, double pi, double alpha0 = 0.1);
MtVariationalState mt_initial_state(const MultiTaskData& data, const MultiTaskParams& params);

void mt_refresh_residuals(MtVariationalState& state, const MultiTaskData& data,
                          const MultiTaskParams& params);

void mt_estep_sweep(MtVariationalState& state, const MultiTaskData& data,
                    const MultiTaskParams& params);

double mt_elbo(const MtVariationalState& state, const MultiTaskData& data,
               const MultiTaskParams& params);

MultiTaskParams mt_mstep_update(const MtVariationalState& state, const MultiTaskData& data,
                                const MultiTaskParams& params, const EmOptions& opts);

MtEmResult mt_em_fit(const MultiTaskData& data, const MultiTaskParams& init,
                     const EmOptions& opts);

}  // namespace bivas
