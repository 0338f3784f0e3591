#pragma once

// Exact marginal likelihood and posteriors by enumerating every (eta, gamma)
// configuration. Only usable on tiny instances; serves as ground truth for the
// variational engines.

#include "bivas/model.hpp"

namespace bivas {

inline constexpr unsigned kOracleMaxConfigs = 4096;
inline constexpr arma::uword kOracleMaxRows = 64;

struct ExactPosterior {
  double log_marginal = 0.0;
  arma::vec pi;      // Pr(eta_k = 1 | y)
  arma::vec alpha;   // Pr(gamma_jk = 1 | y)
  arma::vec effect;  // E[eta_k gamma_jk beta_jk | y]
};

struct MtExactPosterior {
  double log_marginal = 0.0;
  arma::vec pi;      // K
  arma::mat alpha;   // K x L
  arma::mat effect;  // K x L
};

// log N(r | 0, se2 I + sb2 X_A X_A') for the columns in `active`; when `mean`
// is non-null it receives E[beta_A | r].
double gaussian_log_marginal(const arma::vec& r, const arma::mat& X, const arma::uvec& active,
                             double se2, double sb2, arma::vec* mean = nullptr);

double exact_log_marginal(const GroupedDesign& data, const ModelParams& params);
ExactPosterior exact_posteriors(const GroupedDesign& data, const ModelParams& params);

double exact_log_marginal(const MultiTaskData& data, const MultiTaskParams& params);
MtExactPosterior exact_posteriors(const MultiTaskData& data, const MultiTaskParams& params);

}  // namespace bivas
