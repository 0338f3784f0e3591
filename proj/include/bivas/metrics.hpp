#pragma once

#include <armadillo>

#include <vector>

namespace bivas {

// Mann-Whitney AUC: P(score+ > score-) + P(tie) / 2, from mid-ranks.
double auc(const arma::vec& scores, const arma::uvec& labels);

// Group-level AUC of pi_tilde against the true group indicators.
double group_auc(const arma::vec& pi_tilde, const arma::uvec& eta);

struct FdrPower {
  double fdr = 0.0;
  double power = 0.0;
  arma::uword true_positives = 0;
  arma::uword false_positives = 0;
  arma::uword false_negatives = 0;
};

// FDR = FP / max(1, FP + TP); power = TP / positives (0 when there are none).
FdrPower fdr_power(const std::vector<arma::uword>& selected, const arma::uvec& labels);

double coef_mse(const arma::vec& estimate, const arma::vec& truth);

// 1 - SSE / SST of a prediction.
double r_squared(const arma::vec& y, const arma::vec& prediction);

}  // namespace bivas
