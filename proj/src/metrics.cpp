#include "bivas/metrics.hpp"

#include "bivas/model.hpp"

#include <algorithm>
#include <numeric>

namespace bivas {

double auc(const arma::vec& scores, const arma::uvec& labels) {
  if (scores.n_elem != labels.n_elem) {
    throw Error(ErrorCode::DimensionMismatch, "scores and labels differ in length");
  }
  const arma::uword n = scores.n_elem;
  std::vector<arma::uword> order(n);
  std::iota(order.begin(), order.end(), arma::uword{0});
  std::sort(order.begin(), order.end(),
            [&](arma::uword a, arma::uword b) { return scores(a) < scores(b); });

  double positive_rank_sum = 0.0;
  arma::uword positives = 0;
  for (arma::uword start = 0; start < n;) {
    arma::uword end = start;
    while (end < n && scores(order[end]) == scores(order[start])) ++end;
    const double mid_rank = 0.5 * static_cast<double>(start + 1 + end);
    for (arma::uword i = start; i < end; ++i) {
      if (labels(order[i]) != 0) {
        positive_rank_sum += mid_rank;
        ++positives;
      }
    }
    start = end;
  }
  const arma::uword negatives = n - positives;
  if (positives == 0 || negatives == 0) {
    throw Error(ErrorCode::DegenerateLabels, "AUC needs both positive and negative labels");
  }
  const double np = static_cast<double>(positives);
  const double nn = static_cast<double>(negatives);
  return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double group_auc(const arma::vec& pi_tilde, const arma::uvec& eta) { return auc(pi_tilde, eta); }

FdrPower fdr_power(const std::vector<arma::uword>& selected, const arma::uvec& labels) {
  FdrPower out;
  std::vector<char> chosen(labels.n_elem, 0);
  for (arma::uword i : selected) {
    if (i >= labels.n_elem) throw Error(ErrorCode::DimensionMismatch, "selected index out of range");
    chosen[i] = 1;
  }
  arma::uword positives = 0;
  for (arma::uword i = 0; i < labels.n_elem; ++i) {
    const bool truth = labels(i) != 0;
    positives += truth;
    if (chosen[i] && truth) ++out.true_positives;
    if (chosen[i] && !truth) ++out.false_positives;
    if (!chosen[i] && truth) ++out.false_negatives;
  }
  const double called = static_cast<double>(out.true_positives + out.false_positives);
  out.fdr = static_cast<double>(out.false_positives) / std::max(1.0, called);
  out.power = positives > 0 ? static_cast<double>(out.true_positives) / positives : 0.0;
  return out;
}

double coef_mse(const arma::vec& estimate, const arma::vec& truth) {
  if (estimate.n_elem != truth.n_elem) {
    throw Error(ErrorCode::DimensionMismatch, "estimate and truth differ in length");
  }
  if (truth.is_empty()) return 0.0;
  return arma::mean(arma::square(estimate - truth));
}

double r_squared(const arma::vec& y, const arma::vec& prediction) {
  const double sst = arma::accu(arma::square(y - arma::mean(y)));
  const double sse = arma::accu(arma::square(y - prediction));
  return 1.0 - sse / sst;
}

}  // namespace bivas
