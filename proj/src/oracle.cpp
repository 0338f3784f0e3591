#include "bivas/oracle.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_map>
#include <vector>

namespace bivas {

double gaussian_log_marginal(const arma::vec& r, const arma::mat& X, const arma::uvec& active,
                             double se2, double sb2, arma::vec* mean) {
  const double n = static_cast<double>(r.n_elem);
  const double rr = arma::dot(r, r);
  const double base = -0.5 * n * std::log(2.0 * std::numbers::pi * se2);
  if (active.is_empty()) {
    if (mean) mean->reset();
    return base - 0.5 * rr / se2;
  }
  // Woodbury: C = se2 I + sb2 X_A X_A', M = X_A'X_A + (se2/sb2) I
  const arma::mat XA = X.cols(active);
  const double m = static_cast<double>(active.n_elem);
  arma::mat M = XA.t() * XA;
  M.diag() += se2 / sb2;
  const arma::mat R = arma::chol(M);
  const arma::vec xr = XA.t() * r;
  const arma::vec half = arma::solve(arma::trimatl(R.t()), xr);
  const double logdet_m = 2.0 * arma::accu(arma::log(R.diag()));
  const double logdet_c = logdet_m + m * std::log(sb2 / se2);  // minus n log se2, in base
  if (mean) *mean = arma::solve(arma::trimatu(R), half);
  return base - 0.5 * logdet_c - 0.5 * (rr - arma::dot(half, half)) / se2;
}

namespace {

double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

double bernoulli_log(bool on, double p) {
  if (on) return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
  return p < 1.0 ? std::log1p(-p) : -std::numeric_limits<double>::infinity();
}

void check_enumerable(unsigned bits, arma::uword n) {
  if (bits > 12 || (1u << bits) > kOracleMaxConfigs || n > kOracleMaxRows) {
    throw Error(ErrorCode::TooLarge, "instance too large for exact enumeration");
  }
}

}  // namespace

ExactPosterior exact_posteriors(const GroupedDesign& data, const ModelParams& params) {
  const unsigned K = data.K();
  const unsigned p = data.p();
  check_enumerable(K + p, data.n());

  arma::vec r = data.y;
  if (data.r() > 0) r -= data.Z * params.omega;

  // likelihood depends only on the active column set
  struct ActiveTerm {
    double log_lik;
    arma::vec mean;
    arma::uvec cols;
  };
  std::unordered_map<unsigned, ActiveTerm> cache;
  auto term_for = [&](unsigned mask) -> const ActiveTerm& {
    auto it = cache.find(mask);
    if (it != cache.end()) return it->second;
    std::vector<arma::uword> cols;
    for (unsigned j = 0; j < p; ++j) {
      if (mask >> j & 1u) cols.push_back(j);
    }
    ActiveTerm t;
    t.cols = arma::uvec(cols);
    t.log_lik = gaussian_log_marginal(r, data.X, t.cols, params.sigma_e2, params.sigma_beta2, &t.mean);
    return cache.emplace(mask, std::move(t)).first->second;
  };

  const double ninf = -std::numeric_limits<double>::infinity();
  double total = ninf;
  arma::vec log_pi(K, arma::fill::value(ninf));
  arma::vec log_alpha(p, arma::fill::value(ninf));
  std::vector<double> log_w;
  std::vector<unsigned> masks;

  for (unsigned eta = 0; eta < (1u << K); ++eta) {
    double lp_eta = 0.0;
    for (unsigned k = 0; k < K; ++k) lp_eta += bernoulli_log(eta >> k & 1u, params.pi);
    for (unsigned gamma = 0; gamma < (1u << p); ++gamma) {
      double lp = lp_eta;
      unsigned active = 0;
      for (unsigned j = 0; j < p; ++j) {
        const bool g = gamma >> j & 1u;
        lp += bernoulli_log(g, params.alpha);
        if (g && (eta >> data.group_of[j] & 1u)) active |= 1u << j;
      }
      const double lw = lp + term_for(active).log_lik;
      total = log_add(total, lw);
      for (unsigned k = 0; k < K; ++k) {
        if (eta >> k & 1u) log_pi(k) = log_add(log_pi(k), lw);
      }
      for (unsigned j = 0; j < p; ++j) {
        if (gamma >> j & 1u) log_alpha(j) = log_add(log_alpha(j), lw);
      }
      log_w.push_back(lw);
      masks.push_back(active);
    }
  }

  ExactPosterior out;
  out.log_marginal = total;
  out.pi = arma::exp(log_pi - total);
  out.alpha = arma::exp(log_alpha - total);
  out.effect.zeros(p);
  for (std::size_t c = 0; c < log_w.size(); ++c) {
    const double w = std::exp(log_w[c] - total);
    const ActiveTerm& t = term_for(masks[c]);
    for (arma::uword i = 0; i < t.cols.n_elem; ++i) out.effect(t.cols(i)) += w * t.mean(i);
  }
  return out;
}

double exact_log_marginal(const GroupedDesign& data, const ModelParams& params) {
  return exact_posteriors(data, params).log_marginal;
}

MtExactPosterior exact_posteriors(const MultiTaskData& data, const MultiTaskParams& params) {
  const unsigned K = data.K();
  const unsigned L = data.L();
  arma::uword max_n = 0;
  for (const auto& t : data.tasks) max_n = std::max(max_n, t.n());
  check_enumerable(K + K * L, max_n);

  std::vector<arma::vec> resid(L);
  for (unsigned j = 0; j < L; ++j) {
    const Task& t = data.tasks[j];
    resid[j] = t.y;
    if (t.Z.n_cols > 0) resid[j] -= t.Z * params.omega[j];
  }
  // per-task cache keyed by the task's active feature mask
  struct ActiveTerm {
    double log_lik;
    arma::vec mean;
    arma::uvec cols;
  };
  std::vector<std::unordered_map<unsigned, ActiveTerm>> cache(L);
  auto term_for = [&](unsigned j, unsigned mask) -> const ActiveTerm& {
    auto it = cache[j].find(mask);
    if (it != cache[j].end()) return it->second;
    std::vector<arma::uword> cols;
    for (unsigned k = 0; k < K; ++k) {
      if (mask >> k & 1u) cols.push_back(k);
    }
    ActiveTerm t;
    t.cols = arma::uvec(cols);
    t.log_lik = gaussian_log_marginal(resid[j], data.tasks[j].X, t.cols, params.sigma_e2(j),
                                      params.sigma_beta2(j), &t.mean);
    return cache[j].emplace(mask, std::move(t)).first->second;
  };

  const double ninf = -std::numeric_limits<double>::infinity();
  double total = ninf;
  arma::vec log_pi(K, arma::fill::value(ninf));
  arma::mat log_alpha(K, L, arma::fill::value(ninf));
  struct Config {
    double lw;
    std::vector<unsigned> masks;
  };
  std::vector<Config> configs;

  const unsigned gamma_bits = K * L;  // bit (j * K + k) is gamma_jk
  for (unsigned eta = 0; eta < (1u << K); ++eta) {
    double lp_eta = 0.0;
    for (unsigned k = 0; k < K; ++k) lp_eta += bernoulli_log(eta >> k & 1u, params.pi);
    for (unsigned gamma = 0; gamma < (1u << gamma_bits); ++gamma) {
      double lw = lp_eta;
      Config c;
      c.masks.assign(L, 0u);
      for (unsigned j = 0; j < L; ++j) {
        for (unsigned k = 0; k < K; ++k) {
          const bool g = gamma >> (j * K + k) & 1u;
          lw += bernoulli_log(g, params.alpha);
          if (g && (eta >> k & 1u)) c.masks[j] |= 1u << k;
        }
      }
      for (unsigned j = 0; j < L; ++j) lw += term_for(j, c.masks[j]).log_lik;
      total = log_add(total, lw);
      for (unsigned k = 0; k < K; ++k) {
        if (eta >> k & 1u) log_pi(k) = log_add(log_pi(k), lw);
      }
      for (unsigned j = 0; j < L; ++j) {
        for (unsigned k = 0; k < K; ++k) {
          if (gamma >> (j * K + k) & 1u) log_alpha(k, j) = log_add(log_alpha(k, j), lw);
        }
      }
      c.lw = lw;
      configs.push_back(std::move(c));
    }
  }

  MtExactPosterior out;
  out.log_marginal = total;
  out.pi = arma::exp(log_pi - total);
  out.alpha = arma::exp(log_alpha - total);
  out.effect.zeros(K, L);
  for (const auto& c : configs) {
    const double w = std::exp(c.lw - total);
    for (unsigned j = 0; j < L; ++j) {
      const ActiveTerm& t = term_for(j, c.masks[j]);
      for (arma::uword i = 0; i < t.cols.n_elem; ++i) out.effect(t.cols(i), j) += w * t.mean(i);
    }
  }
  return out;
}

double exact_log_marginal(const MultiTaskData& data, const MultiTaskParams& params) {
  return exact_posteriors(data, params).log_marginal;
}

}  // namespace bivas
