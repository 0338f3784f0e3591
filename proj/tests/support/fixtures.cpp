#include "support/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <numbers>

namespace fixtures {

using namespace bivas;

arma::vec normal_vec(Rng& rng, arma::uword n) {
  std::normal_distribution<double> z;
  arma::vec v(n);
  for (auto& x : v) x = z(rng);
  return v;
}

arma::mat normal_mat(Rng& rng, arma::uword n, arma::uword p) {
  std::normal_distribution<double> z;
  arma::mat m(n, p);
  for (auto& x : m) x = z(rng);
  return m;
}

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

arma::mat correlated_columns(Rng& rng, arma::uword n, arma::uword p, double rho) {
  arma::mat sigma(p, p);
  for (arma::uword a = 0; a < p; ++a) {
    for (arma::uword b = 0; b < p; ++b) sigma(a, b) = std::pow(rho, std::abs(double(a) - double(b)));
  }
  return normal_mat(rng, n, p) * arma::chol(sigma);
}

GroupedDesign random_design(Rng& rng, const GroupSpec& spec) {
  arma::uword p = 0;
  std::vector<std::string> labels;
  for (std::size_t k = 0; k < spec.sizes.size(); ++k) {
    for (arma::uword i = 0; i < spec.sizes[k]; ++i) labels.push_back("g" + std::to_string(k));
    p += spec.sizes[k];
  }
  arma::mat X = correlated_columns(rng, spec.n, p, spec.rho);
  arma::mat Z(spec.n, spec.covariates);
  if (spec.covariates > 0) {
    Z.col(0).ones();
    if (spec.covariates > 1) Z.cols(1, spec.covariates - 1) = normal_mat(rng, spec.n, spec.covariates - 1);
  }
  arma::vec beta = normal_vec(rng, p) * spec.signal;
  for (auto& b : beta) {
    if (uniform(rng, 0, 1) < 0.5) b = 0.0;
  }
  arma::vec y = X * beta + normal_vec(rng, spec.n);
  if (spec.covariates > 0) y += 0.7;
  return make_design(y, Z, X, labels);
}

ModelParams random_params(Rng& rng, const GroupedDesign& d) {
  ModelParams p;
  p.alpha = uniform(rng, 0.1, 0.9);
  p.pi = uniform(rng, 0.1, 0.9);
  p.sigma_e2 = uniform(rng, 0.5, 2.0);
  p.sigma_beta2 = uniform(rng, 0.3, 3.0);
  p.omega = normal_vec(rng, d.r()) * 0.5;
  return p;
}

VariationalState random_state(Rng& rng, const GroupedDesign& d, const ModelParams& params) {
  VariationalState s;
  s.mu = normal_vec(rng, d.p());
  s.s2.set_size(d.p());
  for (auto& v : s.s2) v = uniform(rng, 0.05, 1.0);
  s.alpha_jk.set_size(d.p());
  for (auto& v : s.alpha_jk) v = uniform(rng, 0.05, 0.95);
  s.pi_k.set_size(d.K());
  for (auto& v : s.pi_k) v = uniform(rng, 0.05, 0.95);
  refresh_residual(s, d, params);
  return s;
}

namespace {

double bernoulli_terms(double q, double prior) {
  double out = 0.0;
  if (q > 0.0) out += q * std::log(prior / q);
  if (q < 1.0) out += (1.0 - q) * std::log((1.0 - prior) / (1.0 - q));
  return out;
}

double gauss_kl(double mu, double s2, double sb2) {
  return 0.5 * (std::log(sb2 / s2) + (s2 + mu * mu) / sb2 - 1.0);
}

}  // namespace

double naive_elbo(const VariationalState& s, const GroupedDesign& d, const ModelParams& params) {
  const arma::uword p = d.p();
  arma::vec t = d.y;
  if (d.r() > 0) t -= d.Z * params.omega;
  const arma::mat G = d.X.t() * d.X;
  arma::vec mean(p);
  for (arma::uword j = 0; j < p; ++j) mean(j) = s.pi_k(d.group_of[j]) * s.alpha_jk(j) * s.mu(j);
  arma::mat second(p, p);
  for (arma::uword a = 0; a < p; ++a) {
    for (arma::uword b = 0; b < p; ++b) {
      const arma::uword ka = d.group_of[a], kb = d.group_of[b];
      if (a == b) {
        second(a, b) = s.pi_k(ka) * s.alpha_jk(a) * (s.s2(a) + s.mu(a) * s.mu(a));
      } else if (ka == kb) {
        second(a, b) = s.pi_k(ka) * s.alpha_jk(a) * s.alpha_jk(b) * s.mu(a) * s.mu(b);
      } else {
        second(a, b) = mean(a) * mean(b);
      }
    }
  }
  const double expected_sq =
      arma::dot(t, t) - 2.0 * arma::dot(t, d.X * mean) + arma::accu(G % second);
  double out = -0.5 * d.n() * std::log(2.0 * std::numbers::pi * params.sigma_e2) -
               expected_sq / (2.0 * params.sigma_e2);
  for (arma::uword j = 0; j < p; ++j) {
    out -= s.pi_k(d.group_of[j]) * s.alpha_jk(j) * gauss_kl(s.mu(j), s.s2(j), params.sigma_beta2);
    out += bernoulli_terms(s.alpha_jk(j), params.alpha);
  }
  for (arma::uword k = 0; k < d.K(); ++k) out += bernoulli_terms(s.pi_k(k), params.pi);
  return out;
}

double direct_numerator(const VariationalState& s, const GroupedDesign& d,
                        const ModelParams& params, arma::uword j) {
  arma::vec t = d.y;
  if (d.r() > 0) t -= d.Z * params.omega;
  const arma::uword k = d.group_of[j];
  double out = arma::dot(d.X.col(j), t);
  for (arma::uword b = 0; b < d.p(); ++b) {
    if (b == j) continue;
    const double w = d.group_of[b] == k ? 1.0 : s.pi_k(d.group_of[b]);
    out -= w * s.alpha_jk(b) * s.mu(b) * arma::dot(d.X.col(j), d.X.col(b));
  }
  return out;
}

VariationalState reference_sweep(VariationalState s, const GroupedDesign& d,
                                 const ModelParams& params) {
  const double se2 = params.sigma_e2, sb2 = params.sigma_beta2;
  auto drop_bernoulli_alpha = [&](VariationalState& st, arma::uword j) {
    return naive_elbo(st, d, params) - bernoulli_terms(st.alpha_jk(j), params.alpha);
  };
  for (arma::uword k = 0; k < d.K(); ++k) {
    for (arma::uword j : d.members[k]) {
      const double xtx = arma::dot(d.X.col(j), d.X.col(j));
      s.s2(j) = 1.0 / (xtx / se2 + 1.0 / sb2);
      s.mu(j) = s.s2(j) * direct_numerator(s, d, params, j) / se2;
      VariationalState on = s, off = s;
      on.alpha_jk(j) = 1.0;
      off.alpha_jk(j) = 0.0;
      const double coef = drop_bernoulli_alpha(on, j) - drop_bernoulli_alpha(off, j);
      s.alpha_jk(j) = clamp_prob(1.0 / (1.0 + std::exp(-(logit(params.alpha) + coef))));
    }
    VariationalState on = s, off = s;
    on.pi_k(k) = 1.0;
    off.pi_k(k) = 0.0;
    const double coef = (naive_elbo(on, d, params) - bernoulli_terms(1.0, params.pi)) -
                        (naive_elbo(off, d, params) - bernoulli_terms(0.0, params.pi));
    s.pi_k(k) = clamp_prob(1.0 / (1.0 + std::exp(-(logit(params.pi) + coef))));
  }
  refresh_residual(s, d, params);
  return s;
}

MultiTaskData random_multitask(Rng& rng, const MtSpec& spec) {
  std::vector<Task> tasks;
  arma::vec beta = normal_vec(rng, spec.K);
  for (arma::uword k = 0; k < spec.K; ++k) {
    if (uniform(rng, 0, 1) < 0.5) beta(k) = 0.0;
  }
  for (arma::uword n : spec.n) {
    arma::mat X = correlated_columns(rng, n, spec.K, spec.rho);
    arma::mat Z = arma::ones(n, 1);
    arma::vec y = X * (beta % (1.0 + 0.3 * normal_vec(rng, spec.K))) + normal_vec(rng, n) + 0.4;
    tasks.push_back(make_task(y, Z, X));
  }
  return make_multitask(std::move(tasks));
}

MultiTaskParams random_mt_params(Rng& rng, const MultiTaskData& d) {
  MultiTaskParams p;
  p.alpha = uniform(rng, 0.1, 0.9);
  p.pi = uniform(rng, 0.1, 0.9);
  p.sigma_e2.set_size(d.L());
  p.sigma_beta2.set_size(d.L());
  for (arma::uword j = 0; j < d.L(); ++j) {
    p.sigma_e2(j) = uniform(rng, 0.5, 2.0);
    p.sigma_beta2(j) = uniform(rng, 0.3, 3.0);
    p.omega.push_back(normal_vec(rng, d.tasks[j].Z.n_cols) * 0.5);
  }
  return p;
}

MtVariationalState random_mt_state(Rng& rng, const MultiTaskData& d, const MultiTaskParams& params) {
  MtVariationalState s;
  s.mu = normal_mat(rng, d.K(), d.L());
  s.s2.set_size(d.K(), d.L());
  for (auto& v : s.s2) v = uniform(rng, 0.05, 1.0);
  s.alpha_jk.set_size(d.K(), d.L());
  for (auto& v : s.alpha_jk) v = uniform(rng, 0.05, 0.95);
  s.pi_k.set_size(d.K());
  for (auto& v : s.pi_k) v = uniform(rng, 0.05, 0.95);
  mt_refresh_residuals(s, d, params);
  return s;
}

double naive_mt_elbo(const MtVariationalState& s, const MultiTaskData& d,
                     const MultiTaskParams& params) {
  const arma::uword K = d.K();
  double out = 0.0;
  for (arma::uword j = 0; j < d.L(); ++j) {
    const Task& t = d.tasks[j];
    arma::vec target = t.y;
    if (t.Z.n_cols > 0) target -= t.Z * params.omega[j];
    const arma::mat G = t.X.t() * t.X;
    arma::vec mean(K);
    for (arma::uword k = 0; k < K; ++k) mean(k) = s.pi_k(k) * s.alpha_jk(k, j) * s.mu(k, j);
    arma::mat second = mean * mean.t();
    for (arma::uword k = 0; k < K; ++k) {
      second(k, k) = s.pi_k(k) * s.alpha_jk(k, j) * (s.s2(k, j) + s.mu(k, j) * s.mu(k, j));
    }
    const double se2 = params.sigma_e2(j);
    const double expected_sq =
        arma::dot(target, target) - 2.0 * arma::dot(target, t.X * mean) + arma::accu(G % second);
    out += -0.5 * t.n() * std::log(2.0 * std::numbers::pi * se2) - expected_sq / (2.0 * se2);
    for (arma::uword k = 0; k < K; ++k) {
      out -= s.pi_k(k) * s.alpha_jk(k, j) * gauss_kl(s.mu(k, j), s.s2(k, j), params.sigma_beta2(j));
      out += bernoulli_terms(s.alpha_jk(k, j), params.alpha);
    }
  }
  for (arma::uword k = 0; k < K; ++k) out += bernoulli_terms(s.pi_k(k), params.pi);
  return out;
}

MtVariationalState reference_mt_sweep(MtVariationalState s, const MultiTaskData& d,
                                      const MultiTaskParams& params) {
  for (arma::uword k = 0; k < d.K(); ++k) {
    for (arma::uword j = 0; j < d.L(); ++j) {
      const Task& t = d.tasks[j];
      const double se2 = params.sigma_e2(j), sb2 = params.sigma_beta2(j);
      arma::vec target = t.y;
      if (t.Z.n_cols > 0) target -= t.Z * params.omega[j];
      double numer = arma::dot(t.X.col(k), target);
      for (arma::uword b = 0; b < d.K(); ++b) {
        if (b != k) numer -= s.pi_k(b) * s.alpha_jk(b, j) * s.mu(b, j) * arma::dot(t.X.col(k), t.X.col(b));
      }
      const double xtx = arma::dot(t.X.col(k), t.X.col(k));
      s.s2(k, j) = 1.0 / (xtx / se2 + 1.0 / sb2);
      s.mu(k, j) = s.s2(k, j) * numer / se2;
      MtVariationalState on = s, off = s;
      on.alpha_jk(k, j) = 1.0;
      off.alpha_jk(k, j) = 0.0;
      const double coef = (naive_mt_elbo(on, d, params) - bernoulli_terms(1.0, params.alpha)) -
                          (naive_mt_elbo(off, d, params) - bernoulli_terms(0.0, params.alpha));
      s.alpha_jk(k, j) = clamp_prob(1.0 / (1.0 + std::exp(-(logit(params.alpha) + coef))));
    }
    MtVariationalState on = s, off = s;
    on.pi_k(k) = 1.0;
    off.pi_k(k) = 0.0;
    const double coef = (naive_mt_elbo(on, d, params) - bernoulli_terms(1.0, params.pi)) -
                        (naive_mt_elbo(off, d, params) - bernoulli_terms(0.0, params.pi));
    s.pi_k(k) = clamp_prob(1.0 / (1.0 + std::exp(-(logit(params.pi) + coef))));
  }
  mt_refresh_residuals(s, d, params);
  return s;
}

GroupedDesign as_singleton_design(const Task& t) {
  std::vector<std::string> labels;
  for (arma::uword k = 0; k < t.X.n_cols; ++k) labels.push_back(std::to_string(k));
  return make_design(t.y, t.Z, t.X, labels);
}

ModelParams as_group_params(const MultiTaskParams& p) {
  ModelParams out;
  out.alpha = p.alpha;
  out.pi = p.pi;
  out.sigma_e2 = p.sigma_e2(0);
  out.sigma_beta2 = p.sigma_beta2(0);
  out.omega = p.omega[0];
  return out;
}

double quadrature_log_marginal(const GroupedDesign& d, const ModelParams& params, int points) {
  const arma::uword p = d.p();
  if (p != 2 || d.K() != 2) throw std::invalid_argument("quadrature path needs two singleton groups");
  arma::vec t = d.y;
  if (d.r() > 0) t -= d.Z * params.omega;
  const double n = static_cast<double>(d.n());
  const double se2 = params.sigma_e2, sb2 = params.sigma_beta2;
  const double tt = arma::dot(t, t);
  const arma::vec xt = d.X.t() * t;
  const arma::mat G = d.X.t() * d.X;
  const double log_norm0 = -0.5 * n * std::log(2.0 * std::numbers::pi * se2);
  auto loglik = [&](double b0, double b1) {
    const double q = tt - 2.0 * (b0 * xt(0) + b1 * xt(1)) + b0 * b0 * G(0, 0) +
                     2.0 * b0 * b1 * G(0, 1) + b1 * b1 * G(1, 1);
    return log_norm0 - q / (2.0 * se2);
  };
  auto log_prior = [&](double b) {
    return -0.5 * std::log(2.0 * std::numbers::pi * sb2) - b * b / (2.0 * sb2);
  };
  // Integration window around the conditional maximizer of each effect.
  auto window = [&](double xtx, double xtr) {
    const double prec = xtx / se2 + 1.0 / sb2;
    const double centre = (xtr / se2) / prec;
    const double half = 12.0 / std::sqrt(prec);
    return std::pair{centre - half, centre + half};
  };
  auto trapezoid_1d = [&](int which) {
    const auto [lo, hi] = window(G(which, which), xt(which));
    const double h = (hi - lo) / (points - 1);
    std::vector<double> logs(points);
    for (int i = 0; i < points; ++i) {
      const double b = lo + i * h;
      logs[i] = (which == 0 ? loglik(b, 0.0) : loglik(0.0, b)) + log_prior(b);
    }
    const double m = *std::max_element(logs.begin(), logs.end());
    double sum = 0.0;
    for (int i = 0; i < points; ++i) sum += (i == 0 || i == points - 1 ? 0.5 : 1.0) * std::exp(logs[i] - m);
    return m + std::log(sum * h);
  };
  auto trapezoid_2d = [&] {
    arma::mat prec = G / se2;
    prec.diag() += 1.0 / sb2;
    const arma::mat cov = arma::inv_sympd(prec);
    const arma::vec centre = cov * xt / se2;
    const double span0 = 24.0 * std::sqrt(cov(0, 0)), span1 = 24.0 * std::sqrt(cov(1, 1));
    const double a0 = centre(0) - span0 / 2.0, a1 = centre(1) - span1 / 2.0;
    const double h0 = span0 / (points - 1), h1 = span1 / (points - 1);
    std::vector<double> logs(static_cast<std::size_t>(points) * points);
    double m = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < points; ++i) {
      for (int k = 0; k < points; ++k) {
        const double b0 = a0 + i * h0, b1 = a1 + k * h1;
        const double v = loglik(b0, b1) + log_prior(b0) + log_prior(b1);
        logs[static_cast<std::size_t>(i) * points + k] = v;
        m = std::max(m, v);
      }
    }
    double sum = 0.0;
    for (int i = 0; i < points; ++i) {
      for (int k = 0; k < points; ++k) {
        const double w = (i == 0 || i == points - 1 ? 0.5 : 1.0) * (k == 0 || k == points - 1 ? 0.5 : 1.0);
        sum += w * std::exp(logs[static_cast<std::size_t>(i) * points + k] - m);
      }
    }
    return m + std::log(sum * h0 * h1);
  };

  const double empty = log_norm0 - tt / (2.0 * se2);
  const double only0 = trapezoid_1d(0);
  const double only1 = trapezoid_1d(1);
  const double both = trapezoid_2d();
  // Effect j is active iff eta_j gamma_j = 1, which has prior probability pi * alpha.
  const double on = params.pi * params.alpha;
  const double off = 1.0 - on;
  std::vector<double> terms = {std::log(off * off) + empty, std::log(on * off) + only0,
                               std::log(off * on) + only1, std::log(on * on) + both};
  const double m = *std::max_element(terms.begin(), terms.end());
  double sum = 0.0;
  for (double v : terms) sum += std::exp(v - m);
  return m + std::log(sum);
}

double max_abs_diff(const arma::mat& a, const arma::mat& b) {
  if (a.n_rows != b.n_rows || a.n_cols != b.n_cols) return std::numeric_limits<double>::infinity();
  if (a.is_empty()) return 0.0;
  return arma::abs(a - b).max();
}

double rel_diff(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

}  // namespace fixtures
