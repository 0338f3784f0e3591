#include "bivas/group_em.hpp"

#include <cmath>
#include <numbers>

namespace bivas {

void EmOptions::validate() const {
  if (max_iter < 1) throw Error(ErrorCode::InvalidArgument, "max_iter must be >= 1");
  if (!(rel_tol > 0.0)) throw Error(ErrorCode::InvalidArgument, "rel_tol must be > 0");
  if (estep_sweeps < 1) {
    throw Error(ErrorCode::InvalidArgument, "estep_sweeps must be >= 1");
  }
}

ModelParams initial_params(const GroupedDesign& data, double pi, double alpha0) {
  ModelParams params;
  params.omega = gram_solve(data.ztz_chol, data.Z, data.y);
  arma::vec res = data.y;
  if (data.r() > 0) res -= data.Z * params.omega;
  params.sigma_e2 = data.n() > 1 ? arma::var(res) : 1.0;
  params.alpha = alpha0;
  params.pi = pi;
  const double total_xtx = arma::accu(data.xtx);
  params.sigma_beta2 =
      total_xtx > 0.0
          ? params.sigma_e2 * static_cast<double>(data.n()) / (pi * alpha0 * total_xtx)
          : params.sigma_e2;
  params.sanitize();
  return params;
}

VariationalState initial_state(const GroupedDesign& data, const ModelParams& params) {
  VariationalState state;
  state.mu.zeros(data.p());
  state.alpha_jk.set_size(data.p());
  state.alpha_jk.fill(params.alpha);
  state.pi_k.set_size(data.K());
  state.pi_k.fill(params.pi);
  state.s2 = params.sigma_e2 / (data.xtx + params.sigma_e2 / params.sigma_beta2);
  refresh_residual(state, data, params);
  return state;
}

void estep_sweep(VariationalState& state, const GroupedDesign& data,
                 const ModelParams& params) {
  const double se2 = params.sigma_e2;
  const double sb2 = params.sigma_beta2;
  const double ratio = se2 / sb2;
  const double logit_alpha = logit(params.alpha);
  const double logit_pi = logit(params.pi);
  arma::vec& r = state.residual;

  for (arma::uword k = 0; k < data.K(); ++k) {
    const auto& members = data.members[k];
    auto g = state.group_fit.col(k);
    const double pk = state.pi_k(k);
    const bool singleton = members.size() == 1;

    for (arma::uword j : members) {
      const auto x = data.X.col(j);
      const double xtx = data.xtx(j);
      const double c_old = state.alpha_jk(j) * state.mu(j);
      // x'(y - Z w) - sum_{other groups} pi a mu x'x - sum_{own group, j' != j} a mu x'x
      double numer = arma::dot(x, r) + c_old * xtx;
      if (singleton) {
        numer += (pk - 1.0) * c_old * xtx;
      } else {
        numer += (pk - 1.0) * arma::dot(x, g);
      }
      const double s2 = se2 / (xtx + ratio);
      const double mu = numer / (xtx + ratio);
      const double v = logit_alpha + 0.5 * pk * (std::log(s2 / sb2) + mu * mu / s2);
      const double a = clamp_prob(sigmoid(v));

      state.s2(j) = s2;
      state.mu(j) = mu;
      state.alpha_jk(j) = a;
      const double delta = a * mu - c_old;
      if (delta != 0.0) {
        g += delta * x;
        r -= (pk * delta) * x;
      }
    }

    double u = logit_pi;
    if (singleton) {
      const arma::uword j = members.front();
      u += 0.5 * state.alpha_jk(j) *
           (std::log(state.s2(j) / sb2) + state.mu(j) * state.mu(j) / state.s2(j));
    } else {
      // Coefficient of pi_k in the bound; the bound is linear in pi_k.
      const arma::vec rest = r + pk * g;  // residual with group k removed
      double second = 0.0;
      double diag = 0.0;
      double prior = 0.0;
      for (arma::uword j : members) {
        const double a = state.alpha_jk(j);
        const double m = state.mu(j);
        const double s2 = state.s2(j);
        second += a * (s2 + m * m) * data.xtx(j);
        diag += a * a * m * m * data.xtx(j);
        prior += a * (0.5 * (1.0 + std::log(s2 / sb2)) - 0.5 * (s2 + m * m) / sb2);
      }
      const double cross = arma::dot(g, g) - diag;
      u += (arma::dot(g, rest) - 0.5 * second - 0.5 * cross) / se2 + prior;
    }
    const double pk_new = clamp_prob(sigmoid(u));
    if (pk_new != pk) r -= (pk_new - pk) * g;
    state.pi_k(k) = pk_new;
  }
}

namespace {

struct SecondMoments {
  double var_term = 0.0;    // sum Var[eta gamma beta] x'x
  double cross_term = 0.0;  // sum_k (pi_k - pi_k^2) sum_{j != j'} a mu a' mu' x'x'
  double weight = 0.0;      // sum pi_k alpha_jk
  double weighted_m2 = 0.0; // sum pi_k alpha_jk (s2 + mu2)
};

SecondMoments second_moments(const VariationalState& state, const GroupedDesign& data) {
  SecondMoments m;
  for (arma::uword k = 0; k < data.K(); ++k) {
    const double pk = state.pi_k(k);
    double diag = 0.0;
    for (arma::uword j : data.members[k]) {
      const double a = pk * state.alpha_jk(j);
      const double mu = state.mu(j);
      const double m2 = state.s2(j) + mu * mu;
      m.var_term += (a * m2 - a * a * mu * mu) * data.xtx(j);
      m.weight += a;
      m.weighted_m2 += a * m2;
      const double c = state.alpha_jk(j) * mu;
      diag += c * c * data.xtx(j);
    }
    if (data.group_size(k) > 1) {
      const auto g = state.group_fit.col(k);
      m.cross_term += (pk - pk * pk) * (arma::dot(g, g) - diag);
    }
  }
  return m;
}

}  // namespace

double elbo_group_cached(const VariationalState& state, const GroupedDesign& data,
                         const ModelParams& params) {
  const double n = static_cast<double>(data.n());
  const double se2 = params.sigma_e2;
  const double sb2 = params.sigma_beta2;
  const SecondMoments m = second_moments(state, data);

  double bound = -0.5 * n * std::log(2.0 * std::numbers::pi * se2) -
                 (arma::dot(state.residual, state.residual) + m.var_term + m.cross_term) /
                     (2.0 * se2);

  // Prior on beta plus the Gaussian entropies collapse to
  // -sum pi_k alpha_jk KL(N(mu, s2) || N(0, sb2)).
  const double log_a = std::log(params.alpha);
  const double log_1a = std::log1p(-params.alpha);
  for (arma::uword k = 0; k < data.K(); ++k) {
    const double pk = state.pi_k(k);
    for (arma::uword j : data.members[k]) {
      const double aj = state.alpha_jk(j);
      const double s2 = state.s2(j);
      const double mu = state.mu(j);
      bound += 0.5 * pk * aj * (1.0 + std::log(s2 / sb2) - (s2 + mu * mu) / sb2);
      bound += aj * log_a - xlogx(aj) + (1.0 - aj) * log_1a - xlogx(1.0 - aj);
    }
    bound += pk * std::log(params.pi) - xlogx(pk) + (1.0 - pk) * std::log1p(-params.pi) -
             xlogx(1.0 - pk);
  }
  return bound;
}

double elbo_group(const VariationalState& state, const GroupedDesign& data,
                  const ModelParams& params) {
  VariationalState fresh = state;
  refresh_residual(fresh, data, params);
  return elbo_group_cached(fresh, data, params);
}

ModelParams mstep_update(const VariationalState& state, const GroupedDesign& data,
                         const ModelParams& params, const EmOptions& opts) {
  ModelParams next = params;
  const SecondMoments m = second_moments(state, data);

  arma::vec signal(data.n(), arma::fill::zeros);
  for (arma::uword k = 0; k < data.K(); ++k) signal += state.pi_k(k) * state.group_fit.col(k);

  const arma::vec target = data.y - signal;
  next.omega = gram_solve(data.ztz_chol, data.Z, target);
  if (!next.omega.is_finite()) {
    throw Error(ErrorCode::RankDeficientZ, "solve with Z'Z failed in M-step");
  }
  arma::vec res = target;
  if (data.r() > 0) res -= data.Z * next.omega;

  next.sigma_e2 = (arma::dot(res, res) + m.var_term + m.cross_term) /
                  static_cast<double>(data.n());
  if (m.weight > 0.0) next.sigma_beta2 = m.weighted_m2 / m.weight;
  if (!opts.fix_alpha && data.p() > 0) next.alpha = arma::mean(state.alpha_jk);
  if (!opts.fix_pi && data.K() > 0) next.pi = arma::mean(state.pi_k);
  next.sanitize();
  return next;
}

EmResult em_fit(const GroupedDesign& data, const ModelParams& init, const EmOptions& opts) {
  opts.validate();
  EmResult out;
  out.params = init;
  out.params.sanitize();
  if (out.params.omega.n_elem != data.r()) {
    throw Error(ErrorCode::DimensionMismatch, "initial omega has wrong length");
  }
  out.state = initial_state(data, out.params);

  double previous = 0.0;
  for (int it = 1; it <= opts.max_iter; ++it) {
    for (int s = 0; s < opts.estep_sweeps; ++s) estep_sweep(out.state, data, out.params);
    refresh_residual(out.state, data, out.params);

    const arma::vec old_omega = out.params.omega;
    out.params = mstep_update(out.state, data, out.params, opts);
    if (data.r() > 0) out.state.residual -= data.Z * (out.params.omega - old_omega);

    const double bound = elbo_group_cached(out.state, data, out.params);
    if (opts.trace || out.elbo_trace.empty()) {
      out.elbo_trace.push_back(bound);
    } else {
      out.elbo_trace.back() = bound;
    }
    out.elbo = bound;
    out.iterations = it;
    if (it > 1 && std::abs(bound - previous) / (1.0 + std::abs(bound)) < opts.rel_tol) {
      out.converged = true;
      break;
    }
    previous = bound;
  }
  return out;
}

arma::vec fitted_values(const VariationalState& state, const GroupedDesign& data,
                        const ModelParams& params) {
  arma::vec effect(data.p());
  for (arma::uword j = 0; j < data.p(); ++j) {
    effect(j) = state.pi_k(data.group_of[j]) * state.alpha_jk(j) * state.mu(j);
  }
  arma::vec out = data.X * effect;
  if (data.r() > 0) out += data.Z * params.omega;
  return out;
}

}  // namespace bivas
