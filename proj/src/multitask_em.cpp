#include "bivas/multitask_em.hpp"

#include <cmath>
#include <numbers>

namespace bivas {

MultiTaskParams mt_initial_params(const MultiTaskData& data, double pi, double alpha0) {
  const arma::uword L = data.L();
  MultiTaskParams params;
  params.alpha = alpha0;
  params.pi = pi;
  params.sigma_beta2.set_size(L);
  params.sigma_e2.set_size(L);
  params.omega.resize(L);
  for (arma::uword j = 0; j < L; ++j) {
    const Task& t = data.tasks[j];
    params.omega[j] = gram_solve(t.ztz_chol, t.Z, t.y);
    arma::vec res = t.y;
    if (t.Z.n_cols > 0) res -= t.Z * params.omega[j];
    const double se2 = t.n() > 1 ? arma::var(res) : 1.0;
    const double total_xtx = arma::accu(t.xtx);
    params.sigma_e2(j) = se2;
    params.sigma_beta2(j) =
        total_xtx > 0.0 ? se2 * static_cast<double>(t.n()) / (pi * alpha0 * total_xtx) : se2;
  }
  params.sanitize();
  return params;
}

void mt_refresh_residuals(MtVariationalState& state, const MultiTaskData& data,
                          const MultiTaskParams& params) {
  state.residuals.resize(data.L());
  for (arma::uword j = 0; j < data.L(); ++j) {
    const Task& t = data.tasks[j];
    arma::vec effect = state.pi_k % state.alpha_jk.col(j) % state.mu.col(j);
    state.residuals[j] = t.y - t.X * effect;
    if (t.Z.n_cols > 0) state.residuals[j] -= t.Z * params.omega[j];
  }
}

MtVariationalState mt_initial_state(const MultiTaskData& data, const MultiTaskParams& params) {
  const arma::uword K = data.K();
  const arma::uword L = data.L();
  MtVariationalState state;
  state.mu.zeros(K, L);
  state.alpha_jk.set_size(K, L);
  state.alpha_jk.fill(params.alpha);
  state.pi_k.set_size(K);
  state.pi_k.fill(params.pi);
  state.s2.set_size(K, L);
  for (arma::uword j = 0; j < L; ++j) {
    const double se2 = params.sigma_e2(j);
    state.s2.col(j) = se2 / (data.tasks[j].xtx + se2 / params.sigma_beta2(j));
  }
  mt_refresh_residuals(state, data, params);
  return state;
}

void mt_estep_sweep(MtVariationalState& state, const MultiTaskData& data,
                    const MultiTaskParams& params) {
  const double logit_alpha = logit(params.alpha);
  const double logit_pi = logit(params.pi);
  for (arma::uword k = 0; k < data.K(); ++k) {
    const double pk = state.pi_k(k);
    double u = logit_pi;
    for (arma::uword j = 0; j < data.L(); ++j) {
      const Task& t = data.tasks[j];
      const double se2 = params.sigma_e2(j);
      const double sb2 = params.sigma_beta2(j);
      const double ratio = se2 / sb2;
      const auto x = t.X.col(k);
      const double xtx = t.xtx(k);
      arma::vec& r = state.residuals[j];

      const double c_old = state.alpha_jk(k, j) * state.mu(k, j);
      double numer = arma::dot(x, r) + c_old * xtx;
      numer += (pk - 1.0) * c_old * xtx;
      const double s2 = se2 / (xtx + ratio);
      const double mu = numer / (xtx + ratio);
      const double gain = std::log(s2 / sb2) + mu * mu / s2;
      const double a = clamp_prob(sigmoid(logit_alpha + 0.5 * pk * gain));

      state.s2(k, j) = s2;
      state.mu(k, j) = mu;
      state.alpha_jk(k, j) = a;
      const double delta = a * mu - c_old;
      if (delta != 0.0) r -= (pk * delta) * x;
      u += 0.5 * a * gain;
    }
    const double pk_new = clamp_prob(sigmoid(u));
    if (pk_new != pk) {
      for (arma::uword j = 0; j < data.L(); ++j) {
        const double c = state.alpha_jk(k, j) * state.mu(k, j);
        if (c != 0.0) state.residuals[j] -= ((pk_new - pk) * c) * data.tasks[j].X.col(k);
      }
    }
    state.pi_k(k) = pk_new;
  }
}

namespace {

double mt_elbo_cached(const MtVariationalState& state, const MultiTaskData& data,
                      const MultiTaskParams& params) {
  const double log_a = std::log(params.alpha);
  const double log_1a = std::log1p(-params.alpha);
  double bound = 0.0;
  for (arma::uword j = 0; j < data.L(); ++j) {
    const Task& t = data.tasks[j];
    const double se2 = params.sigma_e2(j);
    const double sb2 = params.sigma_beta2(j);
    double var_term = 0.0;
    for (arma::uword k = 0; k < data.K(); ++k) {
      const double a = state.pi_k(k) * state.alpha_jk(k, j);
      const double mu = state.mu(k, j);
      const double s2 = state.s2(k, j);
      var_term += (a * (s2 + mu * mu) - a * a * mu * mu) * t.xtx(k);
      bound += 0.5 * a * (1.0 + std::log(s2 / sb2) - (s2 + mu * mu) / sb2);
      const double aj = state.alpha_jk(k, j);
      bound += aj * log_a - xlogx(aj) + (1.0 - aj) * log_1a - xlogx(1.0 - aj);
    }
    const arma::vec& r = state.residuals[j];
    bound += -0.5 * static_cast<double>(t.n()) * std::log(2.0 * std::numbers::pi * se2) -
             (arma::dot(r, r) + var_term) / (2.0 * se2);
  }
  for (arma::uword k = 0; k < data.K(); ++k) {
    const double pk = state.pi_k(k);
    bound += pk * std::log(params.pi) - xlogx(pk) + (1.0 - pk) * std::log1p(-params.pi) -
             xlogx(1.0 - pk);
  }
  return bound;
}

}  // namespace

double mt_elbo(const MtVariationalState& state, const MultiTaskData& data,
               const MultiTaskParams& params) {
  MtVariationalState fresh = state;
  mt_refresh_residuals(fresh, data, params);
  return mt_elbo_cached(fresh, data, params);
}

MultiTaskParams mt_mstep_update(const MtVariationalState& state, const MultiTaskData& data,
                                const MultiTaskParams& params, const EmOptions& opts) {
  MultiTaskParams next = params;
  for (arma::uword j = 0; j < data.L(); ++j) {
    const Task& t = data.tasks[j];
    const arma::vec a = state.pi_k % state.alpha_jk.col(j);
    const arma::vec m2 = state.s2.col(j) + arma::square(state.mu.col(j));
    const arma::vec effect = a % state.mu.col(j);
    const double var_term =
        arma::dot((a % m2 - arma::square(effect)), t.xtx);

    const arma::vec target = t.y - t.X * effect;
    next.omega[j] = gram_solve(t.ztz_chol, t.Z, target);
    if (!next.omega[j].is_finite()) {
      throw Error(ErrorCode::RankDeficientZ,
                  "solve with Z'Z failed in M-step for task " + std::to_string(j));
    }
    arma::vec res = target;
    if (t.Z.n_cols > 0) res -= t.Z * next.omega[j];
    next.sigma_e2(j) = (arma::dot(res, res) + var_term) / static_cast<double>(t.n());
    const double weight = arma::accu(a);
    if (weight > 0.0) next.sigma_beta2(j) = arma::dot(a, m2) / weight;
  }
  // alpha averages all K * L variable-level inclusion probabilities
  if (!opts.fix_alpha && state.alpha_jk.n_elem > 0) next.alpha = arma::mean(arma::vectorise(state.alpha_jk));
  if (!opts.fix_pi && data.K() > 0) next.pi = arma::mean(state.pi_k);
  next.sanitize();
  return next;
}

MtEmResult mt_em_fit(const MultiTaskData& data, const MultiTaskParams& init,
                     const EmOptions& opts) {
  opts.validate();
  MtEmResult out;
  out.params = init;
  out.params.sanitize();
  if (out.params.sigma_e2.n_elem != data.L() || out.params.sigma_beta2.n_elem != data.L() ||
      out.params.omega.size() != data.L()) {
    throw Error(ErrorCode::DimensionMismatch, "initial parameters do not match task count");
  }
  out.state = mt_initial_state(data, out.params);

  double previous = 0.0;
  for (int it = 1; it <= opts.max_iter; ++it) {
    for (int s = 0; s < opts.estep_sweeps; ++s) mt_estep_sweep(out.state, data, out.params);
    out.params = mt_mstep_update(out.state, data, out.params, opts);
    mt_refresh_residuals(out.state, data, out.params);

    const double bound = mt_elbo_cached(out.state, data, out.params);
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

}  // namespace bivas
