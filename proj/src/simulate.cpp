#include "bivas/simulate.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace bivas {

void SimConfig::validate() const {
  if (!(rho > -1.0 && rho < 1.0)) throw Error(ErrorCode::InvalidArgument, "rho must lie in (-1, 1)");
  if (!(snr > 0.0)) throw Error(ErrorCode::InvalidArgument, "snr must be > 0");
  if (!(pi_true >= 0.0 && pi_true <= 1.0) || !(alpha_true >= 0.0 && alpha_true <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "sparsity pair must lie in [0, 1]");
  }
  if (K == 0) throw Error(ErrorCode::InvalidCount, "K must be >= 1");
  if (group_sizes.empty()) {
    if (p % K != 0) {
      throw Error(ErrorCode::InvalidArgument, "p must be divisible by K for equal groups");
    }
  } else {
    if (group_sizes.size() != K ||
        std::accumulate(group_sizes.begin(), group_sizes.end(), arma::uword{0}) != p) {
      throw Error(ErrorCode::DimensionMismatch, "group sizes must be K values summing to p");
    }
  }
}

std::vector<arma::uword> SimConfig::resolved_group_sizes() const {
  if (!group_sizes.empty()) return group_sizes;
  return std::vector<arma::uword>(K, p / K);
}

std::mt19937_64 sim_engine(std::uint64_t seed, SimStream stream, std::uint64_t sub) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(sub)};
  return std::mt19937_64(seq);
}

arma::mat gen_ar_design(arma::uword n, arma::uword p, double rho, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double innovation = std::sqrt(1.0 - rho * rho);
  arma::mat X(n, p);
  for (arma::uword i = 0; i < n; ++i) {
    double prev = 0.0;
    for (arma::uword j = 0; j < p; ++j) {
      const double e = normal(rng);
      prev = j == 0 ? e : rho * prev + innovation * e;
      X(i, j) = prev;
    }
  }
  return X;
}

arma::mat gen_design(const SimConfig& cfg) {
  cfg.validate();
  auto rng = sim_engine(cfg.seed, SimStream::Design);
  return gen_ar_design(cfg.n, cfg.p, cfg.rho, rng);
}

Truth gen_coefficients(const SimConfig& cfg) {
  cfg.validate();
  auto rng = sim_engine(cfg.seed, SimStream::Coefficients);
  std::bernoulli_distribution group_on(cfg.pi_true);
  std::bernoulli_distribution var_on(cfg.alpha_true);
  std::normal_distribution<double> slab(0.0, 1.0);

  const auto sizes = cfg.resolved_group_sizes();
  Truth t;
  t.eta.zeros(cfg.K);
  t.gamma.zeros(cfg.p);
  t.beta.zeros(cfg.p);
  t.coef.zeros(cfg.p);
  t.group_of.reserve(cfg.p);
  for (arma::uword k = 0; k < cfg.K; ++k) {
    t.eta(k) = group_on(rng) ? 1 : 0;
    for (arma::uword m = 0; m < sizes[k]; ++m) t.group_of.push_back(k);
  }
  for (arma::uword j = 0; j < cfg.p; ++j) {
    t.gamma(j) = var_on(rng) ? 1 : 0;
    t.beta(j) = slab(rng);
    t.coef(j) = static_cast<double>(t.eta(t.group_of[j]) * t.gamma(j)) * t.beta(j);
  }
  return t;
}

Response gen_response(const arma::mat& X, const arma::vec& coef, double snr,
                      std::mt19937_64& rng) {
  if (!(snr > 0.0)) throw Error(ErrorCode::InvalidArgument, "snr must be > 0");
  const arma::vec signal = X * coef;
  const double signal_var = signal.n_elem > 1 ? arma::var(signal) : 0.0;
  Response out;
  out.sigma_e2 = signal_var > 0.0 ? signal_var / snr : 1.0;
  std::normal_distribution<double> noise(0.0, std::sqrt(out.sigma_e2));
  out.y = signal;
  for (auto& v : out.y) v += noise(rng);
  return out;
}

SimDataset simulate_group(const SimConfig& cfg) {
  arma::mat X = gen_design(cfg);
  Truth truth = gen_coefficients(cfg);
  auto rng = sim_engine(cfg.seed, SimStream::Noise);
  Response resp = gen_response(X, truth.coef, cfg.snr, rng);
  truth.sigma_e2 = resp.sigma_e2;

  std::vector<std::string> labels;
  labels.reserve(cfg.p);
  for (arma::uword g : truth.group_of) labels.push_back(std::to_string(g));
  arma::mat Z(cfg.n, 1, arma::fill::ones);
  return SimDataset{make_design(std::move(resp.y), std::move(Z), std::move(X), labels),
                    std::move(truth)};
}

MtSimDataset gen_multitask(const SimConfig& cfg) {
  if (cfg.task_sizes.empty()) throw Error(ErrorCode::InvalidCount, "need task sizes");
  if (!(cfg.rho > -1.0 && cfg.rho < 1.0)) throw Error(ErrorCode::InvalidArgument, "rho must lie in (-1, 1)");
  if (!(cfg.snr > 0.0)) throw Error(ErrorCode::InvalidArgument, "snr must be > 0");
  const arma::uword K = cfg.K;
  const arma::uword L = cfg.task_sizes.size();

  auto coef_rng = sim_engine(cfg.seed, SimStream::Coefficients);
  std::bernoulli_distribution group_on(cfg.pi_true);
  std::bernoulli_distribution var_on(cfg.alpha_true);
  std::normal_distribution<double> slab(0.0, 1.0);

  MtTruth truth;
  truth.eta.zeros(K);
  truth.gamma.zeros(K, L);
  truth.beta.zeros(K, L);
  truth.coef.zeros(K, L);
  truth.sigma_e2.zeros(L);
  for (arma::uword k = 0; k < K; ++k) truth.eta(k) = group_on(coef_rng) ? 1 : 0;
  for (arma::uword k = 0; k < K; ++k) {
    for (arma::uword j = 0; j < L; ++j) {
      truth.gamma(k, j) = var_on(coef_rng) ? 1 : 0;
      truth.beta(k, j) = slab(coef_rng);
      truth.coef(k, j) = static_cast<double>(truth.eta(k) * truth.gamma(k, j)) * truth.beta(k, j);
    }
  }

  std::vector<Task> tasks;
  tasks.reserve(L);
  for (arma::uword j = 0; j < L; ++j) {
    auto design_rng = sim_engine(cfg.seed, SimStream::Design, j);
    arma::mat X = gen_ar_design(cfg.task_sizes[j], K, cfg.rho, design_rng);
    auto noise_rng = sim_engine(cfg.seed, SimStream::Noise, j);
    Response resp = gen_response(X, truth.coef.col(j), cfg.snr, noise_rng);
    truth.sigma_e2(j) = resp.sigma_e2;
    arma::mat Z(cfg.task_sizes[j], 1, arma::fill::ones);
    tasks.push_back(make_task(std::move(resp.y), std::move(Z), std::move(X)));
  }
  return MtSimDataset{make_multitask(std::move(tasks)), std::move(truth)};
}

}  // namespace bivas
