#pragma once

// Synthetic data: AR(1)-correlated Gaussian predictors, bi-level sparse
// coefficients and noise calibrated to a target signal-to-noise ratio.

#include "bivas/model.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace bivas {

struct SimConfig {
  arma::uword n = 500;
  arma::uword p = 1000;  // group model: predictors; multi-task: features K
  arma::uword K = 50;
  std::vector<arma::uword> group_sizes;  // empty: equal sizes p / K
  double rho = 0.0;
  double pi_true = 0.1;
  double alpha_true = 0.4;
  double snr = 2.0;
  std::uint64_t seed = 1;
  std::vector<arma::uword> task_sizes;  // multi-task n_j

  void validate() const;
  std::vector<arma::uword> resolved_group_sizes() const;
};

struct Truth {
  arma::uvec eta;    // K
  arma::uvec gamma;  // p
  arma::vec beta;    // p, slab draws
  arma::vec coef;    // p, eta * gamma * beta
  std::vector<arma::uword> group_of;
  double sigma_e2 = 1.0;
};

struct MtTruth {
  arma::uvec eta;    // K
  arma::umat gamma;  // K x L
  arma::mat beta;    // K x L
  arma::mat coef;    // K x L
  arma::vec sigma_e2;  // L
};

// Independent random streams for design, coefficients and noise.
enum class SimStream : std::uint64_t { Design = 1, Coefficients = 2, Noise = 3 };
std::mt19937_64 sim_engine(std::uint64_t seed, SimStream stream, std::uint64_t sub = 0);

// n x p matrix with rows N(0, Sigma), Sigma_jj' = rho^|j - j'|.
arma::mat gen_ar_design(arma::uword n, arma::uword p, double rho, std::mt19937_64& rng);

Truth gen_coefficients(const SimConfig& cfg);

struct Response {
  arma::vec y;
  double sigma_e2 = 1.0;
};

// sigma_e2 = var(X coef) / snr (1 when the signal is identically zero).
Response gen_response(const arma::mat& X, const arma::vec& coef, double snr,
                      std::mt19937_64& rng);

struct SimDataset {
  GroupedDesign design;
  Truth truth;
};

struct MtSimDataset {
  MultiTaskData data;
  MtTruth truth;
};

// X part of the design; Z is the intercept column.
arma::mat gen_design(const SimConfig& cfg);

SimDataset simulate_group(const SimConfig& cfg);
MtSimDataset gen_multitask(const SimConfig& cfg);

}  // namespace bivas
