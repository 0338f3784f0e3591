#pragma once

// Importance-sampling ensemble over the group-sparsity hyperparameter pi:
// one EM run per grid value, weights from the lower bounds, weighted
// posterior summaries, fdr-based selection and prediction.

#include "bivas/group_em.hpp"
#include "bivas/multitask_em.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace bivas {

struct PiGrid {
  std::vector<double> values;  // strictly increasing in (0, 0.5]
  int h() const { return static_cast<int>(values.size()); }
};

// log10-odds equally spaced on [-log10(K), 0].
PiGrid make_pi_grid(std::size_t K, int h);

// Runs task(i) for i in [0, count) on `threads` workers. Each idle worker
// claims the next unstarted index from a shared counter. If any task throws,
// the exception of the lowest failing index is rethrown after all workers join.
void parallel_claim(std::size_t count, int threads,
                    const std::function<void(std::size_t)>& task);

// splitmix64 of (master, index); independent of claim order.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

template <class Result>
struct BasicGridFit {
  std::vector<double> pi_values;
  std::vector<Result> runs;
  std::vector<std::uint64_t> seeds;
  arma::vec weights;  // normalized, sums to 1

  arma::vec elbos() const {
    arma::vec out(runs.size());
    for (std::size_t i = 0; i < runs.size(); ++i) out(i) = runs[i].elbo;
    return out;
  }
};

using GridFit = BasicGridFit<EmResult>;
using MtGridFit = BasicGridFit<MtEmResult>;

// exp(elbo_i - max) / sum.
arma::vec normalize_weights(const arma::vec& elbos);

GridFit run_grid(const GroupedDesign& data, const PiGrid& grid, EmOptions opts,
                 int threads, std::uint64_t seed);
MtGridFit run_grid(const MultiTaskData& data, const PiGrid& grid, EmOptions opts,
                   int threads, std::uint64_t seed);

struct PosteriorSummary {
  arma::vec pi_tilde;     // K
  arma::vec alpha_tilde;  // p
  arma::vec mu_tilde;     // p
  arma::vec effect;       // p, pi_tilde[group] * alpha_tilde * mu_tilde
  arma::vec group_fdr;    // 1 - pi_tilde
  arma::vec var_fdr;      // 1 - alpha_tilde
  std::vector<arma::uword> group_of;
  ModelParams params;     // weighted parameters
};

struct MtPosteriorSummary {
  arma::vec pi_tilde;     // K
  arma::mat alpha_tilde;  // K x L
  arma::mat mu_tilde;     // K x L
  arma::mat effect;       // K x L
  arma::vec group_fdr;
  arma::mat var_fdr;
  MultiTaskParams params;
};

PosteriorSummary aggregate(const GridFit& fit, const GroupedDesign& data);
PosteriorSummary aggregate(const GridFit& fit, const std::vector<arma::uword>& group_of);
MtPosteriorSummary aggregate(const MtGridFit& fit);

struct SelectionReport {
  double threshold = 0.05;
  std::vector<arma::uword> groups;
  std::vector<arma::uword> variables;
  arma::vec group_fdr;
  arma::vec var_fdr;
};

struct MtSelectionReport {
  double threshold = 0.05;
  std::vector<arma::uword> groups;
  std::vector<std::pair<arma::uword, arma::uword>> variables;  // (feature k, task j)
  arma::vec group_fdr;
  arma::mat var_fdr;
};

// Indices whose fdr is strictly below the threshold.
std::vector<arma::uword> below_threshold(const arma::vec& fdr, double threshold);

SelectionReport select(const PosteriorSummary& summary, double threshold);
MtSelectionReport select(const MtPosteriorSummary& summary, double threshold);

// Z omega + X effect, on already-transformed predictors.
arma::vec predict(const PosteriorSummary& summary, const arma::mat& Z, const arma::mat& X);
std::vector<arma::vec> predict(const MtPosteriorSummary& summary,
                               const std::vector<arma::mat>& Z,
                               const std::vector<arma::mat>& X);

}  // namespace bivas
