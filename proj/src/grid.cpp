#include "bivas/grid.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace bivas {

PiGrid make_pi_grid(std::size_t K, int h) {
  if (h < 1 || h > 1000) {
    throw Error(ErrorCode::InvalidCount, "grid size must be in [1, 1000], got " + std::to_string(h));
  }
  if (K < 1) throw Error(ErrorCode::InvalidCount, "need at least one group");
  PiGrid grid;
  // K = 1 collapses the interval to the single point log-odds 0
  if (h == 1 || K == 1) {
    grid.values.push_back(0.5);
    return grid;
  }
  const double lower = -std::log10(static_cast<double>(K));
  grid.values.reserve(h);
  for (int i = 0; i < h; ++i) {
    const double log_odds =
        i == h - 1 ? 0.0 : lower + (-lower) * static_cast<double>(i) / (h - 1);
    const double odds = std::pow(10.0, log_odds);
    grid.values.push_back(i == 0 ? 1.0 / (static_cast<double>(K) + 1.0) : odds / (1.0 + odds));
  }
  return grid;
}

void parallel_claim(std::size_t count, int threads,
                    const std::function<void(std::size_t)>& task) {
  if (threads < 1) throw Error(ErrorCode::InvalidArgument, "threads must be >= 1");
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t pool = std::min<std::size_t>(threads, std::max<std::size_t>(count, 1));
  if (pool <= 1) {
    worker();
  } else {
    std::vector<std::jthread> workers;
    workers.reserve(pool);
    for (std::size_t t = 0; t < pool; ++t) workers.emplace_back(worker);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

arma::vec normalize_weights(const arma::vec& elbos) {
  if (elbos.is_empty()) return arma::vec();
  if (!elbos.is_finite()) throw Error(ErrorCode::NaNPresent, "non-finite lower bound in grid");
  arma::vec w = arma::exp(elbos - elbos.max());
  return w / arma::accu(w);
}

namespace {

template <class Result, class Fit>
BasicGridFit<Result> run_grid_impl(const PiGrid& grid, int threads, std::uint64_t seed,
                                   Fit&& fit_one) {
  BasicGridFit<Result> out;
  const std::size_t h = grid.values.size();
  out.pi_values = grid.values;
  out.runs.resize(h);
  out.seeds.resize(h);
  for (std::size_t i = 0; i < h; ++i) out.seeds[i] = derive_seed(seed, i);
  parallel_claim(h, threads, [&](std::size_t i) {
    try {
      out.runs[i] = fit_one(grid.values[i]);
    } catch (const Error& e) {
      throw Error(e.code(), "grid point " + std::to_string(i) + " (pi = " +
                                std::to_string(grid.values[i]) + "): " + e.what());
    }
  });
  out.weights = normalize_weights(out.elbos());
  return out;
}

}  // namespace

GridFit run_grid(const GroupedDesign& data, const PiGrid& grid, EmOptions opts, int threads,
                 std::uint64_t seed) {
  opts.fix_pi = true;
  opts.validate();
  return run_grid_impl<EmResult>(grid, threads, seed, [&](double pi) {
    return em_fit(data, initial_params(data, pi), opts);
  });
}

MtGridFit run_grid(const MultiTaskData& data, const PiGrid& grid, EmOptions opts, int threads,
                   std::uint64_t seed) {
  opts.fix_pi = true;
  opts.validate();
  return run_grid_impl<MtEmResult>(grid, threads, seed, [&](double pi) {
    return mt_em_fit(data, mt_initial_params(data, pi), opts);
  });
}

PosteriorSummary aggregate(const GridFit& fit, const std::vector<arma::uword>& group_of) {
  if (fit.runs.empty()) throw Error(ErrorCode::InvalidCount, "empty grid fit");
  if (fit.weights.n_elem != fit.runs.size()) {
    throw Error(ErrorCode::DimensionMismatch, "weights do not match grid runs");
  }
  const auto& first = fit.runs.front();
  PosteriorSummary s;
  s.group_of = group_of;
  s.pi_tilde.zeros(first.state.pi_k.n_elem);
  s.alpha_tilde.zeros(first.state.alpha_jk.n_elem);
  s.mu_tilde.zeros(first.state.mu.n_elem);
  s.params.alpha = s.params.pi = s.params.sigma_beta2 = s.params.sigma_e2 = 0.0;
  s.params.omega.zeros(first.params.omega.n_elem);
  for (std::size_t i = 0; i < fit.runs.size(); ++i) {
    const double w = fit.weights(i);
    const auto& run = fit.runs[i];
    s.pi_tilde += w * run.state.pi_k;
    s.alpha_tilde += w * run.state.alpha_jk;
    s.mu_tilde += w * run.state.mu;
    s.params.alpha += w * run.params.alpha;
    s.params.pi += w * run.params.pi;
    s.params.sigma_beta2 += w * run.params.sigma_beta2;
    s.params.sigma_e2 += w * run.params.sigma_e2;
    s.params.omega += w * run.params.omega;
  }
  if (fit.runs.size() == 1) {
    // keep the single run verbatim (w = 1 exactly, but skip the 0 + x rounding path)
    const auto& run = fit.runs.front();
    s.pi_tilde = run.state.pi_k;
    s.alpha_tilde = run.state.alpha_jk;
    s.mu_tilde = run.state.mu;
    s.params = run.params;
  }
  s.effect.set_size(s.mu_tilde.n_elem);
  for (arma::uword j = 0; j < s.effect.n_elem; ++j) {
    s.effect(j) = s.pi_tilde(group_of[j]) * s.alpha_tilde(j) * s.mu_tilde(j);
  }
  s.group_fdr = 1.0 - s.pi_tilde;
  s.var_fdr = 1.0 - s.alpha_tilde;
  return s;
}

PosteriorSummary aggregate(const GridFit& fit, const GroupedDesign& data) {
  return aggregate(fit, data.group_of);
}

MtPosteriorSummary aggregate(const MtGridFit& fit) {
  if (fit.runs.empty()) throw Error(ErrorCode::InvalidCount, "empty grid fit");
  if (fit.weights.n_elem != fit.runs.size()) {
    throw Error(ErrorCode::DimensionMismatch, "weights do not match grid runs");
  }
  const auto& first = fit.runs.front();
  const arma::uword L = first.params.sigma_e2.n_elem;
  MtPosteriorSummary s;
  s.pi_tilde.zeros(first.state.pi_k.n_elem);
  s.alpha_tilde.zeros(arma::size(first.state.alpha_jk));
  s.mu_tilde.zeros(arma::size(first.state.mu));
  s.params.alpha = s.params.pi = 0.0;
  s.params.sigma_beta2.zeros(L);
  s.params.sigma_e2.zeros(L);
  s.params.omega.resize(L);
  for (arma::uword j = 0; j < L; ++j) s.params.omega[j].zeros(first.params.omega[j].n_elem);
  for (std::size_t i = 0; i < fit.runs.size(); ++i) {
    const double w = fit.weights(i);
    const auto& run = fit.runs[i];
    s.pi_tilde += w * run.state.pi_k;
    s.alpha_tilde += w * run.state.alpha_jk;
    s.mu_tilde += w * run.state.mu;
    s.params.alpha += w * run.params.alpha;
    s.params.pi += w * run.params.pi;
    s.params.sigma_beta2 += w * run.params.sigma_beta2;
    s.params.sigma_e2 += w * run.params.sigma_e2;
    for (arma::uword j = 0; j < L; ++j) s.params.omega[j] += w * run.params.omega[j];
  }
  if (fit.runs.size() == 1) {
    const auto& run = fit.runs.front();
    s.pi_tilde = run.state.pi_k;
    s.alpha_tilde = run.state.alpha_jk;
    s.mu_tilde = run.state.mu;
    s.params = run.params;
  }
  s.effect = s.alpha_tilde % s.mu_tilde;
  s.effect.each_col() %= s.pi_tilde;
  s.group_fdr = 1.0 - s.pi_tilde;
  s.var_fdr = 1.0 - s.alpha_tilde;
  return s;
}

std::vector<arma::uword> below_threshold(const arma::vec& fdr, double threshold) {
  std::vector<arma::uword> out;
  for (arma::uword i = 0; i < fdr.n_elem; ++i) {
    if (fdr(i) < threshold) out.push_back(i);
  }
  return out;
}

namespace {
void check_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(ErrorCode::InvalidThreshold, "fdr threshold must lie in (0, 1)");
  }
}
}  // namespace

SelectionReport select(const PosteriorSummary& summary, double threshold) {
  check_threshold(threshold);
  SelectionReport report;
  report.threshold = threshold;
  report.group_fdr = summary.group_fdr;
  report.var_fdr = summary.var_fdr;
  report.groups = below_threshold(summary.group_fdr, threshold);
  report.variables = below_threshold(summary.var_fdr, threshold);
  return report;
}

MtSelectionReport select(const MtPosteriorSummary& summary, double threshold) {
  check_threshold(threshold);
  MtSelectionReport report;
  report.threshold = threshold;
  report.group_fdr = summary.group_fdr;
  report.var_fdr = summary.var_fdr;
  report.groups = below_threshold(summary.group_fdr, threshold);
  for (arma::uword k = 0; k < summary.var_fdr.n_rows; ++k) {
    for (arma::uword j = 0; j < summary.var_fdr.n_cols; ++j) {
      if (summary.var_fdr(k, j) < threshold) report.variables.emplace_back(k, j);
    }
  }
  return report;
}

arma::vec predict(const PosteriorSummary& summary, const arma::mat& Z, const arma::mat& X) {
  if (X.n_cols != summary.effect.n_elem || Z.n_cols != summary.params.omega.n_elem ||
      X.n_rows != Z.n_rows) {
    throw Error(ErrorCode::DimensionMismatch,
                "new design does not match the fitted model dimensions");
  }
  arma::vec out = X * summary.effect;
  if (Z.n_cols > 0) out += Z * summary.params.omega;
  return out;
}

std::vector<arma::vec> predict(const MtPosteriorSummary& summary, const std::vector<arma::mat>& Z,
                               const std::vector<arma::mat>& X) {
  const arma::uword L = summary.effect.n_cols;
  if (Z.size() != L || X.size() != L) {
    throw Error(ErrorCode::DimensionMismatch, "need one new design per task");
  }
  std::vector<arma::vec> out(L);
  for (arma::uword j = 0; j < L; ++j) {
    if (X[j].n_cols != summary.effect.n_rows || Z[j].n_cols != summary.params.omega[j].n_elem ||
        X[j].n_rows != Z[j].n_rows) {
      throw Error(ErrorCode::DimensionMismatch,
                  "new design for task " + std::to_string(j) + " does not match the fit");
    }
    out[j] = X[j] * summary.effect.col(j);
    if (Z[j].n_cols > 0) out[j] += Z[j] * summary.params.omega[j];
  }
  return out;
}

}  // namespace bivas
