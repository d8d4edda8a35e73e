#include "dpmix/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dpmix/kernels.hpp"

namespace dpmix {

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auroc: size mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  // Sum of (1-based, tie-averaged) ranks of the positives.
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] > 0) {
        rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auroc: both classes must be present");
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

std::vector<double> linear_scores(const Dataset& ds, std::span<const double> x) {
  std::vector<double> s(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) s[i] = simd::dot(ds.row(i), x);
  return s;
}

Vector network_mean(std::span<const Vector> iterates) {
  if (iterates.empty()) return {};
  Vector mean(iterates.front().size(), 0.0);
  const double inv_m = 1.0 / static_cast<double>(iterates.size());
  for (const auto& v : iterates) simd::axpy(inv_m, v, mean);
  return mean;
}

double consensus_error(std::span<const Vector> iterates) {
  if (iterates.empty()) return 0.0;
  const Vector mean = network_mean(iterates);
  Vector diff(mean.size());
  double s = 0.0;
  for (const auto& v : iterates) {
    simd::axpby(1.0, v, -1.0, mean, diff);
    s += simd::sum_sq(diff);
  }
  return s;
}

void StationarityConfig::validate() const {
  if (inner_steps < 1) throw std::invalid_argument("stationarity: inner_steps must be >= 1");
  if (inner_eta && !(*inner_eta > 0.0)) {
    throw std::invalid_argument("stationarity: inner_eta must be positive");
  }
}

StationarityResult stationarity(const MinMaxProblem& problem, std::span<const double> x_bar,
                                std::span<const double> y_start, const StationarityConfig& cfg) {
  cfg.validate();
  StationarityResult out;
  Vector gx(problem.dim_x()), gy(problem.dim_y());

  if (auto y_exact = problem.best_response(x_bar)) {
    out.y_hat = std::move(*y_exact);
  } else {
    const double eta = cfg.inner_eta.value_or(1.0 / problem.meta().L);
    Vector y(y_start.begin(), y_start.end());
    if (problem.constrained_y()) problem.project_y(y);
    Vector next(y.size());
    for (std::size_t s = 0; s < cfg.inner_steps; ++s) {
      problem.global_gradients(x_bar, y, gx, gy);
      simd::axpby(1.0, y, eta, gy, next);
      if (problem.constrained_y()) problem.project_y(next);
      // gradient mapping (next - y) / eta; equals grad_y f when unconstrained
      double step2 = 0.0;
      for (std::size_t j = 0; j < y.size(); ++j) step2 += (next[j] - y[j]) * (next[j] - y[j]);
      y.swap(next);
      out.inner_steps = s + 1;
      if (std::sqrt(step2) / eta <= cfg.tol) break;
    }
    out.y_hat = std::move(y);
  }
  problem.global_gradients(x_bar, out.y_hat, gx, gy);
  out.grad_norm = std::sqrt(simd::sum_sq(gx));
  return out;
}

double stationarity_norm(const MinMaxProblem& problem, std::span<const double> x_bar,
                         std::span<const double> y_start, const StationarityConfig& cfg) {
  return stationarity(problem, x_bar, y_start, cfg).grad_norm;
}

}  // namespace dpmix
