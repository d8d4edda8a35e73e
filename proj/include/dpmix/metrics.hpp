#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "dpmix/objective.hpp"

namespace dpmix {

/// Area under the ROC curve via the Mann-Whitney rank statistic, ties
/// counted as 1/2. Labels are +1 / -1. Throws std::invalid_argument if only
/// one class is present.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Scores a'x for every row of `ds`.
std::vector<double> linear_scores(const Dataset& ds, std::span<const double> x);

/// ||X - 1 xbar'||_F^2 for agent iterates stacked as rows.
double consensus_error(std::span<const Vector> iterates);

/// Column mean of the stacked iterates, reduced in agent order.
Vector network_mean(std::span<const Vector> iterates);

struct StationarityConfig {
  std::size_t inner_steps = 200;
  std::optional<double> inner_eta;  // defaults to 1 / L
  double tol = 1e-8;

  void validate() const;
};

struct StationarityResult {
  double grad_norm = 0.0;  // ||grad_x f(xbar, yhat)||
  Vector y_hat;
  std::size_t inner_steps = 0;
};

/// Estimates ||grad Phi(xbar)|| = ||grad_x f(xbar, yhat)|| with
/// yhat ~ argmax_y f(xbar, y). Uses the problem's closed-form best response
/// when it has one; otherwise runs projected full-gradient ascent from
/// `y_start`, stopping when the gradient mapping drops below cfg.tol.
StationarityResult stationarity(const MinMaxProblem& problem, std::span<const double> x_bar,
                                std::span<const double> y_start, const StationarityConfig& cfg);

double stationarity_norm(const MinMaxProblem& problem, std::span<const double> x_bar,
                         std::span<const double> y_start, const StationarityConfig& cfg = {});

}  // namespace dpmix
