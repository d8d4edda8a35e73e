#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>

namespace dpmix {

/// (theta, gamma) differential-privacy budget plus the calibration constant
/// c and the gradient-norm bound L_g.
struct PrivacyBudget {
  double theta = 1.0;
  double gamma = 1e-5;
  double c = 1.0;
  double L_g = 1.0;

  void validate() const;
};

struct NoiseScales {
  double sigma_x = 0.0;
  double sigma_y = 0.0;
};

/// Gaussian noise standard deviation for T iterations across m agents:
///   sigma = c L_g sqrt((8T(T+1)(2T+1)/3 + 4T) log(1/gamma)) / (2 theta sqrt(m))
/// Both coordinates use the same value.
NoiseScales calibrate_sigma(const PrivacyBudget& budget, std::size_t T, std::size_t m);

/// Rényi divergence of order rho between N(mu_a, s^2 I) and N(mu_b, s^2 I):
/// rho ||mu_a - mu_b||^2 / (2 s^2). Returns +inf when sigma is zero and the
/// means differ.
double renyi_gaussian(std::span<const double> mu_a, std::span<const double> mu_b, double sigma,
                      double rho);

/// Upper bound on the composed log-moment: the sum of per-step bounds.
double compose_moments(std::span<const double> per_step_alpha);

/// min over integer lambda in [1, lambda_max] of exp(alpha(lambda) - lambda
/// theta), clamped to (0, 1].
double tail_bound_gamma(const std::function<double(double)>& alpha, double theta,
                        std::size_t lambda_max = 64);

/// Log-moment bound of one Gaussian-mechanism release with L2 sensitivity
/// `sensitivity` and noise scale sigma: lambda (lambda + 1) s^2 / (2 sigma^2).
double gaussian_moment(double lambda, double sensitivity, double sigma);

/// Lipschitz bound L / beta_x of the STORM estimator.
double lipschitz_bound_G(double L, double beta_x);

struct ScheduleInputs {
  double epsilon = 0.1;  // target stationarity
  double kappa = 1.0;
  double lambda = 0.0;   // spectral gap of W
  std::size_t m = 1;
  double L = 1.0;
  std::optional<std::size_t> shard_size;  // clamps b0
};

struct Schedule {
  double beta_x = 0.0;
  double beta_y = 0.0;
  double eta_x = 0.0;
  double eta_y = 0.0;
  std::size_t b0 = 1;
  std::size_t T = 1;
};

/// Parameter schedule that yields an epsilon-stationary point:
///   beta_x = eps min{1, m eps} / 20,  beta_y = beta_x / (25 kappa^2),
///   eta_x = (1-lambda)^2 beta_x / (750 kappa^3 L eps),
///   eta_y = (1-lambda)^2 beta_x / (75 kappa L eps),
///   b0 = ceil(20 kappa eps / beta_x),  T = ceil(1500 kappa^3 / ((1-lambda)^2 eps beta_x)).
/// Throws if lambda >= 1.
Schedule theorem1_schedule(const ScheduleInputs& in);

/// Checks the privacy/accuracy coupling theta >= L_g sqrt(d log(1/gamma)) /
/// (sqrt(m) eps^4), with the unspecified leading constant taken as 1.
/// Returns a human-readable warning when violated.
std::optional<std::string> privacy_regime_warning(const PrivacyBudget& budget, std::size_t d,
                                                  std::size_t m, double epsilon);

}  // namespace dpmix
