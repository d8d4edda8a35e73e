#include "dpmix/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dpmix {

void PrivacyBudget::validate() const {
  if (!(theta > 0.0)) throw std::invalid_argument("theta must be positive");
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0, 1)");
  if (!(c > 0.0)) throw std::invalid_argument("c must be positive");
  if (!(L_g > 0.0)) throw std::invalid_argument("L_g must be positive");
}

NoiseScales calibrate_sigma(const PrivacyBudget& budget, std::size_t T, std::size_t m) {
  budget.validate();
  if (T == 0) throw std::invalid_argument("calibrate_sigma: T must be >= 1");
  if (m == 0) throw std::invalid_argument("calibrate_sigma: m must be >= 1");
  const double t = static_cast<double>(T);
  const double steps = 8.0 * t * (t + 1.0) * (2.0 * t + 1.0) / 3.0 + 4.0 * t;
  const double sigma = budget.c * budget.L_g * std::sqrt(steps * std::log(1.0 / budget.gamma)) /
                       (2.0 * budget.theta * std::sqrt(static_cast<double>(m)));
  return {sigma, sigma};
}

double renyi_gaussian(std::span<const double> mu_a, std::span<const double> mu_b, double sigma,
                      double rho) {
  if (mu_a.size() != mu_b.size()) throw std::invalid_argument("renyi_gaussian: size mismatch");
  if (!(rho > 1.0)) throw std::invalid_argument("renyi_gaussian: order must exceed 1");
  if (sigma < 0.0) throw std::invalid_argument("renyi_gaussian: sigma must be nonnegative");
  double dist2 = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) dist2 += (mu_a[i] - mu_b[i]) * (mu_a[i] - mu_b[i]);
  if (dist2 == 0.0) return 0.0;
  if (sigma == 0.0) return std::numeric_limits<double>::infinity();
  return rho * dist2 / (2.0 * sigma * sigma);
}

double compose_moments(std::span<const double> per_step_alpha) {
  for (double a : per_step_alpha) {
    if (a < 0.0) throw std::invalid_argument("compose_moments: moments must be nonnegative");
  }
  return std::accumulate(per_step_alpha.begin(), per_step_alpha.end(), 0.0);
}

double tail_bound_gamma(const std::function<double(double)>& alpha, double theta,
                        std::size_t lambda_max) {
  if (lambda_max < 1) throw std::invalid_argument("tail_bound_gamma: lambda_max must be >= 1");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t l = 1; l <= lambda_max; ++l) {
    const double lam = static_cast<double>(l);
    best = std::min(best, alpha(lam) - lam * theta);
  }
  const double g = std::exp(std::min(best, 0.0));
  return std::max(g, std::numeric_limits<double>::denorm_min());
}

double gaussian_moment(double lambda, double sensitivity, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_moment: sigma must be positive");
  return lambda * (lambda + 1.0) * sensitivity * sensitivity / (2.0 * sigma * sigma);
}

double lipschitz_bound_G(double L, double beta_x) {
  if (!(L > 0.0)) throw std::invalid_argument("lipschitz_bound_G: L must be positive");
  if (!(beta_x > 0.0 && beta_x <= 1.0)) {
    throw std::invalid_argument("lipschitz_bound_G: beta_x must lie in (0, 1]");
  }
  return L / beta_x;
}

Schedule theorem1_schedule(const ScheduleInputs& in) {
  if (!(in.epsilon > 0.0)) throw std::invalid_argument("schedule: epsilon must be positive");
  if (!(in.kappa >= 1.0)) throw std::invalid_argument("schedule: kappa must be >= 1");
  if (!(in.lambda >= 0.0 && in.lambda < 1.0)) {
    throw std::invalid_argument("schedule: spectral gap lambda must lie in [0, 1)");
  }
  if (in.m == 0) throw std::invalid_argument("schedule: m must be >= 1");
  if (!(in.L > 0.0)) throw std::invalid_argument("schedule: L must be positive");

  const double eps = in.epsilon, k = in.kappa, L = in.L;
  const double gap2 = (1.0 - in.lambda) * (1.0 - in.lambda);
  Schedule s;
  s.beta_x = eps * std::min(1.0, static_cast<double>(in.m) * eps) / 20.0;
  s.beta_y = s.beta_x / (25.0 * k * k);
  s.eta_x = gap2 * s.beta_x / (750.0 * k * k * k * L * eps);
  s.eta_y = gap2 * s.beta_x / (75.0 * k * L * eps);
  const double b0 = std::ceil(20.0 * k * eps / s.beta_x);
  s.b0 = static_cast<std::size_t>(std::max(b0, 1.0));
  if (in.shard_size) s.b0 = std::min(s.b0, std::max<std::size_t>(*in.shard_size, 1));
  const double T = std::ceil(1500.0 * k * k * k / (gap2 * eps * s.beta_x));
  s.T = static_cast<std::size_t>(std::max(T, 1.0));
  return s;
}

std::optional<std::string> privacy_regime_warning(const PrivacyBudget& budget, std::size_t d,
                                                  std::size_t m, double epsilon) {
  const double need = budget.L_g * std::sqrt(static_cast<double>(d) * std::log(1.0 / budget.gamma)) /
                      (std::sqrt(static_cast<double>(m)) * std::pow(epsilon, 4));
  if (budget.theta >= need) return std::nullopt;
  std::ostringstream os;
  os << "theta=" << budget.theta << " is below the accuracy-preserving regime (~" << need
     << " for epsilon=" << epsilon << "); noise may dominate the optimization error";
  return os.str();
}

}  // namespace dpmix
