#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "dpmix/data.hpp"

namespace dpmix {

using Vector = std::vector<double>;

/// Smoothness metadata of a min-max problem.
struct ProblemMeta {
  double L = 1.0;      // gradient Lipschitz constant
  double mu = 1.0;     // strong-concavity modulus in y
  double kappa = 1.0;  // L / mu
  double L_g = 1.0;    // per-sample gradient norm bound
  std::optional<double> sigma_var;  // per-sample gradient variance, diagnostic only

  void validate() const;
};

/// f(x, y) = (1/m) sum_i f_i(x, y) with f_i(x, y) = E_z F_i(x, y; z), where
/// agent i's samples z are the positions 0..shard_size(i)-1 of its shard.
/// Implementations are immutable after construction; every method is safe
/// to call concurrently.
class MinMaxProblem {
 public:
  virtual ~MinMaxProblem() = default;

  virtual std::size_t dim_x() const = 0;
  virtual std::size_t dim_y() const = 0;
  virtual std::size_t agents() const = 0;
  virtual std::size_t shard_size(std::size_t agent) const = 0;

  /// Batch means of grad_x F_i and grad_y F_i at (x, y). Throws
  /// std::invalid_argument on an empty batch.
  virtual void gradients(std::size_t agent, std::span<const double> x, std::span<const double> y,
                         std::span<const std::size_t> batch, std::span<double> gx,
                         std::span<double> gy) const = 0;

  /// f_i(x, y) over the whole shard.
  virtual double local_value(std::size_t agent, std::span<const double> x,
                             std::span<const double> y) const = 0;

  /// True when y is restricted to a convex set handled by project_y.
  virtual bool constrained_y() const { return false; }
  virtual void project_y(std::span<double> /*y*/) const {}

  virtual Vector initial_x() const { return Vector(dim_x(), 0.0); }
  virtual Vector initial_y() const { return Vector(dim_y(), 0.0); }

  /// argmax_y f(x, y) when it has a closed form.
  virtual std::optional<Vector> best_response(std::span<const double> /*x*/) const {
    return std::nullopt;
  }

  const ProblemMeta& meta() const noexcept { return meta_; }

  void full_gradients(std::size_t agent, std::span<const double> x, std::span<const double> y,
                      std::span<double> gx, std::span<double> gy) const;
  /// Gradients of the averaged objective f.
  void global_gradients(std::span<const double> x, std::span<const double> y,
                        std::span<double> gx, std::span<double> gy) const;
  double global_value(std::span<const double> x, std::span<const double> y) const;

 protected:
  ProblemMeta meta_;
};

/// Euclidean projection onto the probability simplex (sort and threshold).
Vector project_simplex(std::span<const double> v);
void project_simplex_inplace(std::span<double> v);

struct RobustLogRegParams {
  std::optional<double> lambda1;  // defaults to 1/m^2
  double lambda2 = 0.001;
  double alpha = 10.0;
};

/// Decentralized robust logistic regression:
///   min_x max_{y in simplex} sum_i y_i l_i(x) - V(y) + g(x)
/// with V(y) = lambda1/2 ||m y - 1||^2 and the nonconvex regularizer
/// g(x) = lambda2 sum_j alpha x_j^2 / (1 + alpha x_j^2).
///
/// Agent i holds f_i(x, y) = m y_i l_i(x) - V(y) + g(x), where l_i is the
/// mean logistic loss over its shard, so the agent average is exactly f.
class RobustLogisticRegression final : public MinMaxProblem {
 public:
  RobustLogisticRegression(const Dataset& train, const Sharding& sharding,
                           RobustLogRegParams params = {});

  std::size_t dim_x() const override { return d_; }
  std::size_t dim_y() const override { return m_; }
  std::size_t agents() const override { return m_; }
  std::size_t shard_size(std::size_t agent) const override { return shards_.at(agent).size(); }

  void gradients(std::size_t agent, std::span<const double> x, std::span<const double> y,
                 std::span<const std::size_t> batch, std::span<double> gx,
                 std::span<double> gy) const override;
  /// Throws std::domain_error if y is off the simplex by more than 1e-9.
  double local_value(std::size_t agent, std::span<const double> x,
                     std::span<const double> y) const override;

  bool constrained_y() const override { return true; }
  void project_y(std::span<double> y) const override { project_simplex_inplace(y); }
  Vector initial_y() const override;

  Vector grad_x(std::size_t agent, std::span<const double> x, std::span<const double> y,
                std::span<const std::size_t> batch) const;
  Vector grad_y(std::size_t agent, std::span<const double> x, std::span<const double> y,
                std::span<const std::size_t> batch) const;

  /// sum_i y_i l_i(x) - V(y) + g(x), evaluated directly from the global form.
  double global_objective(std::span<const double> x, std::span<const double> y) const;

  double lambda1() const noexcept { return lambda1_; }
  double lambda2() const noexcept { return lambda2_; }
  double alpha() const noexcept { return alpha_; }
  const Dataset& shard_data(std::size_t agent) const { return shards_.at(agent); }

  double divergence(std::span<const double> y) const;   // V(y)
  double regularizer(std::span<const double> x) const;  // g(x)
  double mean_loss(std::size_t agent, std::span<const double> x) const;  // l_i(x)

 private:
  std::size_t m_;
  std::size_t d_;
  double lambda1_, lambda2_, alpha_;
  std::vector<Dataset> shards_;
};

/// Stable log(1 + exp(-t)).
double logistic_loss(double margin);
/// 1 / (1 + exp(-t)).
double sigmoid(double t);

/// One agent's strongly-convex-strongly-concave quadratic:
///   f_i = 1/2 x'Ax + x'By - 1/2 y'Cy + p'x + q'y
/// Sample k shifts p by px_noise row k and q by py_noise row k; both noise
/// matrices have zero column means so the shard average is exact.
struct QuadraticAgent {
  std::size_t d1 = 0, d2 = 0;
  std::vector<double> A;  // d1 x d1, row-major
  std::vector<double> B;  // d1 x d2
  std::vector<double> C;  // d2 x d2
  std::vector<double> p;  // d1
  std::vector<double> q;  // d2
  std::size_t samples = 1;
  std::vector<double> px_noise;  // samples x d1 (empty means zero)
  std::vector<double> py_noise;  // samples x d2
};

struct QuadOptions {
  double mu = 1.0;      // smallest eigenvalue of A_i and C_i
  double L = 4.0;       // largest eigenvalue of A_i and C_i
  double coupling = 0.5;
  double offset = 1.0;  // scale of p_i, q_i
  std::size_t samples_per_agent = 16;
  double sample_noise = 0.1;
};

class QuadraticProblem final : public MinMaxProblem {
 public:
  explicit QuadraticProblem(std::vector<QuadraticAgent> agents);

  std::size_t dim_x() const override { return d1_; }
  std::size_t dim_y() const override { return d2_; }
  std::size_t agents() const override { return agents_.size(); }
  std::size_t shard_size(std::size_t agent) const override { return agents_.at(agent).samples; }

  void gradients(std::size_t agent, std::span<const double> x, std::span<const double> y,
                 std::span<const std::size_t> batch, std::span<double> gx,
                 std::span<double> gy) const override;
  double local_value(std::size_t agent, std::span<const double> x,
                     std::span<const double> y) const override;
  std::optional<Vector> best_response(std::span<const double> x) const override;

  const Vector& saddle_x() const noexcept { return x_star_; }
  const Vector& saddle_y() const noexcept { return y_star_; }
  const QuadraticAgent& agent(std::size_t i) const { return agents_.at(i); }

 private:
  std::size_t d1_, d2_;
  std::vector<QuadraticAgent> agents_;
  // Averaged data.
  std::vector<double> A_bar_, B_bar_, C_bar_, p_bar_, q_bar_;
  Vector x_star_, y_star_;
};

/// Random quadratic problem with A_i, C_i symmetric positive definite and
/// spectra in [opts.mu, opts.L].
std::unique_ptr<QuadraticProblem> quad_problem(std::size_t d1, std::size_t d2, std::size_t m,
                                               std::uint64_t seed, QuadOptions opts = {});

/// Largest over agents of the mean squared deviation of per-sample
/// gradients from the full local gradient at (x, y).
double estimate_gradient_variance(const MinMaxProblem& problem, std::span<const double> x,
                                  std::span<const double> y);

}  // namespace dpmix
