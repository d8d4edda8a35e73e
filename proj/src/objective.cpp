#include "dpmix/objective.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "dpmix/kernels.hpp"
#include "dpmix/rng.hpp"

namespace dpmix {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

void require_batch(std::span<const std::size_t> batch) {
  if (batch.empty()) throw std::invalid_argument("gradient batch must be nonempty");
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace

void ProblemMeta::validate() const {
  if (!(L > 0.0)) throw std::invalid_argument("problem meta: L must be positive");
  if (!(mu > 0.0)) throw std::invalid_argument("problem meta: mu must be positive");
  if (!(kappa >= 1.0)) throw std::invalid_argument("problem meta: kappa must be >= 1");
  if (!(L_g > 0.0)) throw std::invalid_argument("problem meta: L_g must be positive");
}

void MinMaxProblem::full_gradients(std::size_t agent, std::span<const double> x,
                                   std::span<const double> y, std::span<double> gx,
                                   std::span<double> gy) const {
  const auto idx = all_indices(shard_size(agent));
  gradients(agent, x, y, idx, gx, gy);
}

void MinMaxProblem::global_gradients(std::span<const double> x, std::span<const double> y,
                                     std::span<double> gx, std::span<double> gy) const {
  std::fill(gx.begin(), gx.end(), 0.0);
  std::fill(gy.begin(), gy.end(), 0.0);
  Vector lx(dim_x()), ly(dim_y());
  const double inv_m = 1.0 / static_cast<double>(agents());
  for (std::size_t i = 0; i < agents(); ++i) {
    full_gradients(i, x, y, lx, ly);
    simd::axpy(inv_m, lx, gx);
    simd::axpy(inv_m, ly, gy);
  }
}

double MinMaxProblem::global_value(std::span<const double> x, std::span<const double> y) const {
  double s = 0.0;
  for (std::size_t i = 0; i < agents(); ++i) s += local_value(i, x, y);
  return s / static_cast<double>(agents());
}

// ---------------------------------------------------------------------------
// simplex

void project_simplex_inplace(std::span<double> v) {
  const std::size_t n = v.size();
  if (n == 0) return;
  Vector u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0, tau = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    cumsum += u[j];
    const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) tau = t;
  }
  for (double& e : v) e = std::max(e - tau, 0.0);
}

Vector project_simplex(std::span<const double> v) {
  Vector out(v.begin(), v.end());
  project_simplex_inplace(out);
  return out;
}

// ---------------------------------------------------------------------------
// robust logistic regression

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double logistic_loss(double margin) {
  // log(1 + exp(-margin))
  if (margin > 0.0) return std::log1p(std::exp(-margin));
  return -margin + std::log1p(std::exp(margin));
}

RobustLogisticRegression::RobustLogisticRegression(const Dataset& train, const Sharding& sharding,
                                                   RobustLogRegParams params)
    : m_(sharding.agents()), d_(train.d) {
  if (m_ == 0) throw std::invalid_argument("robust logistic regression needs at least one agent");
  const double md = static_cast<double>(m_);
  lambda1_ = params.lambda1.value_or(1.0 / (md * md));
  lambda2_ = params.lambda2;
  alpha_ = params.alpha;
  if (!(lambda1_ > 0.0 && lambda2_ >= 0.0 && alpha_ > 0.0)) {
    throw std::invalid_argument("robust logistic regression needs lambda1, alpha > 0 and lambda2 >= 0");
  }
  shards_.reserve(m_);
  for (const auto& s : sharding.shards) {
    if (s.empty()) throw std::invalid_argument("every agent needs a nonempty shard");
    shards_.push_back(train.subset(s));
  }

  double a_max = 0.0;
  for (const auto& sh : shards_) a_max = std::max(a_max, sh.max_row_norm());
  const double dd = static_cast<double>(d_);
  // |g'(x_j)| peaks at lambda2 * sqrt(27 alpha / 64).
  const double reg_grad = lambda2_ * std::sqrt(dd * 27.0 * alpha_ / 64.0);
  meta_.L_g = md * a_max + lambda1_ * md * (md + 1.0) + reg_grad;
  if (meta_.L_g == 0.0) meta_.L_g = std::numeric_limits<double>::min();
  // Block bound on the Hessian: max of the diagonal blocks plus the
  // x-y coupling m ||a||.
  const double hxx = md * a_max * a_max / 4.0 + 2.0 * lambda2_ * alpha_;
  const double hyy = lambda1_ * md * md;
  meta_.mu = hyy;
  meta_.L = std::max(hxx, hyy) + md * a_max;
  meta_.kappa = meta_.L / meta_.mu;
}

Vector RobustLogisticRegression::initial_y() const {
  return Vector(m_, 1.0 / static_cast<double>(m_));
}

void RobustLogisticRegression::gradients(std::size_t agent, std::span<const double> x,
                                         std::span<const double> y,
                                         std::span<const std::size_t> batch, std::span<double> gx,
                                         std::span<double> gy) const {
  require_batch(batch);
  const Dataset& sh = shards_.at(agent);
  const double md = static_cast<double>(m_);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const double wx = md * y[agent] * inv_b;

  std::fill(gx.begin(), gx.end(), 0.0);
  double loss = 0.0;
  for (std::size_t k : batch) {
    const auto a = sh.row(k);
    const double b = static_cast<double>(sh.labels[k]);
    const double margin = b * simd::dot(a, x);
    loss += logistic_loss(margin);
    // d/dx log(1 + exp(-b a'x)) = -b a sigmoid(-b a'x)
    simd::axpy(-b * sigmoid(-margin) * wx, a, gx);
  }
  for (std::size_t j = 0; j < d_; ++j) {
    const double ax2 = alpha_ * x[j] * x[j];
    gx[j] += 2.0 * lambda2_ * alpha_ * x[j] / ((1.0 + ax2) * (1.0 + ax2));
  }

  for (std::size_t j = 0; j < m_; ++j) gy[j] = -lambda1_ * md * (md * y[j] - 1.0);
  gy[agent] += md * loss * inv_b;
}

Vector RobustLogisticRegression::grad_x(std::size_t agent, std::span<const double> x,
                                        std::span<const double> y,
                                        std::span<const std::size_t> batch) const {
  Vector gx(d_), gy(m_);
  gradients(agent, x, y, batch, gx, gy);
  return gx;
}

Vector RobustLogisticRegression::grad_y(std::size_t agent, std::span<const double> x,
                                        std::span<const double> y,
                                        std::span<const std::size_t> batch) const {
  Vector gx(d_), gy(m_);
  gradients(agent, x, y, batch, gx, gy);
  return gy;
}

double RobustLogisticRegression::divergence(std::span<const double> y) const {
  const double md = static_cast<double>(m_);
  double s = 0.0;
  for (double yi : y) s += (md * yi - 1.0) * (md * yi - 1.0);
  return 0.5 * lambda1_ * s;
}

double RobustLogisticRegression::regularizer(std::span<const double> x) const {
  double s = 0.0;
  for (double xj : x) s += alpha_ * xj * xj / (1.0 + alpha_ * xj * xj);
  return lambda2_ * s;
}

double RobustLogisticRegression::mean_loss(std::size_t agent, std::span<const double> x) const {
  const Dataset& sh = shards_.at(agent);
  double loss = 0.0;
  for (std::size_t k = 0; k < sh.size(); ++k) {
    loss += logistic_loss(static_cast<double>(sh.labels[k]) * simd::dot(sh.row(k), x));
  }
  return loss / static_cast<double>(sh.size());
}

double RobustLogisticRegression::local_value(std::size_t agent, std::span<const double> x,
                                             std::span<const double> y) const {
  double sum = 0.0;
  for (double yi : y) {
    if (yi < -1e-9) throw std::domain_error("y must lie in the simplex (negative entry)");
    sum += yi;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::domain_error("y must lie in the simplex (sum != 1)");
  const double md = static_cast<double>(m_);
  return md * y[agent] * mean_loss(agent, x) - divergence(y) + regularizer(x);
}

double RobustLogisticRegression::global_objective(std::span<const double> x,
                                                  std::span<const double> y) const {
  double s = 0.0;
  for (std::size_t i = 0; i < m_; ++i) s += y[i] * mean_loss(i, x);
  return s - divergence(y) + regularizer(x);
}

// ---------------------------------------------------------------------------
// quadratic

QuadraticProblem::QuadraticProblem(std::vector<QuadraticAgent> agents)
    : agents_(std::move(agents)) {
  if (agents_.empty()) throw std::invalid_argument("quadratic problem needs at least one agent");
  d1_ = agents_.front().d1;
  d2_ = agents_.front().d2;
  if (d1_ == 0 || d2_ == 0) throw std::invalid_argument("quadratic problem dimensions must be >= 1");
  for (const auto& a : agents_) {
    if (a.d1 != d1_ || a.d2 != d2_ || a.A.size() != d1_ * d1_ || a.B.size() != d1_ * d2_ ||
        a.C.size() != d2_ * d2_ || a.p.size() != d1_ || a.q.size() != d2_ || a.samples == 0 ||
        (!a.px_noise.empty() && a.px_noise.size() != a.samples * d1_) ||
        (!a.py_noise.empty() && a.py_noise.size() != a.samples * d2_)) {
      throw std::invalid_argument("quadratic agent has inconsistent shapes");
    }
  }

  const double inv_m = 1.0 / static_cast<double>(agents_.size());
  auto average = [&](auto member) {
    std::vector<double> out((agents_.front().*member).size(), 0.0);
    for (const auto& a : agents_) {
      for (std::size_t k = 0; k < out.size(); ++k) out[k] += (a.*member)[k] * inv_m;
    }
    return out;
  };
  A_bar_ = average(&QuadraticAgent::A);
  B_bar_ = average(&QuadraticAgent::B);
  C_bar_ = average(&QuadraticAgent::C);
  p_bar_ = average(&QuadraticAgent::p);
  q_bar_ = average(&QuadraticAgent::q);

  // Saddle point: A x + B y + p = 0, B'x - C y + q = 0.
  const CMap A(A_bar_.data(), d1_, d1_), B(B_bar_.data(), d1_, d2_), C(C_bar_.data(), d2_, d2_);
  const CVecMap p(p_bar_.data(), d1_), q(q_bar_.data(), d2_);
  const Eigen::LDLT<Eigen::MatrixXd> c_solve(C);
  const Eigen::MatrixXd schur = A + B * c_solve.solve(B.transpose());
  const Eigen::VectorXd rhs = -p - B * c_solve.solve(q);
  const Eigen::VectorXd xs = schur.ldlt().solve(rhs);
  const Eigen::VectorXd ys = c_solve.solve(B.transpose() * xs + q);
  x_star_.assign(xs.data(), xs.data() + d1_);
  y_star_.assign(ys.data(), ys.data() + d2_);

  // Metadata from the per-agent Hessians [[A, B], [B', -C]].
  double L = 0.0, mu = std::numeric_limits<double>::infinity();
  for (const auto& a : agents_) {
    Eigen::MatrixXd H(d1_ + d2_, d1_ + d2_);
    H.topLeftCorner(d1_, d1_) = CMap(a.A.data(), d1_, d1_);
    H.topRightCorner(d1_, d2_) = CMap(a.B.data(), d1_, d2_);
    H.bottomLeftCorner(d2_, d1_) = CMap(a.B.data(), d1_, d2_).transpose();
    H.bottomRightCorner(d2_, d2_) = -CMap(a.C.data(), d2_, d2_);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
    L = std::max(L, es.eigenvalues().cwiseAbs().maxCoeff());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ec(CMap(a.C.data(), d2_, d2_),
                                                       Eigen::EigenvaluesOnly);
    mu = std::min(mu, ec.eigenvalues().minCoeff());
  }
  meta_.L = L;
  meta_.mu = mu;
  meta_.kappa = L / mu;

  // Gradient-norm bound over the ball of radius R = 2 ||(x*, y*)|| + 1:
  // ||grad F(z; k)|| <= ||grad F(0; k)|| + L ||z||.
  double g0 = 0.0;
  for (const auto& a : agents_) {
    for (std::size_t k = 0; k < a.samples; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < d1_; ++j) {
        const double v = a.p[j] + (a.px_noise.empty() ? 0.0 : a.px_noise[k * d1_ + j]);
        s += v * v;
      }
      for (std::size_t j = 0; j < d2_; ++j) {
        const double v = a.q[j] + (a.py_noise.empty() ? 0.0 : a.py_noise[k * d2_ + j]);
        s += v * v;
      }
      g0 = std::max(g0, std::sqrt(s));
    }
  }
  const double z_norm = std::sqrt(xs.squaredNorm() + ys.squaredNorm());
  meta_.L_g = g0 + L * (2.0 * z_norm + 1.0);
}

void QuadraticProblem::gradients(std::size_t agent, std::span<const double> x,
                                 std::span<const double> y, std::span<const std::size_t> batch,
                                 std::span<double> gx, std::span<double> gy) const {
  require_batch(batch);
  const QuadraticAgent& a = agents_.at(agent);
  for (std::size_t i = 0; i < d1_; ++i) {
    gx[i] = simd::dot({a.A.data() + i * d1_, d1_}, x) + simd::dot({a.B.data() + i * d2_, d2_}, y) +
            a.p[i];
  }
  for (std::size_t j = 0; j < d2_; ++j) {
    double bx = 0.0;
    for (std::size_t i = 0; i < d1_; ++i) bx += a.B[i * d2_ + j] * x[i];
    gy[j] = bx - simd::dot({a.C.data() + j * d2_, d2_}, y) + a.q[j];
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  if (!a.px_noise.empty()) {
    for (std::size_t k : batch) simd::axpy(inv_b, {a.px_noise.data() + k * d1_, d1_}, gx);
  }
  if (!a.py_noise.empty()) {
    for (std::size_t k : batch) simd::axpy(inv_b, {a.py_noise.data() + k * d2_, d2_}, gy);
  }
}

double QuadraticProblem::local_value(std::size_t agent, std::span<const double> x,
                                     std::span<const double> y) const {
  const QuadraticAgent& a = agents_.at(agent);
  const CMap A(a.A.data(), d1_, d1_), B(a.B.data(), d1_, d2_), C(a.C.data(), d2_, d2_);
  const CVecMap xv(x.data(), d1_), yv(y.data(), d2_);
  const CVecMap p(a.p.data(), d1_), q(a.q.data(), d2_);
  return 0.5 * xv.dot(A * xv) + xv.dot(B * yv) - 0.5 * yv.dot(C * yv) + p.dot(xv) + q.dot(yv);
}

std::optional<Vector> QuadraticProblem::best_response(std::span<const double> x) const {
  const CMap B(B_bar_.data(), d1_, d2_), C(C_bar_.data(), d2_, d2_);
  const CVecMap xv(x.data(), d1_), q(q_bar_.data(), d2_);
  const Eigen::VectorXd y = C.ldlt().solve(B.transpose() * xv + q);
  return Vector(y.data(), y.data() + d2_);
}

std::unique_ptr<QuadraticProblem> quad_problem(std::size_t d1, std::size_t d2, std::size_t m,
                                               std::uint64_t seed, QuadOptions opts) {
  if (d1 == 0 || d2 == 0 || m == 0) throw std::invalid_argument("quad_problem: sizes must be >= 1");
  if (!(opts.mu > 0.0 && opts.L >= opts.mu)) {
    throw std::invalid_argument("quad_problem: need 0 < mu <= L");
  }
  std::normal_distribution<double> normal(0.0, 1.0);

  auto spd = [&](std::size_t n, SplitMix64& rng) {
    Eigen::MatrixXd g(n, n);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
    const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
    Eigen::VectorXd eig(n);
    std::uniform_real_distribution<double> u(opts.mu, opts.L);
    for (std::size_t i = 0; i < n; ++i) eig[i] = u(rng);
    eig[0] = opts.mu;
    if (n > 1) eig[n - 1] = opts.L;
    Eigen::MatrixXd S = Q * eig.asDiagonal() * Q.transpose();
    S = 0.5 * (S + S.transpose()).eval();
    std::vector<double> out(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] = S(i, j);
    return out;
  };

  std::vector<QuadraticAgent> agents(m);
  for (std::size_t i = 0; i < m; ++i) {
    auto rng = make_stream(seed, i, 0, Purpose::init);
    QuadraticAgent& a = agents[i];
    a.d1 = d1;
    a.d2 = d2;
    a.A = spd(d1, rng);
    a.C = spd(d2, rng);
    a.B.resize(d1 * d2);
    const double bscale = opts.coupling / std::sqrt(static_cast<double>(std::max(d1, d2)));
    for (double& e : a.B) e = bscale * normal(rng);
    a.p.resize(d1);
    a.q.resize(d2);
    for (double& e : a.p) e = opts.offset * normal(rng);
    for (double& e : a.q) e = opts.offset * normal(rng);
    a.samples = std::max<std::size_t>(opts.samples_per_agent, 1);
    if (opts.sample_noise > 0.0 && a.samples > 1) {
      auto centered = [&](std::size_t dim) {
        std::vector<double> noise(a.samples * dim);
        for (double& e : noise) e = opts.sample_noise * normal(rng);
        for (std::size_t j = 0; j < dim; ++j) {
          double mean = 0.0;
          for (std::size_t k = 0; k < a.samples; ++k) mean += noise[k * dim + j];
          mean /= static_cast<double>(a.samples);
          for (std::size_t k = 0; k < a.samples; ++k) noise[k * dim + j] -= mean;
        }
        return noise;
      };
      a.px_noise = centered(d1);
      a.py_noise = centered(d2);
    }
  }
  return std::make_unique<QuadraticProblem>(std::move(agents));
}

double estimate_gradient_variance(const MinMaxProblem& problem, std::span<const double> x,
                                  std::span<const double> y) {
  Vector fx(problem.dim_x()), fy(problem.dim_y()), sx(problem.dim_x()), sy(problem.dim_y());
  double worst = 0.0;
  for (std::size_t i = 0; i < problem.agents(); ++i) {
    problem.full_gradients(i, x, y, fx, fy);
    double acc = 0.0;
    const std::size_t n = problem.shard_size(i);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t one[] = {k};
      problem.gradients(i, x, y, one, sx, sy);
      for (std::size_t j = 0; j < sx.size(); ++j) acc += (sx[j] - fx[j]) * (sx[j] - fx[j]);
      for (std::size_t j = 0; j < sy.size(); ++j) acc += (sy[j] - fy[j]) * (sy[j] - fy[j]);
    }
    worst = std::max(worst, acc / static_cast<double>(n));
  }
  return worst;
}

}  // namespace dpmix
