#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numeric>
#include <random>

#include "dpmix/objective.hpp"

namespace dpmix {
namespace {

Dataset make_dataset(std::size_t d, std::vector<double> features, std::vector<int> labels) {
  Dataset ds;
  ds.d = d;
  ds.features = std::move(features);
  ds.labels = std::move(labels);
  return ds;
}

Sharding one_per_agent(std::size_t n) {
  Sharding s;
  for (std::size_t i = 0; i < n; ++i) s.shards.push_back({i});
  return s;
}

// Independent per-agent objective written from the formula, valid for any y.
double rlr_oracle(const RobustLogisticRegression& p, std::size_t agent, const Vector& x,
                  const Vector& y, const std::vector<std::size_t>& batch) {
  const Dataset& sh = p.shard_data(agent);
  const double m = static_cast<double>(p.agents());
  long double loss = 0;
  for (std::size_t k : batch) {
    double z = 0;
    for (std::size_t j = 0; j < sh.d; ++j) z += sh.row(k)[j] * x[j];
    loss += std::log1p(std::exp(-sh.labels[k] * z));
  }
  loss /= static_cast<long double>(batch.size());
  double v = 0;
  for (double yi : y) v += (m * yi - 1) * (m * yi - 1);
  v *= 0.5 * p.lambda1();
  double g = 0;
  for (double xj : x) g += p.alpha() * xj * xj / (1 + p.alpha() * xj * xj);
  g *= p.lambda2();
  return m * y[agent] * static_cast<double>(loss) - v + g;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

TEST(Simplex, Examples) {
  auto p = project_simplex(std::vector<double>{0.5, 0.5, 0.5});
  for (double v : p) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(project_simplex(std::vector<double>{1, 0, 0}), (Vector{1, 0, 0}));
  auto q = project_simplex(std::vector<double>{0.8, 0.4});
  EXPECT_NEAR(q[0], 0.7, 1e-15);
  EXPECT_NEAR(q[1], 0.3, 1e-15);
}

TEST(Simplex, FeasibleIdempotentContraction) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0, 2);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng() % 12;
    Vector u(n), v(n);
    for (auto& e : u) e = nd(rng);
    for (auto& e : v) e = nd(rng);
    Vector pu = project_simplex(u), pv = project_simplex(v);
    double sum = 0;
    for (double e : pu) {
      EXPECT_GE(e, 0.0);
      sum += e;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    Vector ppu = project_simplex(pu);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(ppu[i], pu[i], 1e-15);
    double dp = 0, d = 0;
    for (std::size_t i = 0; i < n; ++i) {
      dp += (pu[i] - pv[i]) * (pu[i] - pv[i]);
      d += (u[i] - v[i]) * (u[i] - v[i]);
    }
    EXPECT_LE(std::sqrt(dp), std::sqrt(d) + 1e-12);
  }
}

TEST(RobustLogReg, DefaultsAndMeta) {
  Dataset ds = synth_binary(40, 3, 0.1, 1);
  Sharding sh = shard(ds, 4, ShardMode::iid, 0);
  RobustLogisticRegression p(ds, sh);
  EXPECT_DOUBLE_EQ(p.lambda1(), 1.0 / 16.0);
  EXPECT_EQ(p.lambda2(), 0.001);
  EXPECT_EQ(p.alpha(), 10.0);
  EXPECT_NO_THROW(p.meta().validate());
  EXPECT_GE(p.meta().kappa, 1.0);
  const Vector y0 = p.initial_y();
  for (double v : y0) EXPECT_EQ(v, 0.25);
  EXPECT_EQ(p.divergence(y0), 0.0);
}

TEST(RobustLogReg, ValueAtZeroIsLogTwo) {
  Dataset ds = make_dataset(2, {1, 2, -1, 0.5, 3, 3}, {1, -1, 1});
  RobustLogisticRegression p(ds, one_per_agent(3));
  const Vector x{0, 0};
  const Vector y{0.5, 0.3, 0.2};
  EXPECT_NEAR(p.local_value(1, x, y), 3 * 0.3 * std::log(2.0) - p.divergence(y), 1e-15);
}

TEST(RobustLogReg, ScalarValueExample) {
  Dataset ds = make_dataset(1, {1.0}, {1});
  RobustLogisticRegression p(ds, one_per_agent(1), RobustLogRegParams{1.0, 0.001, 10.0});
  const double expect = std::log1p(std::exp(-1.0)) + 0.001 * 10.0 / 11.0;
  EXPECT_NEAR(p.local_value(0, Vector{1.0}, Vector{1.0}), expect, 1e-15);
  EXPECT_NEAR(expect, 0.3141708, 1e-7);
}

TEST(RobustLogReg, OffSimplexIsADomainError) {
  Dataset ds = make_dataset(1, {1.0, 2.0}, {1, -1});
  RobustLogisticRegression p(ds, one_per_agent(2));
  EXPECT_THROW(p.local_value(0, Vector{0.0}, Vector{0.7, 0.7}), std::domain_error);
  EXPECT_THROW(p.local_value(0, Vector{0.0}, Vector{1.2, -0.2}), std::domain_error);
  EXPECT_NO_THROW(p.local_value(0, Vector{0.0}, Vector{0.5, 0.5 + 1e-12}));
}

TEST(RobustLogReg, GradXExamples) {
  // x = 0, one sample: m y_i (-b a / 2)
  Dataset ds = make_dataset(2, {1.5, -2.0, 0.0, 1.0}, {-1, 1});
  RobustLogisticRegression p(ds, one_per_agent(2));
  const std::vector<std::size_t> b0{0};
  Vector g = p.grad_x(0, Vector{0, 0}, Vector{0.25, 0.75}, b0);
  EXPECT_NEAR(g[0], 2 * 0.25 * (1.5 / 2), 1e-15);
  EXPECT_NEAR(g[1], 2 * 0.25 * (-2.0 / 2), 1e-15);

  // lambda2 = 0 and y_i = 0 give the zero vector
  RobustLogisticRegression q(ds, one_per_agent(2), RobustLogRegParams{std::nullopt, 0.0, 10.0});
  Vector z = q.grad_x(0, Vector{0.3, -0.7}, Vector{0.0, 1.0}, b0);
  EXPECT_EQ(z, (Vector{0.0, 0.0}));
}

TEST(RobustLogReg, GradXScalarOracle) {
  // a = 2, b = -1, x = 0.5: d/dx log(1 + exp(-b a x)) = -b a sigmoid(-b a x) = 2 sigmoid(1)
  Dataset ds = make_dataset(1, {2.0}, {-1});
  RobustLogisticRegression p(ds, one_per_agent(1), RobustLogRegParams{std::nullopt, 0.0, 10.0});
  const std::vector<std::size_t> b{0};
  Vector g = p.grad_x(0, Vector{0.5}, Vector{1.0}, b);
  EXPECT_NEAR(g[0], 2.0 / (1.0 + std::exp(-1.0)), 1e-15);
  const double h = 1e-6;
  const double fd = (p.local_value(0, Vector{0.5 + h}, Vector{1.0}) -
                     p.local_value(0, Vector{0.5 - h}, Vector{1.0})) / (2 * h);
  EXPECT_NEAR(g[0], fd, 1e-8);
}

TEST(RobustLogReg, GradYExamples) {
  Dataset ds = make_dataset(1, {1.0, -1.0}, {1, -1});
  RobustLogisticRegression p(ds, one_per_agent(2), RobustLogRegParams{0.25, 0.001, 10.0});
  const std::vector<std::size_t> b{0};
  Vector g = p.grad_y(0, Vector{0.0}, Vector{0.75, 0.25}, b);
  EXPECT_NEAR(g[0], 2 * std::log(2.0) - 0.25, 1e-15);
  EXPECT_NEAR(g[1], 0.25, 1e-15);
  EXPECT_NEAR(g[0], 1.13629, 1e-5);

  // uniform y: the penalty gradient vanishes
  Vector u = p.grad_y(1, Vector{0.4}, Vector{0.5, 0.5}, b);
  EXPECT_EQ(u[0], 0.0);
  EXPECT_NEAR(u[1], 2 * std::log1p(std::exp(-0.4)), 1e-14);
}

TEST(RobustLogReg, EmptyBatchIsAnError) {
  Dataset ds = make_dataset(1, {1.0}, {1});
  RobustLogisticRegression p(ds, one_per_agent(1));
  EXPECT_THROW(p.grad_x(0, Vector{0.0}, Vector{1.0}, {}), std::invalid_argument);
  EXPECT_THROW(p.grad_y(0, Vector{0.0}, Vector{1.0}, {}), std::invalid_argument);
}

TEST(RobustLogReg, FiniteDifferenceGradients) {
  Dataset ds = synth_binary(60, 5, 0.1, 4);
  scale_to_unit_max_norm(ds);
  Sharding sh = shard(ds, 4, ShardMode::iid, 1);
  RobustLogisticRegression p(ds, sh);
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd(0, 1);
  const double h = 1e-5;
  for (int t = 0; t < 50; ++t) {
    const std::size_t agent = rng() % 4;
    Vector x(5), y(4);
    for (auto& e : x) e = nd(rng);
    for (auto& e : y) e = nd(rng);
    std::vector<std::size_t> batch;
    for (int k = 0; k < 5; ++k) batch.push_back(rng() % p.shard_size(agent));
    Vector gx(5), gy(4);
    p.gradients(agent, x, y, batch, gx, gy);
    for (std::size_t j = 0; j < 5; ++j) {
      Vector xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      const double fd = (rlr_oracle(p, agent, xp, y, batch) - rlr_oracle(p, agent, xm, y, batch)) / (2 * h);
      EXPECT_LE(rel_err(gx[j], fd), 1e-5) << "x" << j;
    }
    for (std::size_t j = 0; j < 4; ++j) {
      Vector yp = y, ym = y;
      yp[j] += h;
      ym[j] -= h;
      const double fd = (rlr_oracle(p, agent, x, yp, batch) - rlr_oracle(p, agent, x, ym, batch)) / (2 * h);
      EXPECT_LE(rel_err(gy[j], fd), 1e-5) << "y" << j;
    }
  }
}

TEST(RobustLogReg, OracleMatchesLocalValueOnSimplex) {
  Dataset ds = synth_binary(30, 4, 0.1, 2);
  Sharding sh = shard(ds, 3, ShardMode::iid, 5);
  RobustLogisticRegression p(ds, sh);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0, 1);
  for (int t = 0; t < 10; ++t) {
    Vector x(4), y(3);
    for (auto& e : x) e = nd(rng);
    for (auto& e : y) e = nd(rng);
    y = project_simplex(y);
    for (std::size_t a = 0; a < 3; ++a) {
      std::vector<std::size_t> all(p.shard_size(a));
      std::iota(all.begin(), all.end(), 0);
      EXPECT_NEAR(p.local_value(a, x, y), rlr_oracle(p, a, x, y, all), 1e-12);
    }
  }
}

TEST(RobustLogReg, AveragingIdentity) {
  Dataset ds = synth_binary(90, 6, 0.1, 8);
  Sharding sh = shard(ds, 5, ShardMode::iid, 2);
  RobustLogisticRegression p(ds, sh);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0, 1);
  for (int t = 0; t < 20; ++t) {
    Vector x(6), y(5);
    for (auto& e : x) e = nd(rng);
    for (auto& e : y) e = nd(rng);
    y = project_simplex(y);
    double avg = 0;
    for (std::size_t a = 0; a < 5; ++a) avg += p.local_value(a, x, y);
    avg /= 5;
    EXPECT_NEAR(avg, p.global_objective(x, y), 1e-12);
  }
}

QuadraticAgent scalar_agent(double a, double b, double c, double pp, double q) {
  QuadraticAgent ag;
  ag.d1 = ag.d2 = 1;
  ag.A = {a};
  ag.B = {b};
  ag.C = {c};
  ag.p = {pp};
  ag.q = {q};
  return ag;
}

TEST(Quadratic, ScalarSaddle) {
  QuadraticProblem p({scalar_agent(1, 0, 1, -1, 1)});
  EXPECT_NEAR(p.saddle_x()[0], 1.0, 1e-15);
  EXPECT_NEAR(p.saddle_y()[0], 1.0, 1e-15);
}

TEST(Quadratic, DecoupledHasZeroSaddle) {
  QuadraticProblem p({scalar_agent(2, 0, 3, 0, 0), scalar_agent(1, 0, 5, 0, 0)});
  EXPECT_EQ(p.saddle_x()[0], 0.0);
  EXPECT_EQ(p.saddle_y()[0], 0.0);
}

TEST(Quadratic, StoredSaddleIsStationary) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto p = quad_problem(4, 3, 5, seed);
    Vector gx(4), gy(3);
    p->global_gradients(p->saddle_x(), p->saddle_y(), gx, gy);
    double n = 0;
    for (double v : gx) n += v * v;
    double m = 0;
    for (double v : gy) m += v * v;
    EXPECT_LE(std::sqrt(n) + std::sqrt(m), 1e-10);
  }
}

TEST(Quadratic, SpectraWithinBounds) {
  QuadOptions opts;
  opts.mu = 0.5;
  opts.L = 3.0;
  auto p = quad_problem(5, 4, 3, 9, opts);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& ag = p->agent(i);
    Eigen::Map<const Eigen::MatrixXd> A(ag.A.data(), 5, 5), C(ag.C.data(), 4, 4);
    EXPECT_LE((A - A.transpose()).norm(), 1e-14);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(A), ec(C);
    EXPECT_GE(ea.eigenvalues().minCoeff(), 0.5 - 1e-10);
    EXPECT_LE(ea.eigenvalues().maxCoeff(), 3.0 + 1e-10);
    EXPECT_GE(ec.eigenvalues().minCoeff(), 0.5 - 1e-10);
    EXPECT_LE(ec.eigenvalues().maxCoeff(), 3.0 + 1e-10);
  }
}

TEST(Quadratic, FiniteDifferenceGradients) {
  auto p = quad_problem(5, 5, 4, 21);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(0, 1);
  const double h = 1e-5;
  for (int t = 0; t < 50; ++t) {
    const std::size_t agent = rng() % 4;
    Vector x(5), y(5), gx(5), gy(5);
    for (auto& e : x) e = nd(rng);
    for (auto& e : y) e = nd(rng);
    p->full_gradients(agent, x, y, gx, gy);
    for (std::size_t j = 0; j < 5; ++j) {
      Vector xp = x, xm = x, yp = y, ym = y;
      xp[j] += h;
      xm[j] -= h;
      yp[j] += h;
      ym[j] -= h;
      const double fdx = (p->local_value(agent, xp, y) - p->local_value(agent, xm, y)) / (2 * h);
      const double fdy = (p->local_value(agent, x, yp) - p->local_value(agent, x, ym)) / (2 * h);
      EXPECT_LE(rel_err(gx[j], fdx), 1e-5);
      EXPECT_LE(rel_err(gy[j], fdy), 1e-5);
    }
  }
}

TEST(Quadratic, StrongConcavityWitness) {
  auto p = quad_problem(3, 4, 2, 4);
  const double mu = p->meta().mu;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd(0, 1);
  for (int t = 0; t < 50; ++t) {
    Vector x(3), y(4), y2(4), gx(3), gy(4);
    for (auto& e : x) e = nd(rng);
    for (auto& e : y) e = nd(rng);
    for (auto& e : y2) e = nd(rng);
    p->global_gradients(x, y, gx, gy);
    double inner = 0, dist = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      inner += gy[j] * (y2[j] - y[j]);
      dist += (y2[j] - y[j]) * (y2[j] - y[j]);
    }
    EXPECT_LE(p->global_value(x, y2) - p->global_value(x, y) - inner, -0.5 * mu * dist + 1e-10);
  }
}

TEST(Quadratic, SampleNoiseAveragesOut) {
  auto p = quad_problem(3, 2, 2, 6);
  Vector x{0.3, -0.1, 0.5}, y{1.0, -2.0};
  for (std::size_t a = 0; a < 2; ++a) {
    const auto& ag = p->agent(a);
    Vector full_x(3), full_y(2);
    p->full_gradients(a, x, y, full_x, full_y);
    // the noise-free gradient from the agent's matrices
    for (std::size_t i = 0; i < 3; ++i) {
      double v = ag.p[i];
      for (std::size_t j = 0; j < 3; ++j) v += ag.A[i * 3 + j] * x[j];
      for (std::size_t j = 0; j < 2; ++j) v += ag.B[i * 2 + j] * y[j];
      EXPECT_NEAR(full_x[i], v, 1e-12);
    }
  }
  EXPECT_GT(estimate_gradient_variance(*p, x, y), 0.0);
}

TEST(Quadratic, BestResponseSolvesInnerProblem) {
  auto p = quad_problem(4, 3, 3, 12);
  Vector x{0.1, -0.4, 2.0, 0.7};
  auto y = p->best_response(x);
  ASSERT_TRUE(y.has_value());
  Vector gx(4), gy(3);
  p->global_gradients(x, *y, gx, gy);
  for (double v : gy) EXPECT_NEAR(v, 0.0, 1e-12);
}

}  // namespace
}  // namespace dpmix
