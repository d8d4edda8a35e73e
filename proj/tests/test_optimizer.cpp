#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "dpmix/optimizer.hpp"
#include "dpmix/parallel.hpp"

namespace dpmix {
namespace {

bool bit_equal(const Vector& a, const Vector& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool same_state(const Network& a, const Network& b) {
  if (a.size() != b.size() || a.round != b.round) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& s = a.agents[i];
    const auto& t = b.agents[i];
    for (auto [p, q] : {std::pair{&s.x, &t.x}, {&s.y, &t.y}, {&s.g, &t.g}, {&s.h, &t.h},
                        {&s.v, &t.v}, {&s.u, &t.u}, {&s.g_star, &t.g_star}}) {
      if (!bit_equal(*p, *q)) return false;
    }
  }
  return true;
}

HyperParams small_hp(std::size_t T) {
  HyperParams hp;
  hp.eta_x = 0.05;
  hp.eta_y = 0.05;
  hp.beta_x = 0.3;
  hp.beta_y = 0.3;
  hp.b0 = 8;
  hp.batch = 4;
  hp.T = T;
  return hp;
}

MixingMatrix ring(std::size_t m) { return metropolis_weights(ring_graph(m)); }

RunOptions quiet() {
  RunOptions o;
  o.compute_stationarity = false;
  return o;
}

TEST(HyperParams, Validation) {
  HyperParams hp = small_hp(5);
  EXPECT_NO_THROW(hp.validate());
  hp.beta_x = 0;
  EXPECT_THROW(hp.validate(), std::invalid_argument);
  hp = small_hp(5);
  hp.T = 0;
  EXPECT_THROW(hp.validate(), std::invalid_argument);
  hp = small_hp(5);
  hp.sigma_y = -1;
  EXPECT_THROW(hp.validate(), std::invalid_argument);
  hp = small_hp(5);
  hp.b0 = 0;
  EXPECT_THROW(hp.validate(), std::invalid_argument);
}

TEST(Methods, NamesRoundTrip) {
  for (Method m : {Method::dpmixsgd, Method::dm_hsgd, Method::sgda, Method::dp_sgda}) {
    EXPECT_EQ(parse_method(method_name(m)), m);
  }
  EXPECT_THROW(parse_method("adam"), std::invalid_argument);
}

TEST(SampleBatch, DeterministicAndInRange) {
  auto a = sample_batch(3, 1, 7, 50, 20);
  EXPECT_EQ(a, sample_batch(3, 1, 7, 50, 20));
  EXPECT_NE(a, sample_batch(3, 1, 8, 50, 20));
  for (auto i : a) EXPECT_LT(i, 50u);
  auto full = sample_batch(3, 1, 7, 5, 9);
  EXPECT_EQ(full, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Init, SharedStartAndFullBatch) {
  auto p = quad_problem(3, 2, 4, 1);
  HyperParams hp = small_hp(1);
  hp.b0 = p->shard_size(0);
  Network net = init_agents(*p, hp, ring(4), 9);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_TRUE(bit_equal(net.agents[i].x, net.agents[0].x));
    EXPECT_TRUE(bit_equal(net.agents[i].y, net.agents[0].y));
    Vector gx(3), gy(2);
    p->full_gradients(i, net.agents[i].x, net.agents[i].y, gx, gy);
    EXPECT_TRUE(bit_equal(net.agents[i].g, gx));
    EXPECT_TRUE(bit_equal(net.agents[i].h, gy));
    for (double v : net.agents[i].v) EXPECT_EQ(v, 0.0);
    for (double v : net.agents[i].g_star) EXPECT_EQ(v, 0.0);
  }
  EXPECT_TRUE(same_state(net, init_agents(*p, hp, ring(4), 9)));
}

TEST(Init, DimensionMismatch) {
  auto p = quad_problem(2, 2, 3, 1);
  EXPECT_THROW(init_agents(*p, small_hp(1), ring(4), 0), std::invalid_argument);
}

TEST(Storm, BetaOneIsPlainGradient) {
  auto p = quad_problem(3, 3, 1, 2);
  HyperParams hp = small_hp(1);
  hp.beta_x = hp.beta_y = 1.0;
  AgentState s;
  s.x = {0.1, 0.2, 0.3};
  s.y = {1, 0, -1};
  s.x_prev = {0, 0, 0};
  s.y_prev = {0, 0, 0};
  s.g = {5, 5, 5};
  s.h = {-5, -5, -5};
  const std::vector<std::size_t> batch{0, 3, 3};
  storm_update(s, *p, 0, batch, hp);
  Vector gx(3), gy(3);
  p->gradients(0, s.x, s.y, batch, gx, gy);
  EXPECT_TRUE(bit_equal(s.g, gx));
  EXPECT_TRUE(bit_equal(s.h, gy));
  EXPECT_EQ(s.g_prev, (Vector{5, 5, 5}));
}

TEST(Storm, StationaryIterateAlgebra) {
  auto p = quad_problem(2, 2, 1, 3);
  HyperParams hp = small_hp(1);
  hp.beta_x = 0.25;
  hp.beta_y = 0.6;
  AgentState s;
  s.x = s.x_prev = {0.5, -0.5};
  s.y = s.y_prev = {0.2, 0.1};
  s.g = {1, 2};
  s.h = {3, 4};
  const std::vector<std::size_t> batch{1, 2};
  storm_update(s, *p, 0, batch, hp);
  Vector gx(2), gy(2);
  p->gradients(0, s.x, s.y, batch, gx, gy);
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_NEAR(s.g[j], 0.75 * s.g_prev[j] + 0.25 * gx[j], 1e-14);
    EXPECT_NEAR(s.h[j], 0.4 * s.h_prev[j] + 0.6 * gy[j], 1e-14);
  }
}

TEST(Storm, MatchesIndependentRecursion) {
  auto p = quad_problem(4, 3, 1, 5);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  HyperParams hp = small_hp(1);
  hp.beta_x = 0.17;
  hp.beta_y = 0.42;
  std::vector<std::size_t> full(p->shard_size(0));
  std::iota(full.begin(), full.end(), 0);
  for (int t = 0; t < 20; ++t) {
    AgentState s;
    s.x.resize(4);
    s.x_prev.resize(4);
    s.g.resize(4);
    s.y.resize(3);
    s.y_prev.resize(3);
    s.h.resize(3);
    for (auto* v : {&s.x, &s.x_prev, &s.g, &s.y, &s.y_prev, &s.h})
      for (auto& e : *v) e = nd(rng);
    const AgentState before = s;
    storm_update(s, *p, 0, full, hp);
    // closed-form gradients straight from the agent's matrices
    const auto& ag = p->agent(0);
    auto gxf = [&](const Vector& x, const Vector& y, std::size_t i) {
      double v = ag.p[i];
      for (std::size_t j = 0; j < 4; ++j) v += ag.A[i * 4 + j] * x[j];
      for (std::size_t j = 0; j < 3; ++j) v += ag.B[i * 3 + j] * y[j];
      return v;
    };
    auto gyf = [&](const Vector& x, const Vector& y, std::size_t i) {
      double v = ag.q[i];
      for (std::size_t j = 0; j < 4; ++j) v += ag.B[j * 3 + i] * x[j];
      for (std::size_t j = 0; j < 3; ++j) v -= ag.C[i * 3 + j] * y[j];
      return v;
    };
    for (std::size_t i = 0; i < 4; ++i) {
      const double expect = (1 - 0.17) * (before.g[i] - gxf(before.x_prev, before.y_prev, i)) +
                            gxf(before.x, before.y, i);
      EXPECT_NEAR(s.g[i], expect, 1e-12);
    }
    for (std::size_t i = 0; i < 3; ++i) {
      const double expect = (1 - 0.42) * (before.h[i] - gyf(before.x_prev, before.y_prev, i)) +
                            gyf(before.x, before.y, i);
      EXPECT_NEAR(s.h[i], expect, 1e-12);
    }
  }
}

TEST(Storm, ClippingBoundsFreshGradients) {
  Vector v{3, 4};
  clip_to_norm(v, 1.0);
  EXPECT_NEAR(v[0], 0.6, 1e-15);
  EXPECT_NEAR(v[1], 0.8, 1e-15);
  Vector w{0.1, 0.1};
  clip_to_norm(w, 1.0);
  EXPECT_EQ(w, (Vector{0.1, 0.1}));

  auto p = quad_problem(2, 2, 1, 7);
  HyperParams hp = small_hp(1);
  hp.beta_x = hp.beta_y = 1.0;
  hp.clip = 1e-3;
  AgentState s;
  s.x = {10, 10};
  s.y = {-10, 10};
  s.x_prev = s.x;
  s.y_prev = s.y;
  s.g = s.h = {0, 0};
  storm_update(s, *p, 0, std::vector<std::size_t>{0}, hp);
  EXPECT_LE(std::hypot(s.g[0], s.g[1]), 1e-3 * (1 + 1e-12));
}

TEST(Noise, ZeroSigmaIsExact) {
  AgentState s;
  s.g = {1.5, -2};
  s.h = {3};
  s.g_star = {9, 9};
  s.h_star = {9};
  s.noise_x = {7, 7};
  s.noise_y = {7};
  HyperParams hp = small_hp(1);
  inject_noise(s, hp, 1, 0, 0);
  EXPECT_TRUE(bit_equal(s.g_star, s.g));
  EXPECT_TRUE(bit_equal(s.h_star, s.h));
  EXPECT_EQ(s.g_star_prev, (Vector{9, 9}));
}

TEST(Noise, StarEqualsCleanPlusNoiseAndIsReproducible) {
  AgentState s;
  s.g = {1, 2, 3};
  s.h = {4, 5};
  s.g_star = s.g;
  s.h_star = s.h;
  s.noise_x.resize(3);
  s.noise_y.resize(2);
  HyperParams hp = small_hp(1);
  hp.sigma_x = 0.5;
  hp.sigma_y = 2.0;
  AgentState t = s;
  inject_noise(s, hp, 11, 2, 5);
  inject_noise(t, hp, 11, 2, 5);
  EXPECT_TRUE(bit_equal(s.g_star, t.g_star));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(s.g_star[j], s.g[j] + s.noise_x[j]);
  for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(s.h_star[j], s.h[j] + s.noise_y[j]);
}

std::vector<double> draw_noise(std::uint64_t seed, std::size_t agent, std::size_t iter,
                               std::size_t d) {
  AgentState s;
  s.g.assign(d, 0.0);
  s.h.assign(1, 0.0);
  s.g_star = s.g;
  s.h_star = s.h;
  s.noise_x.resize(d);
  s.noise_y.resize(1);
  HyperParams hp = small_hp(1);
  hp.sigma_x = 1.0;
  hp.sigma_y = 1.0;
  inject_noise(s, hp, seed, agent, iter);
  return s.noise_x;
}

TEST(Noise, UnitVariance) {
  std::vector<double> all;
  for (std::size_t it = 0; it < 10; ++it) {
    auto v = draw_noise(3, 0, it, 1000);
    all.insert(all.end(), v.begin(), v.end());
  }
  ASSERT_EQ(all.size(), 10000u);
  const double mean = std::accumulate(all.begin(), all.end(), 0.0) / all.size();
  double var = 0;
  for (double v : all) var += (v - mean) * (v - mean);
  var /= all.size() - 1;
  EXPECT_GE(var, 0.97);
  EXPECT_LE(var, 1.03);
}

TEST(Noise, IndependentAcrossAgentsAndIterations) {
  auto corr = [](const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      sab += (a[i] - ma) * (b[i] - mb);
      saa += (a[i] - ma) * (a[i] - ma);
      sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
  };
  const auto base = draw_noise(5, 0, 0, 10000);
  EXPECT_LE(std::abs(corr(base, draw_noise(5, 1, 0, 10000))), 0.05);
  EXPECT_LE(std::abs(corr(base, draw_noise(5, 0, 1, 10000))), 0.05);
  EXPECT_LE(std::abs(corr(base, draw_noise(6, 0, 0, 10000))), 0.05);
}

Network random_network(std::size_t m, std::size_t d1, std::size_t d2, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Network net;
  net.agents.resize(m);
  for (auto& s : net.agents) {
    for (auto* v : {&s.x, &s.v, &s.g_star, &s.g_star_prev}) {
      v->resize(d1);
      for (auto& e : *v) e = nd(rng);
    }
    for (auto* v : {&s.y, &s.u, &s.h_star, &s.h_star_prev}) {
      v->resize(d2);
      for (auto& e : *v) e = nd(rng);
    }
  }
  return net;
}

TEST(Tracking, UniformWeightsGiveNetworkMean) {
  Network net = random_network(5, 3, 2, 1);
  std::vector<Vector> pre(5, Vector(3));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const auto& s = net.agents[i];
      pre[i][j] = s.v[j] + s.g_star[j] - s.g_star_prev[j];
    }
  const Vector mean = network_mean(pre);
  gradient_track(net, make_mixing_matrix(SquareMatrix::uniform(5)));
  for (const auto& s : net.agents)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(s.v[j], mean[j], 1e-14);
}

TEST(Tracking, IdenticalAgentsStayIdentical) {
  Network net = random_network(1, 3, 2, 2);
  AgentState proto = net.agents[0];
  net.agents.assign(6, proto);
  gradient_track(net, metropolis_weights(gen_erdos_renyi(6, 0.5, 3)));
  for (const auto& s : net.agents) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(s.v[j], net.agents[0].v[j], 1e-15);
  }
}

TEST(Tracking, MeanEqualsNoisyEstimatorMeanAlongRun) {
  auto p = quad_problem(4, 3, 6, 11);
  HyperParams hp = small_hp(200);
  hp.sigma_x = hp.sigma_y = 0.1;
  RunOptions opts = quiet();
  double worst = 0;
  opts.on_round = [&](std::size_t, const Network& net) {
    std::vector<Vector> vs, gs, us, hs;
    for (const auto& s : net.agents) {
      vs.push_back(s.v);
      gs.push_back(s.g_star);
      us.push_back(s.u);
      hs.push_back(s.h_star);
    }
    const Vector a = network_mean(vs), b = network_mean(gs), c = network_mean(us),
                 d = network_mean(hs);
    for (std::size_t j = 0; j < a.size(); ++j) worst = std::max(worst, std::abs(a[j] - b[j]));
    for (std::size_t j = 0; j < c.size(); ++j) worst = std::max(worst, std::abs(c[j] - d[j]));
  };
  run_dpmixsgd(*p, hp, ring(6), 3, opts);
  EXPECT_LE(worst, 1e-10);
}

TEST(Mix, NullUpdateWithIdentity) {
  auto p = quad_problem(3, 2, 3, 1);
  Network net = random_network(3, 3, 2, 4);
  const Network before = net;
  HyperParams hp = small_hp(1);
  hp.eta_x = hp.eta_y = 0;
  mix_params(net, make_mixing_matrix(SquareMatrix::identity(3)), hp, *p);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(bit_equal(net.agents[i].x, before.agents[i].x));
    EXPECT_TRUE(bit_equal(net.agents[i].y, before.agents[i].y));
    EXPECT_TRUE(bit_equal(net.agents[i].x_prev, before.agents[i].x));
  }
}

TEST(Mix, UniformWeightsReachConsensus) {
  auto p = quad_problem(3, 2, 4, 1);
  Network net = random_network(4, 3, 2, 5);
  mix_params(net, make_mixing_matrix(SquareMatrix::uniform(4)), small_hp(1), *p);
  EXPECT_LE(consensus_error(net.stacked_x()), 1e-28);
  EXPECT_LE(consensus_error(net.stacked_y()), 1e-28);
}

TEST(Mix, TwoAgentHandExample) {
  auto p = quad_problem(1, 1, 2, 1);
  Network net;
  net.agents.resize(2);
  net.agents[0].x = {1};
  net.agents[1].x = {3};
  for (auto& s : net.agents) {
    s.v = {0};
    s.y = {0};
    s.u = {0};
  }
  HyperParams hp = small_hp(1);
  hp.eta_x = 123.0;
  mix_params(net, make_mixing_matrix(SquareMatrix::uniform(2)), hp, *p);
  EXPECT_EQ(net.agents[0].x, (Vector{2}));
  EXPECT_EQ(net.agents[1].x, (Vector{2}));
}

TEST(Mix, ProjectsConstrainedY) {
  Dataset ds = synth_binary(40, 3, 0.1, 1);
  RobustLogisticRegression p(ds, shard(ds, 3, ShardMode::iid, 0));
  Network net = random_network(3, 3, 3, 6);
  mix_params(net, ring(3), small_hp(1), p);
  for (const auto& s : net.agents) {
    double sum = 0;
    for (double v : s.y) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Run, NoiseFreeDpMixEqualsDmHsgd) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto p = quad_problem(3, 3, 5, seed);
    HyperParams hp = small_hp(60);
    const auto w = metropolis_weights(gen_erdos_renyi(5, 0.5, seed));
    auto a = run_dpmixsgd(*p, hp, w, seed, quiet());
    auto b = run_dm_hsgd(*p, hp, w, seed, quiet());
    EXPECT_TRUE(same_state(a.final_state, b.final_state));
    EXPECT_EQ(a.zeta, b.zeta);
  }
}

TEST(Run, DmHsgdIgnoresSigma) {
  auto p = quad_problem(3, 3, 4, 2);
  HyperParams hp = small_hp(40);
  auto a = run_dm_hsgd(*p, hp, ring(4), 1, quiet());
  hp.sigma_x = hp.sigma_y = 5;
  auto b = run_dm_hsgd(*p, hp, ring(4), 1, quiet());
  EXPECT_TRUE(same_state(a.final_state, b.final_state));
}

TEST(Run, NoiseFreeDpSgdaEqualsSgda) {
  auto p = quad_problem(3, 3, 4, 2);
  HyperParams hp = small_hp(50);
  auto a = run_dp_sgda(*p, hp, ring(4), 8, quiet());
  auto b = run_sgda(*p, hp, ring(4), 8, quiet());
  EXPECT_TRUE(same_state(a.final_state, b.final_state));
}

TEST(Run, SgdaIsStormWithUnitMomentumOnOneAgent) {
  auto p = quad_problem(3, 2, 1, 4);
  HyperParams hp = small_hp(50);
  hp.beta_x = hp.beta_y = 1.0;
  hp.b0 = hp.batch;
  const auto w = metropolis_weights(Graph(1));
  auto a = run_sgda(*p, hp, w, 2, quiet());
  auto b = run_algorithm(Algorithm{true, false, false}, Method::dpmixsgd, *p, hp, w, 2, quiet());
  EXPECT_TRUE(bit_equal(a.final_state.agents[0].x, b.final_state.agents[0].x));
  EXPECT_TRUE(bit_equal(a.final_state.agents[0].y, b.final_state.agents[0].y));
}

TEST(Run, DeterministicAcrossThreadCounts) {
  auto p = quad_problem(4, 4, 8, 3);
  HyperParams hp = small_hp(80);
  hp.sigma_x = hp.sigma_y = 0.05;
  const auto w = metropolis_weights(gen_erdos_renyi(8, 0.4, 1));
  RunOptions one = quiet(), many = quiet();
  many.threads = 4;
  auto a = run_dpmixsgd(*p, hp, w, 5, one);
  auto b = run_dpmixsgd(*p, hp, w, 5, many);
  auto c = run_dpmixsgd(*p, hp, w, 5, one);
  EXPECT_TRUE(same_state(a.final_state, b.final_state));
  EXPECT_TRUE(same_state(a.final_state, c.final_state));
}

TEST(Run, OutputRoundAndLogRows) {
  auto p = quad_problem(2, 2, 3, 1);
  HyperParams hp = small_hp(25);
  RunOptions opts;
  opts.log_every = 10;
  std::vector<Vector> means;
  opts.on_round = [&](std::size_t, const Network& net) { means.push_back(net.mean_x()); };
  auto rec = run_dpmixsgd(*p, hp, ring(3), 4, opts);
  ASSERT_GE(rec.zeta, 1u);
  ASSERT_LE(rec.zeta, 25u);
  EXPECT_TRUE(bit_equal(rec.x_out, means[rec.zeta - 1]));
  ASSERT_EQ(rec.rows.size(), 3u);
  EXPECT_EQ(rec.rows[0].iteration, 10u);
  EXPECT_EQ(rec.rows[1].iteration, 20u);
  EXPECT_EQ(rec.rows[2].iteration, 25u);
  EXPECT_FALSE(std::isnan(rec.rows[2].grad_norm));
  EXPECT_TRUE(bit_equal(rec.x_final, means.back()));
}

TEST(Run, ZetaIsUniformOverRounds) {
  auto p = quad_problem(1, 1, 1, 1);
  HyperParams hp = small_hp(4);
  std::vector<int> hits(5, 0);
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    ++hits[run_sgda(*p, hp, metropolis_weights(Graph(1)), seed, quiet()).zeta];
  }
  EXPECT_EQ(hits[0], 0);
  for (int k = 1; k <= 4; ++k) EXPECT_NEAR(hits[k], 100, 40);
}

TEST(Run, DivergenceNamesIterationAndAgent) {
  auto p = quad_problem(3, 3, 3, 1);
  HyperParams hp = small_hp(5000);
  hp.eta_x = hp.eta_y = 50.0;
  try {
    run_dpmixsgd(*p, hp, ring(3), 1, quiet());
    FAIL() << "expected divergence";
  } catch (const NumericalError& e) {
    EXPECT_LT(e.iteration(), 5000u);
    EXPECT_LT(e.agent(), 3u);
    EXPECT_NE(std::string(e.what()).find("iteration"), std::string::npos);
  }
}

TEST(Run, ConsensusContractsAtRateLambda) {
  auto p = quad_problem(3, 2, 7, 1);
  const auto w = metropolis_weights(gen_erdos_renyi(7, 0.4, 2));
  ASSERT_LT(w.lambda, 1.0);
  HyperParams hp = small_hp(1);
  hp.eta_x = hp.eta_y = 0;
  for (std::uint64_t start = 0; start < 20; ++start) {
    Network net = random_network(7, 3, 2, 100 + start);
    for (int r = 0; r < 10; ++r) {
      const double before = std::sqrt(consensus_error(net.stacked_x()));
      mix_params(net, w, hp, *p);
      EXPECT_LE(std::sqrt(consensus_error(net.stacked_x())), w.lambda * before + 1e-12);
    }
  }
}

TEST(Run, QuadraticConvergesToSaddle) {
  QuadOptions qo;
  qo.sample_noise = 0.0;
  auto p = quad_problem(5, 5, 4, 7, qo);
  HyperParams hp;
  hp.eta_x = hp.eta_y = 0.1;
  hp.beta_x = hp.beta_y = 0.5;
  hp.b0 = hp.batch = 4;
  hp.T = 3000;
  auto rec = run_dpmixsgd(*p, hp, ring(4), 1, quiet());
  double err = 0;
  for (std::size_t j = 0; j < 5; ++j) err += std::pow(rec.x_final[j] - p->saddle_x()[j], 2);
  EXPECT_LE(std::sqrt(err), 1e-3);
}

TEST(Run, MinibatchNoiseStillApproachesSaddle) {
  const auto w = metropolis_weights(Graph(4, {{0, 1}, {1, 2}, {2, 3}, {0, 3}}));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    QuadOptions qo;
    qo.samples_per_agent = 64;
    auto p = quad_problem(5, 5, 4, seed, qo);
    HyperParams hp;
    hp.eta_x = hp.eta_y = 0.05;
    hp.beta_x = hp.beta_y = 0.02;
    hp.b0 = 64;
    hp.batch = 8;
    hp.T = 5000;
    RunOptions opts;
    opts.compute_stationarity = false;
    const RunRecord r = run_dpmixsgd(*p, hp, w, seed, opts);
    double d = 0;
    for (std::size_t j = 0; j < 5; ++j) d += std::pow(r.x_final[j] - p->saddle_x()[j], 2);
    EXPECT_LE(std::sqrt(d), 1e-2) << "seed " << seed;
  }
}

TEST(Run, StationarityDescendsOverWindows) {
  std::vector<std::vector<double>> traces;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    QuadOptions qo;
    qo.sample_noise = 0.0;
    auto p = quad_problem(4, 4, 4, seed, qo);
    HyperParams hp;
    hp.eta_x = hp.eta_y = 0.01;
    hp.beta_x = hp.beta_y = 0.1;
    hp.b0 = hp.batch = 4;
    hp.T = 1000;
    RunOptions opts;
    opts.log_every = 100;
    auto rec = run_dpmixsgd(*p, hp, ring(4), seed, opts);
    std::vector<double> tr;
    for (const auto& r : rec.rows) tr.push_back(r.grad_norm);
    traces.push_back(tr);
  }
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < traces[0].size(); ++k) {
    std::vector<double> col;
    for (const auto& tr : traces) col.push_back(tr[k]);
    std::nth_element(col.begin(), col.begin() + 5, col.end());
    EXPECT_LE(col[5], prev) << "window " << k;
    prev = col[5];
  }
}

TEST(WorkerPool, RunsEveryIndexAndPropagatesErrors) {
  WorkerPool pool(4);
  std::vector<int> hit(1000, 0);
  pool.parallel_for(1000, [&](std::size_t i) { hit[i] += 1; });
  EXPECT_EQ(std::count(hit.begin(), hit.end(), 1), 1000);
  EXPECT_THROW(pool.parallel_for(10, [](std::size_t i) {
    if (i == 7) throw std::runtime_error("boom");
  }),
               std::runtime_error);
  pool.parallel_for(3, [&](std::size_t i) { hit[i] = 5; });
  EXPECT_EQ(hit[2], 5);
}

}  // namespace
}  // namespace dpmix
