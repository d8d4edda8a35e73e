#include "dpmix/optimizer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <random>

#include "dpmix/kernels.hpp"
#include "dpmix/parallel.hpp"
#include "dpmix/rng.hpp"

namespace dpmix {

namespace {

struct SparseRow {
  std::vector<std::size_t> cols;
  std::vector<double> weights;
};

std::vector<SparseRow> sparse_rows(const MixingMatrix& w) {
  const std::size_t m = w.agents();
  std::vector<SparseRow> rows(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (w.w(i, j) != 0.0) {
        rows[i].cols.push_back(j);
        rows[i].weights.push_back(w.w(i, j));
      }
    }
  }
  return rows;
}

void for_each_agent(WorkerPool* pool, std::size_t m, const std::function<void(std::size_t)>& fn) {
  if (pool != nullptr) {
    pool->parallel_for(m, fn);
  } else {
    for (std::size_t i = 0; i < m; ++i) fn(i);
  }
}

// out_i = sum_j w_ij in_j, accumulated in column order.
void gossip(const std::vector<SparseRow>& rows, const std::vector<Vector>& in,
            std::vector<Vector>& out, WorkerPool* pool) {
  for_each_agent(pool, rows.size(), [&](std::size_t i) {
    Vector& o = out[i];
    std::fill(o.begin(), o.end(), 0.0);
    for (std::size_t k = 0; k < rows[i].cols.size(); ++k) {
      simd::axpy(rows[i].weights[k], in[rows[i].cols[k]], o);
    }
  });
}

bool all_finite(std::span<const double> v) {
  for (double e : v) {
    if (!std::isfinite(e)) return false;
  }
  return true;
}

void check_mixing(const MinMaxProblem& problem, const MixingMatrix& w) {
  if (w.agents() != problem.agents()) {
    throw std::invalid_argument("mixing matrix has " + std::to_string(w.agents()) +
                                " agents but the problem has " +
                                std::to_string(problem.agents()));
  }
}

}  // namespace

void HyperParams::validate() const {
  // eta = 0 is accepted: it turns a run into pure gossip averaging.
  if (!(eta_x >= 0.0 && eta_y >= 0.0)) throw std::invalid_argument("step sizes must be nonnegative");
  if (!(beta_x > 0.0 && beta_x <= 1.0 && beta_y > 0.0 && beta_y <= 1.0)) {
    throw std::invalid_argument("momentum weights must lie in (0, 1]");
  }
  if (b0 < 1) throw std::invalid_argument("b0 must be >= 1");
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (T < 1) throw std::invalid_argument("T must be >= 1");
  if (!(sigma_x >= 0.0 && sigma_y >= 0.0)) throw std::invalid_argument("noise scales must be >= 0");
  if (clip && !(*clip > 0.0)) throw std::invalid_argument("clip threshold must be positive");
}

std::string_view method_name(Method m) {
  switch (m) {
    case Method::dpmixsgd: return "dpmixsgd";
    case Method::dm_hsgd: return "dm_hsgd";
    case Method::sgda: return "sgda";
    case Method::dp_sgda: return "dp_sgda";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::dpmixsgd, Method::dm_hsgd, Method::sgda, Method::dp_sgda}) {
    if (method_name(m) == name) return m;
  }
  throw std::invalid_argument("unknown method '" + std::string(name) + "'");
}

Algorithm algorithm_for(Method m) {
  switch (m) {
    case Method::dpmixsgd: return {true, true, true};
    case Method::dm_hsgd: return {true, true, false};
    case Method::sgda: return {false, false, false};
    case Method::dp_sgda: return {false, false, true};
  }
  return {};
}

std::vector<Vector> Network::stacked_x() const {
  std::vector<Vector> out;
  out.reserve(agents.size());
  for (const auto& a : agents) out.push_back(a.x);
  return out;
}

std::vector<Vector> Network::stacked_y() const {
  std::vector<Vector> out;
  out.reserve(agents.size());
  for (const auto& a : agents) out.push_back(a.y);
  return out;
}

Vector Network::mean_x() const { return network_mean(stacked_x()); }
Vector Network::mean_y() const { return network_mean(stacked_y()); }

NumericalError::NumericalError(std::size_t iteration, std::size_t agent, const std::string& what)
    : std::runtime_error("non-finite " + what + " at iteration " + std::to_string(iteration) +
                         ", agent " + std::to_string(agent)),
      iteration_(iteration),
      agent_(agent) {}

std::vector<std::size_t> sample_batch(std::uint64_t seed, std::size_t agent, std::size_t iteration,
                                      std::size_t shard_size, std::size_t size) {
  if (shard_size == 0) throw std::invalid_argument("cannot sample from an empty shard");
  std::vector<std::size_t> batch(size);
  if (size >= shard_size) {
    // a batch at least as large as the shard is the whole shard
    batch.resize(shard_size);
    std::iota(batch.begin(), batch.end(), 0);
    return batch;
  }
  auto rng = make_stream(seed, agent, iteration, Purpose::batch);
  std::uniform_int_distribution<std::size_t> pick(0, shard_size - 1);
  for (auto& b : batch) b = pick(rng);
  return batch;
}

void clip_to_norm(std::span<double> v, double clip) {
  const double n = std::sqrt(simd::sum_sq(v));
  if (n > clip) {
    const double s = clip / n;
    for (double& e : v) e *= s;
  }
}

namespace {

void stochastic_gradients(const MinMaxProblem& problem, std::size_t agent,
                          std::span<const double> x, std::span<const double> y,
                          std::span<const std::size_t> batch, const HyperParams& hp,
                          std::span<double> gx, std::span<double> gy) {
  problem.gradients(agent, x, y, batch, gx, gy);
  if (hp.clip) {
    clip_to_norm(gx, *hp.clip);
    clip_to_norm(gy, *hp.clip);
  }
}

}  // namespace

Network init_agents(const MinMaxProblem& problem, const HyperParams& hp, const MixingMatrix& w,
                    std::uint64_t seed, Algorithm algo) {
  hp.validate();
  check_mixing(problem, w);
  const std::size_t m = problem.agents(), d1 = problem.dim_x(), d2 = problem.dim_y();
  const Vector x0 = problem.initial_x();
  const Vector y0 = problem.initial_y();

  Network net;
  net.seed = seed;
  net.agents.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    AgentState& s = net.agents[i];
    s.x = x0;
    s.y = y0;
    s.x_prev = x0;
    s.y_prev = y0;
    s.g.assign(d1, 0.0);
    s.h.assign(d2, 0.0);
    s.g_prev = s.g;
    s.h_prev = s.h;
    s.g_star = s.g;  // holds g*_{-1} = 0 until round 0 shifts it
    s.h_star = s.h;
    s.g_star_prev = s.g;
    s.h_star_prev = s.h;
    s.v = s.g;
    s.u = s.h;
    s.noise_x = s.g;
    s.noise_y = s.h;

    const std::size_t size = algo.storm ? hp.b0 : hp.batch;
    const auto batch = sample_batch(seed, i, 0, problem.shard_size(i), size);
    stochastic_gradients(problem, i, s.x, s.y, batch, hp, s.g, s.h);
  }
  return net;
}

void storm_update(AgentState& s, const MinMaxProblem& problem, std::size_t agent,
                  std::span<const std::size_t> batch, const HyperParams& hp) {
  const std::size_t d1 = s.x.size(), d2 = s.y.size();
  Vector cur_x(d1), cur_y(d2), old_x(d1), old_y(d2);
  stochastic_gradients(problem, agent, s.x, s.y, batch, hp, cur_x, cur_y);
  stochastic_gradients(problem, agent, s.x_prev, s.y_prev, batch, hp, old_x, old_y);

  s.g_prev = s.g;
  s.h_prev = s.h;
  // g <- (1 - beta)(g_prev - old) + cur
  simd::axpby(1.0, s.g_prev, -1.0, old_x, s.g);
  simd::axpby(1.0 - hp.beta_x, s.g, 1.0, cur_x, s.g);
  simd::axpby(1.0, s.h_prev, -1.0, old_y, s.h);
  simd::axpby(1.0 - hp.beta_y, s.h, 1.0, cur_y, s.h);
}

void fresh_gradient_update(AgentState& s, const MinMaxProblem& problem, std::size_t agent,
                           std::span<const std::size_t> batch, const HyperParams& hp) {
  s.g_prev = s.g;
  s.h_prev = s.h;
  stochastic_gradients(problem, agent, s.x, s.y, batch, hp, s.g, s.h);
}

void inject_noise(AgentState& s, const HyperParams& hp, std::uint64_t seed, std::size_t agent,
                  std::size_t iteration) {
  s.g_star_prev = s.g_star;
  s.h_star_prev = s.h_star;

  auto perturb = [&](const Vector& clean, double sigma, Purpose purpose, Vector& noise,
                     Vector& out) {
    if (sigma == 0.0) {
      std::fill(noise.begin(), noise.end(), 0.0);
      out = clean;
      return;
    }
    auto rng = make_stream(seed, agent, iteration, purpose);
    std::normal_distribution<double> normal(0.0, sigma);
    for (double& e : noise) e = normal(rng);
    simd::axpby(1.0, clean, 1.0, noise, out);
  };
  perturb(s.g, hp.sigma_x, Purpose::noise_x, s.noise_x, s.g_star);
  perturb(s.h, hp.sigma_y, Purpose::noise_y, s.noise_y, s.h_star);
}

void gradient_track(Network& net, const MixingMatrix& w, WorkerPool* pool) {
  const std::size_t m = net.size();
  const auto rows = sparse_rows(w);
  std::vector<Vector> in_v(m), in_u(m), out_v(m), out_u(m);
  for_each_agent(pool, m, [&](std::size_t j) {
    const AgentState& s = net.agents[j];
    in_v[j].resize(s.v.size());
    in_u[j].resize(s.u.size());
    simd::axpby(1.0, s.v, 1.0, s.g_star, in_v[j]);
    simd::axpy(-1.0, s.g_star_prev, in_v[j]);
    simd::axpby(1.0, s.u, 1.0, s.h_star, in_u[j]);
    simd::axpy(-1.0, s.h_star_prev, in_u[j]);
    out_v[j].resize(s.v.size());
    out_u[j].resize(s.u.size());
  });
  gossip(rows, in_v, out_v, pool);
  gossip(rows, in_u, out_u, pool);
  for (std::size_t i = 0; i < m; ++i) {
    net.agents[i].v = std::move(out_v[i]);
    net.agents[i].u = std::move(out_u[i]);
  }
}

void mix_params(Network& net, const MixingMatrix& w, const HyperParams& hp,
                const MinMaxProblem& problem, WorkerPool* pool) {
  const std::size_t m = net.size();
  const auto rows = sparse_rows(w);
  std::vector<Vector> in_x(m), in_y(m), out_x(m), out_y(m);
  for_each_agent(pool, m, [&](std::size_t j) {
    const AgentState& s = net.agents[j];
    in_x[j].resize(s.x.size());
    in_y[j].resize(s.y.size());
    simd::axpby(1.0, s.x, -hp.eta_x, s.v, in_x[j]);
    simd::axpby(1.0, s.y, hp.eta_y, s.u, in_y[j]);
    out_x[j].resize(s.x.size());
    out_y[j].resize(s.y.size());
  });
  gossip(rows, in_x, out_x, pool);
  gossip(rows, in_y, out_y, pool);
  for_each_agent(pool, m, [&](std::size_t i) {
    AgentState& s = net.agents[i];
    s.x_prev = std::move(s.x);
    s.y_prev = std::move(s.y);
    s.x = std::move(out_x[i]);
    s.y = std::move(out_y[i]);
    if (problem.constrained_y()) problem.project_y(s.y);
  });
}

void run_round(Network& net, const MinMaxProblem& problem, const HyperParams& hp,
               const MixingMatrix& w, Algorithm algo, WorkerPool* pool) {
  const std::size_t t = net.round;
  HyperParams eff = hp;
  if (!algo.noise) {
    eff.sigma_x = 0.0;
    eff.sigma_y = 0.0;
  }

  for_each_agent(pool, net.size(), [&](std::size_t i) {
    AgentState& s = net.agents[i];
    if (t >= 1) {
      const auto batch = sample_batch(net.seed, i, t, problem.shard_size(i), hp.batch);
      if (algo.storm) {
        storm_update(s, problem, i, batch, eff);
      } else {
        fresh_gradient_update(s, problem, i, batch, eff);
      }
    }
    inject_noise(s, eff, net.seed, i, t);
  });

  if (algo.tracking) {
    gradient_track(net, w, pool);
  } else {
    for (auto& s : net.agents) {
      s.v = s.g_star;
      s.u = s.h_star;
    }
  }

  mix_params(net, w, eff, problem, pool);

  for (std::size_t i = 0; i < net.size(); ++i) {
    const AgentState& s = net.agents[i];
    if (!all_finite(s.x)) throw NumericalError(t, i, "x iterate");
    if (!all_finite(s.y)) throw NumericalError(t, i, "y iterate");
    if (!all_finite(s.v) || !all_finite(s.u)) throw NumericalError(t, i, "tracked estimator");
  }
  net.round = t + 1;
}

RunRecord run_algorithm(Algorithm algo, Method label, const MinMaxProblem& problem,
                        const HyperParams& hp, const MixingMatrix& w, std::uint64_t seed,
                        const RunOptions& opts) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();

  RunRecord rec;
  rec.method = label;
  Network net = init_agents(problem, hp, w, seed, algo);

  auto out_rng = make_stream(seed, 0, 0, Purpose::output_index);
  rec.zeta = std::uniform_int_distribution<std::size_t>(1, hp.T)(out_rng);

  std::unique_ptr<WorkerPool> pool;
  if (opts.threads > 1) pool = std::make_unique<WorkerPool>(opts.threads);

  auto log_now = [&]() {
    LogRow row;
    row.iteration = net.round;
    const auto xs = net.stacked_x();
    const auto ys = net.stacked_y();
    row.x_bar = network_mean(xs);
    row.y_bar = network_mean(ys);
    row.consensus_x = consensus_error(xs);
    row.consensus_y = consensus_error(ys);
    row.grad_norm = std::numeric_limits<double>::quiet_NaN();
    if (opts.compute_stationarity) {
      row.grad_norm = stationarity_norm(problem, row.x_bar, row.y_bar, opts.stationarity);
    }
    if (opts.measure_time) {
      row.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
    }
    if (opts.logger) opts.logger(row);
    rec.rows.push_back(std::move(row));
  };

  for (std::size_t t = 0; t < hp.T; ++t) {
    run_round(net, problem, hp, w, algo, pool.get());
    if (net.round == rec.zeta) rec.x_out = net.mean_x();
    if (opts.on_round) opts.on_round(net.round, net);
    const bool periodic = opts.log_every > 0 && net.round % opts.log_every == 0;
    if (periodic || net.round == hp.T) log_now();
  }
  rec.x_final = net.mean_x();
  rec.y_final = net.mean_y();
  rec.final_state = std::move(net);
  return rec;
}

RunRecord run_method(Method method, const MinMaxProblem& problem, const HyperParams& hp,
                     const MixingMatrix& w, std::uint64_t seed, const RunOptions& opts) {
  return run_algorithm(algorithm_for(method), method, problem, hp, w, seed, opts);
}

RunRecord run_dpmixsgd(const MinMaxProblem& problem, const HyperParams& hp, const MixingMatrix& w,
                       std::uint64_t seed, const RunOptions& opts) {
  return run_method(Method::dpmixsgd, problem, hp, w, seed, opts);
}

RunRecord run_dm_hsgd(const MinMaxProblem& problem, const HyperParams& hp, const MixingMatrix& w,
                      std::uint64_t seed, const RunOptions& opts) {
  return run_method(Method::dm_hsgd, problem, hp, w, seed, opts);
}

RunRecord run_sgda(const MinMaxProblem& problem, const HyperParams& hp, const MixingMatrix& w,
                   std::uint64_t seed, const RunOptions& opts) {
  return run_method(Method::sgda, problem, hp, w, seed, opts);
}

RunRecord run_dp_sgda(const MinMaxProblem& problem, const HyperParams& hp, const MixingMatrix& w,
                      std::uint64_t seed, const RunOptions& opts) {
  return run_method(Method::dp_sgda, problem, hp, w, seed, opts);
}

}  // namespace dpmix
