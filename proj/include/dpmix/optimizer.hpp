#pragma once

// Decentralized min-max optimizers over a simulated network of m agents.
//
// All four methods share one round structure. Round t (t = 0..T-1):
//
//   1. estimator  (t >= 1) STORM: g_t = (1-b)(g_{t-1} - gF(x_{t-1}; z_t)) + gF(x_t; z_t)
//                 or a plain fresh gradient gF(x_t; z_t) for the SGDA family.
//                 At t = 0 the estimator is the b0-sample gradient from init.
//   2. noise      g*_t = g_t + N(0, sigma_x^2 I), h*_t = h_t + N(0, sigma_y^2 I)
//   3. tracking   v_t^i = sum_j w_ij (v_{t-1}^j + g*_t^j - g*_{t-1}^j)
//                 (or v_t = g*_t when tracking is off)
//   4. mixing     x_{t+1}^i = sum_j w_ij (x_t^j - eta_x v_t^j)
//                 y_{t+1}^i = P(sum_j w_ij (y_t^j + eta_y u_t^j))
//
// so a run performs exactly T parameter updates. Every cross-agent read in
// steps 3 and 4 targets values frozen at the end of the previous step, and
// all randomness comes from streams keyed by (seed, agent, t, purpose), so
// results do not depend on the number of worker threads.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dpmix/metrics.hpp"
#include "dpmix/objective.hpp"
#include "dpmix/topology.hpp"

namespace dpmix {

struct HyperParams {
  double eta_x = 0.01;
  double eta_y = 0.01;
  double beta_x = 0.1;
  double beta_y = 0.1;
  std::size_t b0 = 1;
  std::size_t batch = 1;
  std::size_t T = 1;
  double sigma_x = 0.0;
  double sigma_y = 0.0;
  std::optional<double> clip;

  void validate() const;
};

enum class Method { dpmixsgd, dm_hsgd, sgda, dp_sgda };

std::string_view method_name(Method m);
Method parse_method(std::string_view name);

/// Switches that distinguish the methods.
struct Algorithm {
  bool storm = true;     // recursive momentum estimator with b0 warm start
  bool tracking = true;  // gradient tracking of the noisy estimators
  bool noise = true;     // Gaussian perturbation of the shared estimators
};

Algorithm algorithm_for(Method m);

struct AgentState {
  Vector x, y;
  Vector x_prev, y_prev;
  Vector g, g_prev, h, h_prev;
  Vector g_star, g_star_prev, h_star, h_star_prev;
  Vector v, u;
  Vector noise_x, noise_y;  // last drawn perturbations
};

struct Network {
  std::vector<AgentState> agents;
  std::size_t round = 0;  // rounds completed (= parameter updates applied)
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return agents.size(); }
  std::vector<Vector> stacked_x() const;
  std::vector<Vector> stacked_y() const;
  Vector mean_x() const;
  Vector mean_y() const;
};

class NumericalError : public std::runtime_error {
 public:
  NumericalError(std::size_t iteration, std::size_t agent, const std::string& what);
  std::size_t iteration() const noexcept { return iteration_; }
  std::size_t agent() const noexcept { return agent_; }

 private:
  std::size_t iteration_, agent_;
};

/// Draws `size` sample positions uniformly with replacement from the
/// agent's shard using the (seed, agent, iteration, batch) stream. A size of
/// at least the shard size returns every position once.
std::vector<std::size_t> sample_batch(std::uint64_t seed, std::size_t agent, std::size_t iteration,
                                      std::size_t shard_size, std::size_t size);

/// Builds the round-0 network: identical x0, y0 on every agent, estimators
/// from a b0-sample batch (hp.batch when the algorithm has no STORM warm
/// start), and zero tracked/noisy history.
Network init_agents(const MinMaxProblem& problem, const HyperParams& hp, const MixingMatrix& w,
                    std::uint64_t seed, Algorithm algo = {});

/// Rescales v to norm <= clip in place.
void clip_to_norm(std::span<double> v, double clip);

/// STORM update of one agent's local estimators with batch z_t:
///   g_t = (1 - beta_x)(g_{t-1} - gF(x_{t-1}, y_{t-1}; z_t)) + gF(x_t, y_t; z_t)
/// and likewise for h with beta_y. Fresh gradients are clipped first when
/// hp.clip is set.
void storm_update(AgentState& s, const MinMaxProblem& problem, std::size_t agent,
                  std::span<const std::size_t> batch, const HyperParams& hp);

/// SGDA-family estimator: g_t = gF(x_t, y_t; z_t), h_t = gF_y(x_t, y_t; z_t).
void fresh_gradient_update(AgentState& s, const MinMaxProblem& problem, std::size_t agent,
                           std::span<const std::size_t> batch, const HyperParams& hp);

/// g* = g + N(0, sigma_x^2 I) and h* = h + N(0, sigma_y^2 I) using the
/// agent's (seed, agent, iteration) noise streams. Previous g*, h* are
/// shifted into the *_prev slots first.
void inject_noise(AgentState& s, const HyperParams& hp, std::uint64_t seed, std::size_t agent,
                  std::size_t iteration);

class WorkerPool;

/// Gradient tracking over W from a frozen snapshot of round t-1.
void gradient_track(Network& net, const MixingMatrix& w, WorkerPool* pool = nullptr);

/// Gossip step on the parameters, followed by projection of y when the
/// problem constrains it.
void mix_params(Network& net, const MixingMatrix& w, const HyperParams& hp,
                const MinMaxProblem& problem, WorkerPool* pool = nullptr);

/// Lines 2-13 of one round for every agent. Throws NumericalError on a
/// non-finite iterate.
void run_round(Network& net, const MinMaxProblem& problem, const HyperParams& hp,
               const MixingMatrix& w, Algorithm algo, WorkerPool* pool = nullptr);

struct LogRow {
  std::size_t iteration = 0;  // parameter updates applied so far
  Vector x_bar, y_bar;
  double consensus_x = 0.0;
  double consensus_y = 0.0;
  double grad_norm = 0.0;  // NaN when not computed
  double wall_ms = 0.0;
};

struct RunOptions {
  std::size_t log_every = 0;  // 0 logs only the final iterate
  bool compute_stationarity = true;
  StationarityConfig stationarity;
  std::size_t threads = 1;
  bool measure_time = false;
  std::function<void(const LogRow&)> logger;
  // Called after every round with the updated network.
  std::function<void(std::size_t round, const Network&)> on_round;
};

struct RunRecord {
  Method method = Method::dpmixsgd;
  std::vector<LogRow> rows;
  std::size_t zeta = 0;  // output round, uniform on {1..T}
  Vector x_out;          // network mean x at round zeta
  Vector x_final, y_final;
  Network final_state;
};

RunRecord run_method(Method method, const MinMaxProblem& problem, const HyperParams& hp,
                     const MixingMatrix& w, std::uint64_t seed, const RunOptions& opts = {});

/// Runs with explicit algorithm switches; method is only recorded.
RunRecord run_algorithm(Algorithm algo, Method label, const MinMaxProblem& problem,
                        const HyperParams& hp, const MixingMatrix& w, std::uint64_t seed,
                        const RunOptions& opts = {});

RunRecord run_dpmixsgd(const MinMaxProblem& problem, const HyperParams& hp, const MixingMatrix& w,
                       std::uint64_t seed, const RunOptions& opts = {});
RunRecord run_dm_hsgd(const MinMaxProblem& problem, const HyperParams& hp, const MixingMatrix& w,
                      std::uint64_t seed, const RunOptions& opts = {});
RunRecord run_sgda(const MinMaxProblem& problem, const HyperParams& hp, const MixingMatrix& w,
                   std::uint64_t seed, const RunOptions& opts = {});
RunRecord run_dp_sgda(const MinMaxProblem& problem, const HyperParams& hp, const MixingMatrix& w,
                      std::uint64_t seed, const RunOptions& opts = {});

}  // namespace dpmix
