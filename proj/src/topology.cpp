#include "dpmix/topology.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "dpmix/rng.hpp"

namespace dpmix {

namespace {

Graph::Edge normalize(std::size_t i, std::size_t j) {
  return i < j ? Graph::Edge{i, j} : Graph::Edge{j, i};
}

}  // namespace

Graph::Graph(std::size_t m) : m_(m) {
  if (m == 0) throw std::invalid_argument("graph needs at least one agent");
}

Graph::Graph(std::size_t m, std::vector<Edge> edges) : Graph(m) {
  for (auto [i, j] : edges) add_edge(i, j);
}

bool Graph::has_edge(std::size_t i, std::size_t j) const {
  return std::binary_search(edges_.begin(), edges_.end(), normalize(i, j));
}

bool Graph::add_edge(std::size_t i, std::size_t j) {
  if (i == j) throw std::invalid_argument("self-loop " + std::to_string(i));
  if (i >= m_ || j >= m_) throw std::out_of_range("edge endpoint outside agent range");
  const Edge e = normalize(i, j);
  auto it = std::lower_bound(edges_.begin(), edges_.end(), e);
  if (it != edges_.end() && *it == e) return false;
  edges_.insert(it, e);
  return true;
}

std::vector<std::size_t> Graph::degrees() const {
  std::vector<std::size_t> deg(m_, 0);
  for (auto [i, j] : edges_) {
    ++deg[i];
    ++deg[j];
  }
  return deg;
}

bool Graph::connected() const {
  // union-find
  std::vector<std::size_t> parent(m_);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  std::size_t components = m_;
  for (auto [i, j] : edges_) {
    auto a = find(i), b = find(j);
    if (a != b) {
      parent[a] = b;
      --components;
    }
  }
  return components == 1;
}

double Graph::sparsity() const {
  if (m_ < 2) return 0.0;
  return 2.0 * static_cast<double>(edges_.size()) /
         (static_cast<double>(m_) * static_cast<double>(m_ - 1));
}

Graph gen_erdos_renyi(std::size_t m, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("edge probability must lie in [0, 1]");
  Graph g(m);
  auto rng = make_stream(seed, 0, 0, Purpose::graph);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      // one draw per candidate edge even when p is 0 or 1
      if (u(rng) < p) g.add_edge(i, j);
    }
  }
  if (m > 1 && !g.connected()) {
    g.repaired = true;
    for (std::size_t i = 0; i < m; ++i) {
      if (g.add_edge(i, (i + 1) % m)) ++g.repair_edges_added;
    }
  }
  return g;
}

Graph ring_graph(std::size_t m) {
  Graph g(m);
  if (m > 1) {
    for (std::size_t i = 0; i < m; ++i) g.add_edge(i, (i + 1) % m);
  }
  return g;
}

Graph complete_graph(std::size_t m) {
  Graph g(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) g.add_edge(i, j);
  }
  return g;
}

SquareMatrix SquareMatrix::identity(std::size_t n) {
  SquareMatrix m(n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

SquareMatrix SquareMatrix::uniform(std::size_t n) {
  return SquareMatrix(n, 1.0 / static_cast<double>(n));
}

MixingMatrix metropolis_weights(const Graph& g) {
  if (!g.connected()) throw std::invalid_argument("graph must be connected");
  const std::size_t m = g.agents();
  const auto deg = g.degrees();
  SquareMatrix w(m);
  for (auto [i, j] : g.edges()) {
    const double wij = 1.0 / (1.0 + static_cast<double>(std::max(deg[i], deg[j])));
    w(i, j) = wij;
    w(j, i) = wij;
  }
  for (std::size_t i = 0; i < m; ++i) {
    double off = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i) off += w(i, j);
    }
    w(i, i) = 1.0 - off;
  }
  MixingMatrix out;
  out.lambda = spectral_gap(w);
  out.w = std::move(w);
  return out;
}

MixingMatrix make_mixing_matrix(SquareMatrix w) {
  const std::size_t m = w.n;
  if (w.data.size() != m * m) throw std::invalid_argument("mixing matrix must be square");
  for (std::size_t i = 0; i < m; ++i) {
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (w(i, j) < 0.0) throw std::invalid_argument("mixing matrix has a negative entry");
      if (w(i, j) != w(j, i)) throw std::invalid_argument("mixing matrix must be symmetric");
      row += w(i, j);
      col += w(j, i);
    }
    if (std::abs(row - 1.0) > 1e-12 || std::abs(col - 1.0) > 1e-12) {
      throw std::invalid_argument("mixing matrix must be doubly stochastic");
    }
  }
  MixingMatrix out;
  out.lambda = spectral_gap(w);
  out.w = std::move(w);
  return out;
}

double spectral_gap(std::span<const double> w, std::size_t rows, SpectralGapOptions opts) {
  if (rows == 0 || w.size() != rows * rows) {
    throw std::invalid_argument("spectral_gap: matrix must be square");
  }
  const std::size_t m = rows;
  const double inv_m = 1.0 / static_cast<double>(m);

  // D = W - J, materialized once.
  std::vector<double> d(w.begin(), w.end());
  for (double& e : d) e -= inv_m;

  auto apply = [&](const std::vector<double>& in, std::vector<double>& out, bool transpose) {
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        s += (transpose ? d[j * m + i] : d[i * m + j]) * in[j];
      }
      out[i] = s;
    }
  };

  // Fixed, non-constant start vector keeps the result deterministic.
  std::vector<double> v(m), tmp(m), mv(m);
  for (std::size_t i = 0; i < m; ++i) v[i] = 1.0 + std::sin(1.0 + 1.7 * static_cast<double>(i));
  auto normalize_vec = [](std::vector<double>& x) {
    double n = 0.0;
    for (double e : x) n += e * e;
    n = std::sqrt(n);
    if (n > 0.0) {
      for (double& e : x) e /= n;
    }
    return n;
  };
  if (normalize_vec(v) == 0.0) return 0.0;

  double rho = 0.0;
  for (std::size_t it = 0; it < opts.max_iter; ++it) {
    apply(v, tmp, false);
    apply(tmp, mv, true);
    rho = 0.0;
    for (std::size_t i = 0; i < m; ++i) rho += v[i] * mv[i];
    if (rho <= 0.0) {
      // v lies in the null space; only happens when D == 0 up to rounding.
      double n = 0.0;
      for (double e : mv) n += e * e;
      if (n == 0.0) return 0.0;
    }
    double res = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double r = mv[i] - rho * v[i];
      res += r * r;
    }
    v = mv;
    if (normalize_vec(v) == 0.0) return 0.0;
    if (std::sqrt(res) <= opts.rel_tol * std::abs(rho)) break;
  }
  // Final Rayleigh quotient with the last iterate.
  apply(v, tmp, false);
  double s = 0.0;
  for (double e : tmp) s += e * e;
  return std::sqrt(s);
}

double spectral_gap(const SquareMatrix& w, SpectralGapOptions opts) {
  return spectral_gap(w.data, w.n, opts);
}

void write_edge_list(std::ostream& os, const Graph& g) {
  os << "# m " << g.agents() << '\n';
  for (auto [i, j] : g.edges()) os << i << ' ' << j << '\n';
}

Graph read_edge_list(std::istream& is) {
  std::string line;
  std::size_t m = 0;
  std::vector<Graph::Edge> edges;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string key;
      if (hs >> key && key == "m") hs >> m;
      continue;
    }
    std::istringstream ls(line);
    std::size_t i = 0, j = 0;
    if (!(ls >> i >> j)) {
      throw std::runtime_error("edge list line " + std::to_string(line_no) + ": expected \"i j\"");
    }
    edges.emplace_back(i, j);
    m = std::max({m, i + 1, j + 1});
  }
  return Graph(m, std::move(edges));
}

}  // namespace dpmix
