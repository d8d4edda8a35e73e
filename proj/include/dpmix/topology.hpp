#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dpmix {

/// Undirected simple graph over agents 0..m-1. Edges are stored with i < j,
/// sorted and unique.
class Graph {
 public:
  using Edge = std::pair<std::size_t, std::size_t>;

  explicit Graph(std::size_t m);
  Graph(std::size_t m, std::vector<Edge> edges);

  std::size_t agents() const noexcept { return m_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  std::size_t edge_count() const noexcept { return edges_.size(); }

  bool has_edge(std::size_t i, std::size_t j) const;
  // Returns false if the edge already existed.
  bool add_edge(std::size_t i, std::size_t j);

  std::vector<std::size_t> degrees() const;
  bool connected() const;

  /// 2|E| / (m(m-1)); zero for a single agent.
  double sparsity() const;

  // Set when gen_erdos_renyi had to repair a disconnected draw.
  bool repaired = false;
  std::size_t repair_edges_added = 0;

 private:
  std::size_t m_;
  std::vector<Edge> edges_;
};

/// Erdős–Rényi G(m, p). A disconnected draw (m > 1) is repaired by adding
/// every missing edge (i, i+1 mod m) of the agent-index ring; the repair is
/// recorded on the returned graph.
Graph gen_erdos_renyi(std::size_t m, double p, std::uint64_t seed);

Graph ring_graph(std::size_t m);
Graph complete_graph(std::size_t m);

/// Dense row-major m x m matrix.
struct SquareMatrix {
  std::size_t n = 0;
  std::vector<double> data;

  SquareMatrix() = default;
  explicit SquareMatrix(std::size_t n_, double fill = 0.0) : n(n_), data(n_ * n_, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * n + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * n + j]; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * n, n}; }

  static SquareMatrix identity(std::size_t n);
  static SquareMatrix uniform(std::size_t n);  // 11^T / n
};

struct MixingMatrix {
  SquareMatrix w;
  double lambda = 0.0;  // ||W - 11^T/m||_2

  std::size_t agents() const noexcept { return w.n; }
  bool satisfies_spectral_gap() const noexcept { return lambda < 1.0; }
};

/// Metropolis-Hastings weights. Throws std::invalid_argument if the graph is
/// disconnected.
MixingMatrix metropolis_weights(const Graph& g);

/// Wraps an explicit weight matrix and measures its spectral gap. Throws if
/// the matrix is not symmetric, nonnegative and doubly stochastic.
MixingMatrix make_mixing_matrix(SquareMatrix w);

struct SpectralGapOptions {
  double rel_tol = 1e-10;
  std::size_t max_iter = 10000;
};

/// Largest singular value of W - 11^T/m by power iteration on
/// (W-J)^T (W-J). `w` is row-major with `rows * rows` entries; throws
/// std::invalid_argument if it is not square.
double spectral_gap(std::span<const double> w, std::size_t rows,
                    SpectralGapOptions opts = {});
double spectral_gap(const SquareMatrix& w, SpectralGapOptions opts = {});

/// One "i j" pair per line, 0-indexed, preceded by a "# m <count>" header.
void write_edge_list(std::ostream& os, const Graph& g);
Graph read_edge_list(std::istream& is);

}  // namespace dpmix
