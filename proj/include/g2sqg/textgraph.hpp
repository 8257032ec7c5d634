#pragma once

// Passage graphs: dependency edges plus sentence-boundary links (static), or
// a learned similarity graph sparsified to K neighbours per node (dynamic).

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include "g2sqg/corpus.hpp"
#include "g2sqg/tape.hpp"

namespace g2s {

enum class GraphKind { Static, Dynamic };

GraphKind parse_graph_kind(std::string_view s);
std::string_view graph_kind_name(GraphKind kind);

inline constexpr int kDefaultNeighbours = 10;

struct StaticGraph {
  int n = 0;
  std::vector<std::vector<int>> incoming;  // incoming[v]: nodes u with an edge u -> v
  std::vector<std::vector<int>> outgoing;  // outgoing[u]: nodes v with an edge u -> v

  std::size_t edge_count() const;
  bool has_edge(int from, int to) const;
};

/// Edges head -> dependent for every non-root token, and both directions
/// between the last token of a sentence and the first token of the next.
StaticGraph build_static_graph(const PassageExample& example);

/// Row v holds 1/(1 + |neighbours|) at v and at each neighbour in the given
/// direction, so `states * M^T` averages self and neighbours.
template <typename Scalar>
Matrix<Scalar> mean_aggregation_matrix(const StaticGraph& g, bool incoming) {
  Matrix<Scalar> m = Matrix<Scalar>::Zero(g.n, g.n);
  for (int v = 0; v < g.n; ++v) {
    const auto& nb = incoming ? g.incoming[static_cast<std::size_t>(v)] : g.outgoing[static_cast<std::size_t>(v)];
    const Scalar w = Scalar(1) / static_cast<Scalar>(nb.size() + 1);
    m(v, v) = w;
    for (int u : nb) m(v, u) = w;
  }
  return m;
}

/// A = ReLU(U H)^T ReLU(U H).
template <typename Scalar>
Var<Scalar> dynamic_adjacency(const Var<Scalar>& h, const Var<Scalar>& u) {
  if (u.cols() != h.rows())
    throw ShapeError("dynamic_adjacency: U " + shape_string(u.rows(), u.cols()) + " does not match H " +
                     shape_string(h.rows(), h.cols()));
  auto p = relu(matmul(u, h));
  return matmul(transpose(p), p);
}

/// Per row, the diagonal plus the min(K, N) - 1 largest off-diagonal entries;
/// ties go to the lower column index.
template <typename Scalar>
Mask knn_mask(const Matrix<Scalar>& a, int k) {
  if (k < 1) throw ConfigError("knn.k must be at least 1");
  const Eigen::Index n = a.rows();
  Mask keep = Mask::Constant(n, n, false);
  std::vector<Eigen::Index> order;
  for (Eigen::Index r = 0; r < n; ++r) {
    keep(r, r) = true;
    order.clear();
    for (Eigen::Index c = 0; c < n; ++c)
      if (c != r) order.push_back(c);
    const auto extra = std::min<std::size_t>(static_cast<std::size_t>(k - 1), order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(extra), order.end(),
                      [&](Eigen::Index x, Eigen::Index y) { return a(r, x) > a(r, y) || (a(r, x) == a(r, y) && x < y); });
    for (std::size_t i = 0; i < extra; ++i) keep(r, order[i]) = true;
  }
  return keep;
}

template <typename Scalar>
struct DynamicGraph {
  Var<Scalar> adjacency;  // A, before sparsification
  Var<Scalar> incoming;   // masked row-softmax of the kept scores
  Var<Scalar> outgoing;   // masked row-softmax of their transpose
  Mask keep;              // kept entries of A
};

/// Keeps the K nearest neighbours per row (self always kept) and normalizes.
/// Gradients reach kept scores only.
template <typename Scalar>
DynamicGraph<Scalar> sparsify_normalize(const Var<Scalar>& a, int k) {
  if (a.rows() != a.cols()) throw ShapeError("sparsify_normalize: adjacency must be square");
  Mask keep = knn_mask(a.value(), k);
  Mask keep_t = keep.transpose();
  auto in = masked_softmax(a, keep, 1);
  auto out = masked_softmax(transpose(a), keep_t, 1);
  return {a, in, out, std::move(keep)};
}

}  // namespace g2s
