#pragma once

// Bidirectional gated graph encoder: per hop, aggregate incoming and outgoing
// neighbourhoods, fuse them with a learned gate, and update nodes with a GRU.

#include <string>
#include <string_view>

#include "g2sqg/nn.hpp"
#include "g2sqg/tape.hpp"

namespace g2s {

inline constexpr int kDefaultHops = 3;

/// Which aggregated direction is the gate's first argument.
enum class DirectionOrder { IncomingFirst, OutgoingFirst };

DirectionOrder parse_direction_order(std::string_view s);
std::string_view direction_order_name(DirectionOrder order);

/// Row-stochastic N x N weights for each direction. For static graphs these
/// are constants; for dynamic graphs they are tape outputs.
template <typename Scalar>
struct GraphOperator {
  Var<Scalar> incoming;
  Var<Scalar> outgoing;
};

/// Column v of the result is sum_u weights(v, u) * states(:, u).
template <typename Scalar>
Var<Scalar> aggregate(const Var<Scalar>& states, const Var<Scalar>& weights) {
  if (weights.rows() != states.cols() || weights.cols() != states.cols())
    throw ShapeError("aggregate: weights " + shape_string(weights.rows(), weights.cols()) + " for " +
                     std::to_string(states.cols()) + " nodes");
  return matmul(states, transpose(weights));
}

/// z * a + (1 - z) * b with z = sigmoid(Wz [a; b; a*b; a-b] + bz).
template <typename Scalar>
Var<Scalar> fuse(const Var<Scalar>& a, const Var<Scalar>& b, const Var<Scalar>& wz, const Var<Scalar>& bz) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("fuse: shapes " + shape_string(a.rows(), a.cols()) + " and " + shape_string(b.rows(), b.cols()));
  auto diff = sub(a, b);
  auto z = sigmoid(affine(wz, vcat({a, b, hadamard(a, b), diff}), bz));
  return add(b, hadamard(z, diff));
}

inline void add_biggnn_parameters(ParameterStore<float>& store, int d, Rng& rng) {
  store.add_weight("gnn.fuse.Wz", d, 4 * d, rng);
  store.add_zeros("gnn.fuse.bz", d, 1);
  add_gru_parameters(store, "gnn.gru", d, rng);
  store.add_weight("readout.W", d, d, rng);
  store.add_zeros("readout.b", d, 1);
  store.add_weight("init.c.W", d, d, rng);
  store.add_zeros("init.c.b", d, 1);
  store.add_weight("init.s.W", d, d, rng);
  store.add_zeros("init.s.b", d, 1);
}

/// `hops` rounds of aggregate / fuse / GRU with one shared parameter set.
template <typename Scalar>
Var<Scalar> graph_encode(const Var<Scalar>& x, const GraphOperator<Scalar>& graph, int hops,
                         const ParameterStore<Scalar>& params, DirectionOrder order = DirectionOrder::IncomingFirst) {
  if (hops < 0) throw ConfigError("gnn.hops must be nonnegative");
  auto& tape = x.tape();
  if (hops == 0) return x;
  const auto wz = tape.parameter(params, "gnn.fuse.Wz");
  const auto bz = tape.parameter(params, "gnn.fuse.bz");
  const auto gru = gru_weights(tape, params, "gnn.gru");
  Var<Scalar> h = x;
  for (int k = 0; k < hops; ++k) {
    auto in = aggregate(h, graph.incoming);
    auto out = aggregate(h, graph.outgoing);
    auto message = order == DirectionOrder::IncomingFirst ? fuse(in, out, wz, bz) : fuse(out, in, wz, bz);
    h = gru_cell(h, message, gru);
  }
  return h;
}

template <typename Scalar>
struct Readout {
  Var<Scalar> graph;  // h^G, d x 1
  Var<Scalar> c0;
  Var<Scalar> s0;
};

/// h^G = max over nodes of (W h + b); c0 and s0 are separate affine maps of h^G.
template <typename Scalar>
Readout<Scalar> graph_readout(const Var<Scalar>& h, const ParameterStore<Scalar>& params) {
  if (h.cols() == 0) throw EmptyInputError("graph_readout: no nodes");
  auto& tape = h.tape();
  auto projected = affine(tape.parameter(params, "readout.W"), h, tape.parameter(params, "readout.b"));
  auto pooled = max_pool(projected);
  return {pooled, affine(tape.parameter(params, "init.c.W"), pooled, tape.parameter(params, "init.c.b")),
          affine(tape.parameter(params, "init.s.W"), pooled, tape.parameter(params, "init.s.b"))};
}

}  // namespace g2s
