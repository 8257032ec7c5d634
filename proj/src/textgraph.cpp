#include "g2sqg/textgraph.hpp"

#include <algorithm>

#include "g2sqg/errors.hpp"

namespace g2s {

GraphKind parse_graph_kind(std::string_view s) {
  if (s == "static") return GraphKind::Static;
  if (s == "dynamic") return GraphKind::Dynamic;
  throw ConfigError("graph.kind must be static or dynamic, got '" + std::string(s) + "'");
}

std::string_view graph_kind_name(GraphKind kind) { return kind == GraphKind::Static ? "static" : "dynamic"; }

std::size_t StaticGraph::edge_count() const {
  std::size_t n_edges = 0;
  for (const auto& out : outgoing) n_edges += out.size();
  return n_edges;
}

bool StaticGraph::has_edge(int from, int to) const {
  const auto& out = outgoing.at(static_cast<std::size_t>(from));
  return std::find(out.begin(), out.end(), to) != out.end();
}

StaticGraph build_static_graph(const PassageExample& ex) {
  StaticGraph g;
  g.n = static_cast<int>(ex.size());
  g.incoming.resize(ex.size());
  g.outgoing.resize(ex.size());
  auto link = [&g](int from, int to) {
    auto& out = g.outgoing[static_cast<std::size_t>(from)];
    if (std::find(out.begin(), out.end(), to) != out.end()) return;
    out.push_back(to);
    g.incoming[static_cast<std::size_t>(to)].push_back(from);
  };
  for (int i = 0; i < g.n; ++i) {
    const int head = ex.dep_head[static_cast<std::size_t>(i)];
    if (head >= 0) link(head, i);
  }
  for (std::size_t s = 0; s + 1 < ex.sent_bounds.size(); ++s) {
    const int last = ex.sent_bounds[s].second - 1;
    const int first = ex.sent_bounds[s + 1].first;
    link(last, first);
    link(first, last);
  }
  for (auto& v : g.incoming) std::sort(v.begin(), v.end());
  for (auto& v : g.outgoing) std::sort(v.begin(), v.end());
  return g;
}

}  // namespace g2s
