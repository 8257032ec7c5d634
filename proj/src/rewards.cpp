#include "g2sqg/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "g2sqg/errors.hpp"

namespace g2s {

NgramStats& NgramStats::operator+=(const NgramStats& o) {
  for (std::size_t n = 0; n < 4; ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  candidate_length += o.candidate_length;
  reference_length += o.reference_length;
  return *this;
}

namespace {

std::map<std::vector<std::string>, int> count_ngrams(std::span<const std::string> tokens, std::size_t n) {
  std::map<std::vector<std::string>, int> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n)];
  return counts;
}

double brevity_penalty(double c, double r) {
  if (c <= 0) return 0;
  return c > r ? 1.0 : std::exp(1.0 - r / c);
}

}  // namespace

NgramStats ngram_stats(std::span<const std::string> candidate, std::span<const std::string> reference) {
  NgramStats s;
  s.candidate_length = static_cast<double>(candidate.size());
  s.reference_length = static_cast<double>(reference.size());
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto cand = count_ngrams(candidate, n);
    const auto ref = count_ngrams(reference, n);
    for (const auto& [gram, count] : cand) {
      s.totals[n - 1] += count;
      auto it = ref.find(gram);
      if (it != ref.end()) s.matches[n - 1] += std::min(count, it->second);
    }
  }
  return s;
}

double bleu4(std::span<const std::string> candidate, std::span<const std::string> reference, BleuMode mode) {
  if (reference.empty()) throw MetricError("bleu4: empty reference");
  if (candidate.empty()) return 0;
  const auto s = ngram_stats(candidate, reference);
  double log_sum = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    double m = s.matches[n], t = s.totals[n];
    if (mode == BleuMode::Sentence && n > 0) {
      m += 1;
      t += 1;
    }
    if (m <= 0 || t <= 0) return 0;
    log_sum += std::log(m / t);
  }
  return brevity_penalty(s.candidate_length, s.reference_length) * std::exp(log_sum / 4);
}

double corpus_bleu4(std::span<const Tokens> candidates, std::span<const Tokens> references) {
  if (candidates.size() != references.size()) throw MetricError("corpus_bleu4: candidate and reference counts differ");
  if (candidates.empty()) throw MetricError("corpus_bleu4: empty corpus");
  NgramStats total;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (references[i].empty()) throw MetricError("corpus_bleu4: empty reference");
    total += ngram_stats(candidates[i], references[i]);
  }
  double log_sum = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (total.matches[n] <= 0) return 0;
    log_sum += std::log(total.matches[n] / total.totals[n]);
  }
  return brevity_penalty(total.candidate_length, total.reference_length) * std::exp(log_sum / 4);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference, double beta) {
  if (reference.empty()) throw MetricError("rouge_l: empty reference");
  if (candidate.empty()) return 0;
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0) return 0;
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  const double b2 = beta * beta;
  return (1 + b2) * p * r / (r + b2 * p);
}

Eigen::VectorXd WordEmbedder::operator()(const std::string& token) const {
  return vectors_->row(vocab_->id(token)).transpose().cast<double>();
}

double transport_cost(const Eigen::VectorXd& supply, const Eigen::VectorXd& demand, const Eigen::MatrixXd& cost) {
  const auto m = static_cast<int>(supply.size());
  const auto n = static_cast<int>(demand.size());
  if (cost.rows() != m || cost.cols() != n) throw ShapeError("transport_cost: cost matrix shape mismatch");
  if (m == 0 || n == 0) throw MetricError("transport_cost: empty distribution");
  if ((supply.array() < 0).any() || (demand.array() < 0).any()) throw MetricError("transport_cost: negative mass");
  const double mass = supply.sum();
  if (std::abs(mass - demand.sum()) > 1e-9 * std::max(1.0, mass))
    throw MetricError("transport_cost: supply and demand totals differ");

  // Successive shortest paths on the bipartite network
  // source -> supply i -> demand j -> sink, with Bellman-Ford on the residual graph.
  const int source = m + n, sink = m + n + 1, nodes = m + n + 2;
  struct Edge {
    int to;
    double cap;
    double cost;
  };
  std::vector<Edge> edges;
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(nodes));
  auto add_edge = [&](int u, int v, double cap, double c) {
    adj[static_cast<std::size_t>(u)].push_back(static_cast<int>(edges.size()));
    edges.push_back({v, cap, c});
    adj[static_cast<std::size_t>(v)].push_back(static_cast<int>(edges.size()));
    edges.push_back({u, 0.0, -c});
  };
  const double inf = std::numeric_limits<double>::infinity();
  for (int i = 0; i < m; ++i) add_edge(source, i, supply(i), 0);
  for (int j = 0; j < n; ++j) add_edge(m + j, sink, demand(j), 0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) add_edge(i, m + j, inf, cost(i, j));

  const double eps = 1e-15;
  double remaining = mass, total = 0;
  std::vector<double> dist(static_cast<std::size_t>(nodes));
  std::vector<int> via(static_cast<std::size_t>(nodes));
  while (remaining > eps * std::max(1.0, mass)) {
    std::fill(dist.begin(), dist.end(), inf);
    std::fill(via.begin(), via.end(), -1);
    dist[static_cast<std::size_t>(source)] = 0;
    for (int round = 0; round < nodes; ++round) {
      bool changed = false;
      for (int u = 0; u < nodes; ++u) {
        if (dist[static_cast<std::size_t>(u)] == inf) continue;
        for (int e : adj[static_cast<std::size_t>(u)]) {
          const Edge& ed = edges[static_cast<std::size_t>(e)];
          if (ed.cap <= eps) continue;
          const double nd = dist[static_cast<std::size_t>(u)] + ed.cost;
          if (nd < dist[static_cast<std::size_t>(ed.to)] - 1e-15) {
            dist[static_cast<std::size_t>(ed.to)] = nd;
            via[static_cast<std::size_t>(ed.to)] = e;
            changed = true;
          }
        }
      }
      if (!changed) break;
    }
    if (via[static_cast<std::size_t>(sink)] < 0) break;
    double push = remaining;
    for (int v = sink; v != source;) {
      const int e = via[static_cast<std::size_t>(v)];
      push = std::min(push, edges[static_cast<std::size_t>(e)].cap);
      v = edges[static_cast<std::size_t>(e ^ 1)].to;
    }
    for (int v = sink; v != source;) {
      const int e = via[static_cast<std::size_t>(v)];
      edges[static_cast<std::size_t>(e)].cap -= push;
      edges[static_cast<std::size_t>(e ^ 1)].cap += push;
      total += push * edges[static_cast<std::size_t>(e)].cost;
      v = edges[static_cast<std::size_t>(e ^ 1)].to;
    }
    remaining -= push;
  }
  return std::max(total, 0.0);
}

double wmd(std::span<const std::string> candidate, std::span<const std::string> reference, const WordEmbedder& embed) {
  if (candidate.empty() || reference.empty()) throw MetricError("wmd: empty input");
  auto bag = [](std::span<const std::string> tokens) {
    std::vector<std::string> words;
    std::vector<double> counts;
    for (const auto& t : tokens) {
      auto it = std::find(words.begin(), words.end(), t);
      if (it == words.end()) {
        words.push_back(t);
        counts.push_back(1);
      } else {
        counts[static_cast<std::size_t>(it - words.begin())] += 1;
      }
    }
    Eigen::VectorXd mass(static_cast<Eigen::Index>(counts.size()));
    for (std::size_t i = 0; i < counts.size(); ++i)
      mass(static_cast<Eigen::Index>(i)) = counts[i] / static_cast<double>(tokens.size());
    return std::pair{words, mass};
  };
  const auto [cw, cm] = bag(candidate);
  const auto [rw, rm] = bag(reference);
  std::vector<Eigen::VectorXd> cv, rv;
  for (const auto& w : cw) cv.push_back(embed(w));
  for (const auto& w : rw) rv.push_back(embed(w));
  Eigen::MatrixXd cost(cm.size(), rm.size());
  for (Eigen::Index i = 0; i < cm.size(); ++i)
    for (Eigen::Index j = 0; j < rm.size(); ++j)
      cost(i, j) = (cv[static_cast<std::size_t>(i)] - rv[static_cast<std::size_t>(j)]).norm();
  return transport_cost(cm, rm, cost);
}

RewardReport total_reward(std::span<const std::string> candidate, std::span<const std::string> reference,
                          const WordEmbedder& embed, double alpha) {
  if (alpha < 0) throw ConfigError("loss.alpha must be nonnegative");
  RewardReport r;
  r.alpha = alpha;
  r.bleu4 = bleu4(candidate, reference, BleuMode::Sentence);
  r.rouge_l = rouge_l(candidate, reference);
  static const std::vector<std::string> kUnkOnly{std::string(Vocabulary::kSpecials[Vocabulary::kUnk])};
  r.wmd = wmd(candidate.empty() ? std::span<const std::string>(kUnkOnly) : candidate, reference, embed);
  r.f_sem = 1.0 / (1.0 + r.wmd);
  r.total = r.bleu4 + alpha * r.f_sem;
  return r;
}

}  // namespace g2s
