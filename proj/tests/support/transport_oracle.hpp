#pragma once

// Exhaustive transport solver: every vertex of the transport polytope is a
// basic solution supported on m + n - 1 cells, so trying every such cell set,
// solving the marginal equations and keeping the cheapest nonnegative
// solution gives the exact optimum. Only usable for a handful of words.

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace g2s::testing {

inline double brute_force_transport(const Eigen::VectorXd& supply, const Eigen::VectorXd& demand,
                                    const Eigen::MatrixXd& cost) {
  const int m = static_cast<int>(supply.size()), n = static_cast<int>(demand.size());
  const int cells = m * n, basis = m + n - 1;
  Eigen::VectorXd rhs(m + n);
  rhs << supply, demand;
  double best = std::numeric_limits<double>::infinity();
  std::vector<bool> pick(static_cast<std::size_t>(cells), false);
  std::fill(pick.begin(), pick.begin() + basis, true);
  do {
    std::vector<int> chosen;
    for (int c = 0; c < cells; ++c)
      if (pick[static_cast<std::size_t>(c)]) chosen.push_back(c);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m + n, basis);
    for (int k = 0; k < basis; ++k) {
      a(chosen[static_cast<std::size_t>(k)] / n, k) = 1;
      a(m + chosen[static_cast<std::size_t>(k)] % n, k) = 1;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    if (lu.rank() < basis) continue;
    Eigen::VectorXd x = lu.solve(rhs);
    if ((a * x - rhs).cwiseAbs().maxCoeff() > 1e-12 || x.minCoeff() < -1e-12) continue;
    double total = 0;
    for (int k = 0; k < basis; ++k) {
      const int c = chosen[static_cast<std::size_t>(k)];
      total += x(k) * cost(c / n, c % n);
    }
    best = std::min(best, total);
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return best;
}

/// Normalized bag of words in first-occurrence order.
inline std::pair<std::vector<std::string>, Eigen::VectorXd> bag_of_words(const std::vector<std::string>& tokens) {
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
  Eigen::VectorXd mass = Eigen::Map<Eigen::VectorXd>(counts.data(), static_cast<Eigen::Index>(counts.size()));
  return {words, mass / static_cast<double>(tokens.size())};
}

}  // namespace g2s::testing
