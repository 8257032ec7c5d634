#pragma once

#include "g2sqg/params.hpp"
#include "g2sqg/random.hpp"

namespace g2s::testing {

inline Matrix<double> random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo = -1.0,
                                    double hi = 1.0) {
  Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

}  // namespace g2s::testing
