#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <map>
#include <string>

#include "g2sqg/errors.hpp"
#include "g2sqg/random.hpp"

namespace g2s {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Named dense arrays. Iteration order is the lexicographic name order, which
/// fixes the layout of checkpoints and optimizer state.
template <typename Scalar>
class ParameterStore {
 public:
  using Mat = Matrix<Scalar>;
  using Map = std::map<std::string, Mat, std::less<>>;

  void set(const std::string& name, Mat value) { tensors_[name] = std::move(value); }

  /// Adds a tensor drawn from uniform(-bound, bound).
  void add_uniform(const std::string& name, Eigen::Index rows, Eigen::Index cols, double bound,
                   Rng& rng) {
    Mat m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(rng.uniform(-bound, bound));
    set(name, std::move(m));
  }

  /// Glorot-uniform weight matrix.
  void add_weight(const std::string& name, Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    add_uniform(name, rows, cols, std::sqrt(6.0 / static_cast<double>(rows + cols)), rng);
  }

  void add_zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    set(name, Mat::Zero(rows, cols));
  }

  bool contains(std::string_view name) const { return tensors_.find(name) != tensors_.end(); }

  const Mat& at(std::string_view name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
    return it->second;
  }

  Mat& at(std::string_view name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
    return it->second;
  }

  std::size_t size() const { return tensors_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, m] : tensors_) n += static_cast<std::size_t>(m.size());
    return n;
  }

  template <typename Other>
  ParameterStore<Other> cast() const {
    ParameterStore<Other> out;
    for (const auto& [name, m] : tensors_) out.set(name, m.template cast<Other>());
    return out;
  }

  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }

  bool operator==(const ParameterStore& other) const {
    if (tensors_.size() != other.tensors_.size()) return false;
    auto it = other.tensors_.begin();
    for (const auto& [name, m] : tensors_) {
      if (name != it->first || m.rows() != it->second.rows() || m.cols() != it->second.cols())
        return false;
      if (m.size() > 0 && std::memcmp(m.data(), it->second.data(), sizeof(Scalar) * m.size()) != 0)
        return false;
      ++it;
    }
    return true;
  }

 private:
  Map tensors_;
};

/// Gradients keyed like the store they belong to.
template <typename Scalar>
using GradientStore = ParameterStore<Scalar>;

}  // namespace g2s
