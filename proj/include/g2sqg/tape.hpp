#pragma once

// Reverse-mode differentiation over dense Eigen matrices.
//
// A Tape owns every intermediate value of one forward pass. Operations are
// free functions over Var handles; each appends one node whose backward rule
// is selected by its Op tag. The set of Ops is closed: anything that is not a
// primitive below must be composed from primitives.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "g2sqg/errors.hpp"
#include "g2sqg/params.hpp"

namespace g2s {

/// Keep-mask: true marks an entry that participates.
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

enum class Op : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  Relu,
  Sigmoid,
  Tanh,
  Exp,
  Log,
  Concat,
  MaskedSoftmax,
  Min,
  MaxPool,
  GatherRows,
  Scale,
  Sum,
  Transpose,
  SliceRows,
  SliceCols,
};

inline constexpr std::array kPrimitives = {
    Op::MatMul, Op::Add,        Op::Sub,   Op::Mul,        Op::Relu,      Op::Sigmoid,   Op::Tanh,
    Op::Exp,    Op::Log,        Op::Concat, Op::MaskedSoftmax, Op::Min,   Op::MaxPool,   Op::GatherRows,
    Op::Scale,  Op::Sum,        Op::Transpose, Op::SliceRows, Op::SliceCols,
};

constexpr const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Relu: return "relu";
    case Op::Sigmoid: return "sigmoid";
    case Op::Tanh: return "tanh";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Concat: return "concat";
    case Op::MaskedSoftmax: return "masked_softmax";
    case Op::Min: return "min";
    case Op::MaxPool: return "max_pool";
    case Op::GatherRows: return "gather_rows";
    case Op::Scale: return "scale";
    case Op::Sum: return "sum";
    case Op::Transpose: return "transpose";
    case Op::SliceRows: return "slice_rows";
    case Op::SliceCols: return "slice_cols";
  }
  return "?";
}

inline std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename Scalar>
class Tape;

template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  Tape<Scalar>& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Matrix<Scalar>& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;

  struct Node {
    Op op = Op::Leaf;
    std::vector<int> inputs;
    Mat value;
    bool requires_grad = false;
    int axis = 0;
    Scalar alpha = 0;
    std::vector<Eigen::Index> index;
    Mask mask;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Mat value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
  }

  /// Leaf that receives a gradient.
  Var<Scalar> variable(Mat value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    return push(std::move(n));
  }

  /// Leaf bound to a named parameter; repeated requests return the same node.
  Var<Scalar> parameter(const ParameterStore<Scalar>& store, const std::string& name) {
    if (auto it = param_index_.find(name); it != param_index_.end()) return {this, it->second};
    Var<Scalar> v = variable(store.at(name));
    param_index_.emplace(name, v.id());
    params_.emplace_back(name, v.id());
    return v;
  }

  /// Appends an operation node. Used by the primitive functions below.
  Var<Scalar> record(Node n) {
    if (!n.value.allFinite())
      throw NumericError(std::string("non-finite output from ") + op_name(n.op));
    for (int in : n.inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
    return push(std::move(n));
  }

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  const Mat& value(const Var<Scalar>& v) const { return node(v.id()).value; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a 1x1 loss. Gradients from an earlier sweep are discarded.
  void backward(const Var<Scalar>& loss) {
    const Node& root = node(loss.id());
    if (root.value.rows() != 1 || root.value.cols() != 1)
      throw ShapeError("backward needs a 1x1 loss, got " +
                       shape_string(root.value.rows(), root.value.cols()));
    grads_.assign(nodes_.size(), Mat());
    grads_[static_cast<std::size_t>(loss.id())] = Mat::Ones(1, 1);
    for (int id = loss.id(); id >= 0; --id) {
      const Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.op == Op::Leaf || !n.requires_grad || grads_[static_cast<std::size_t>(id)].size() == 0)
        continue;
      backprop(id);
    }
  }

  /// Gradient of the last backward sweep; zeros where nothing flowed.
  Mat grad(const Var<Scalar>& v) const {
    const auto id = static_cast<std::size_t>(v.id());
    if (id < grads_.size() && grads_[id].size() > 0) return grads_[id];
    return Mat::Zero(node(v.id()).value.rows(), node(v.id()).value.cols());
  }

  /// Gradients for every parameter requested from this tape.
  GradientStore<Scalar> parameter_gradients() const {
    GradientStore<Scalar> out;
    for (const auto& [name, id] : params_) out.set(name, grad(Var<Scalar>(const_cast<Tape*>(this), id)));
    return out;
  }

  /// into[name] += weight * grad(name) for every parameter on the tape.
  void accumulate_gradients(GradientStore<Scalar>& into, Scalar weight) const {
    for (const auto& [name, id] : params_) {
      const auto slot = static_cast<std::size_t>(id);
      if (slot >= grads_.size() || grads_[slot].size() == 0) continue;
      if (!into.contains(name)) into.set(name, Mat::Zero(grads_[slot].rows(), grads_[slot].cols()));
      into.at(name) += weight * grads_[slot];
    }
  }

  /// Hash of every branch taken at a non-differentiable point (ReLU sign,
  /// min choice, max-pool argmax, softmax mask, log floor). Two forward passes
  /// with equal signatures evaluated the same smooth piece.
  std::uint64_t kink_signature() const { return kink_hash_; }

  void note_branch(std::uint64_t token) {
    kink_hash_ ^= token;
    kink_hash_ *= 1099511628211ULL;
  }

 private:
  Var<Scalar> push(Node n) {
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
  }

  Mat& slot(int id) {
    Mat& g = grads_[static_cast<std::size_t>(id)];
    if (g.size() == 0) g = Mat::Zero(nodes_[id].value.rows(), nodes_[id].value.cols());
    return g;
  }

  bool wants(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  // Expands a broadcast right operand to the output shape.
  static Mat expand(const Mat& b, int mode, Eigen::Index rows, Eigen::Index cols) {
    if (mode == 0) return b;
    if (mode == 1) return b.col(0).replicate(1, cols);
    return Mat::Constant(rows, cols, b(0, 0));
  }

  // Sums a full-shape gradient back down to a broadcast operand's shape.
  static Mat reduce(const Mat& g, int mode) {
    if (mode == 0) return g;
    if (mode == 1) return g.rowwise().sum();
    return Mat::Constant(1, 1, g.sum());
  }

  void backprop(int id);

  std::vector<Node> nodes_;
  std::vector<Mat> grads_;
  std::vector<std::pair<std::string, int>> params_;
  std::unordered_map<std::string, int> param_index_;
  std::uint64_t kink_hash_ = 1469598103934665603ULL;
};

template <typename Scalar>
const Matrix<Scalar>& Var<Scalar>::value() const {
  return tape_->value(*this);
}

template <typename Scalar>
void Tape<Scalar>::backprop(int id) {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  const Mat& g = grads_[static_cast<std::size_t>(id)];
  const auto& in = n.inputs;
  const bool binary = n.op == Op::MatMul || n.op == Op::Add || n.op == Op::Sub || n.op == Op::Mul ||
                      n.op == Op::Min || n.op == Op::Concat;
  if (!binary && !wants(in[0])) return;
  auto val = [&](std::size_t k) -> const Mat& { return nodes_[in[k]].value; };

  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::MatMul:
      if (wants(in[0])) slot(in[0]).noalias() += g * val(1).transpose();
      if (wants(in[1])) slot(in[1]).noalias() += val(0).transpose() * g;
      break;
    case Op::Add:
      if (wants(in[0])) slot(in[0]) += g;
      if (wants(in[1])) slot(in[1]) += reduce(g, n.axis);
      break;
    case Op::Sub:
      if (wants(in[0])) slot(in[0]) += g;
      if (wants(in[1])) slot(in[1]) -= reduce(g, n.axis);
      break;
    case Op::Mul:
      if (wants(in[0]))
        slot(in[0]).array() += g.array() * expand(val(1), n.axis, g.rows(), g.cols()).array();
      if (wants(in[1])) {
        Mat prod = (g.array() * val(0).array()).matrix();
        slot(in[1]) += reduce(prod, n.axis);
      }
      break;
    case Op::Relu:
      slot(in[0]).array() += (val(0).array() > Scalar(0)).select(g.array(), Scalar(0));
      break;
    case Op::Sigmoid:
      slot(in[0]).array() += g.array() * n.value.array() * (Scalar(1) - n.value.array());
      break;
    case Op::Tanh:
      slot(in[0]).array() += g.array() * (Scalar(1) - n.value.array().square());
      break;
    case Op::Exp:
      slot(in[0]).array() += g.array() * n.value.array();
      break;
    case Op::Log:
      slot(in[0]).array() += (val(0).array() >= n.alpha).select(g.array() / val(0).array(), Scalar(0));
      break;
    case Op::Concat: {
      Eigen::Index offset = 0;
      for (int part : in) {
        const Mat& v = nodes_[part].value;
        if (n.axis == 0) {
          if (wants(part)) slot(part) += g.middleRows(offset, v.rows());
          offset += v.rows();
        } else {
          if (wants(part)) slot(part) += g.middleCols(offset, v.cols());
          offset += v.cols();
        }
      }
      break;
    }
    case Op::MaskedSoftmax: {
      const Mat& y = n.value;
      Mat& dx = slot(in[0]);
      if (n.axis == 1) {
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
          const Scalar dot = g.row(r).dot(y.row(r));
          dx.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
        }
      } else {
        for (Eigen::Index c = 0; c < y.cols(); ++c) {
          const Scalar dot = g.col(c).dot(y.col(c));
          dx.col(c).array() += y.col(c).array() * (g.col(c).array() - dot);
        }
      }
      break;
    }
    case Op::Min: {
      // Ties route to the first argument.
      auto first = (val(0).array() <= val(1).array());
      if (wants(in[0])) slot(in[0]).array() += first.select(g.array(), Scalar(0));
      if (wants(in[1])) slot(in[1]).array() += first.select(Scalar(0), g.array());
      break;
    }
    case Op::MaxPool: {
      Mat& dx = slot(in[0]);
      for (Eigen::Index r = 0; r < g.rows(); ++r) dx(r, n.index[static_cast<std::size_t>(r)]) += g(r, 0);
      break;
    }
    case Op::GatherRows: {
      Mat& dt = slot(in[0]);
      for (std::size_t i = 0; i < n.index.size(); ++i) dt.row(n.index[i]) += g.row(static_cast<Eigen::Index>(i));
      break;
    }
    case Op::Scale:
      slot(in[0]) += n.alpha * g;
      break;
    case Op::Sum:
      slot(in[0]).array() += g(0, 0);
      break;
    case Op::Transpose:
      slot(in[0]) += g.transpose();
      break;
    case Op::SliceRows:
      slot(in[0]).middleRows(n.index[0], n.index[1]) += g;
      break;
    case Op::SliceCols:
      slot(in[0]).middleCols(n.index[0], n.index[1]) += g;
      break;
  }
}

// ---------------------------------------------------------------------------
// Primitives

namespace detail {

template <typename Scalar>
typename Tape<Scalar>::Node make_node(Op op, std::initializer_list<Var<Scalar>> inputs) {
  typename Tape<Scalar>::Node n;
  n.op = op;
  for (const auto& v : inputs) n.inputs.push_back(v.id());
  return n;
}

// 0: same shape, 1: column vector repeated across columns, 2: 1x1 scalar.
template <typename Scalar>
int broadcast_mode(const char* op, const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return 0;
  if (b.rows() == a.rows() && b.cols() == 1) return 1;
  if (b.rows() == 1 && b.cols() == 1) return 2;
  throw ShapeError(std::string(op) + ": cannot combine " + shape_string(a.rows(), a.cols()) +
                   " with " + shape_string(b.rows(), b.cols()));
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.rows())
    throw ShapeError("matmul: inner dimensions differ for " + shape_string(A.rows(), A.cols()) +
                     " and " + shape_string(B.rows(), B.cols()));
  auto n = detail::make_node<Scalar>(Op::MatMul, {a, b});
  n.value.noalias() = A * B;
  return a.tape().record(std::move(n));
}

template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) {
  return matmul(a, b);
}

/// a + b; b may be a same-shape matrix, a column vector broadcast across
/// columns, or a 1x1 scalar.
template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto n = detail::make_node<Scalar>(Op::Add, {a, b});
  n.axis = detail::broadcast_mode("add", a.value(), b.value());
  if (n.axis == 0) n.value = a.value() + b.value();
  else if (n.axis == 1) n.value = a.value().colwise() + b.value().col(0);
  else n.value = (a.value().array() + b.value()(0, 0)).matrix();
  return a.tape().record(std::move(n));
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  return add(a, b);
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto n = detail::make_node<Scalar>(Op::Sub, {a, b});
  n.axis = detail::broadcast_mode("sub", a.value(), b.value());
  if (n.axis == 0) n.value = a.value() - b.value();
  else if (n.axis == 1) n.value = a.value().colwise() - b.value().col(0);
  else n.value = (a.value().array() - b.value()(0, 0)).matrix();
  return a.tape().record(std::move(n));
}

template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) {
  return sub(a, b);
}

/// Elementwise product with the same broadcasting rules as add.
template <typename Scalar>
Var<Scalar> hadamard(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto n = detail::make_node<Scalar>(Op::Mul, {a, b});
  n.axis = detail::broadcast_mode("mul", a.value(), b.value());
  if (n.axis == 0) n.value = (a.value().array() * b.value().array()).matrix();
  else if (n.axis == 1) n.value = (a.value().array().colwise() * b.value().col(0).array()).matrix();
  else n.value = a.value() * b.value()(0, 0);
  return a.tape().record(std::move(n));
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  auto n = detail::make_node<Scalar>(Op::Relu, {x});
  n.value = x.value().cwiseMax(Scalar(0));
  auto& tape = x.tape();
  const auto& v = x.value();
  for (Eigen::Index i = 0; i < v.size(); ++i) tape.note_branch(v.data()[i] > Scalar(0) ? 0x11 : 0x10);
  return tape.record(std::move(n));
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
  auto n = detail::make_node<Scalar>(Op::Sigmoid, {x});
  n.value = x.value().unaryExpr([](Scalar v) {
    if (v >= 0) return Scalar(1) / (Scalar(1) + std::exp(-v));
    const Scalar e = std::exp(v);
    return e / (Scalar(1) + e);
  });
  return x.tape().record(std::move(n));
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& x) {
  auto n = detail::make_node<Scalar>(Op::Tanh, {x});
  n.value = x.value().array().tanh().matrix();
  return x.tape().record(std::move(n));
}

template <typename Scalar>
Var<Scalar> exp(const Var<Scalar>& x) {
  auto n = detail::make_node<Scalar>(Op::Exp, {x});
  n.value = x.value().array().exp().matrix();
  return x.tape().record(std::move(n));
}

/// log(max(x, floor)); entries below the floor get zero gradient.
template <typename Scalar>
Var<Scalar> log(const Var<Scalar>& x, Scalar floor = Scalar(0)) {
  auto n = detail::make_node<Scalar>(Op::Log, {x});
  n.alpha = floor;
  n.value = x.value().cwiseMax(floor).array().log().matrix();
  auto& tape = x.tape();
  const auto& v = x.value();
  for (Eigen::Index i = 0; i < v.size(); ++i) tape.note_branch(v.data()[i] >= floor ? 0x21 : 0x20);
  return tape.record(std::move(n));
}

/// Concatenation; axis 0 stacks vertically, axis 1 side by side.
template <typename Scalar>
Var<Scalar> concat(std::span<const Var<Scalar>> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  auto& tape = parts.front().tape();
  typename Tape<Scalar>::Node n;
  n.op = Op::Concat;
  n.axis = axis;
  Eigen::Index rows = 0, cols = 0;
  const auto& first = parts.front().value();
  for (const auto& p : parts) {
    const auto& v = p.value();
    if (axis == 0) {
      if (v.cols() != first.cols())
        throw ShapeError("concat: column counts differ (" + shape_string(first.rows(), first.cols()) +
                         " vs " + shape_string(v.rows(), v.cols()) + ")");
      rows += v.rows();
      cols = v.cols();
    } else {
      if (v.rows() != first.rows())
        throw ShapeError("concat: row counts differ (" + shape_string(first.rows(), first.cols()) +
                         " vs " + shape_string(v.rows(), v.cols()) + ")");
      cols += v.cols();
      rows = v.rows();
    }
    n.inputs.push_back(p.id());
  }
  n.value.resize(rows, cols);
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    if (axis == 0) {
      n.value.middleRows(offset, v.rows()) = v;
      offset += v.rows();
    } else {
      n.value.middleCols(offset, v.cols()) = v;
      offset += v.cols();
    }
  }
  return tape.record(std::move(n));
}

template <typename Scalar>
Var<Scalar> vcat(std::initializer_list<Var<Scalar>> parts) {
  return concat<Scalar>(std::span<const Var<Scalar>>(parts.begin(), parts.size()), 0);
}

template <typename Scalar>
Var<Scalar> hcat(const std::vector<Var<Scalar>>& parts) {
  return concat<Scalar>(std::span<const Var<Scalar>>(parts), 1);
}

template <typename Scalar>
Var<Scalar> vcat(const std::vector<Var<Scalar>>& parts) {
  return concat<Scalar>(std::span<const Var<Scalar>>(parts), 0);
}

/// Softmax over `axis` (1: each row is a distribution, 0: each column is).
/// Entries whose keep-mask is false are exactly zero and get no gradient.
/// An empty mask keeps everything.
template <typename Scalar>
Var<Scalar> masked_softmax(const Var<Scalar>& x, const Mask& keep, int axis) {
  const auto& X = x.value();
  const bool masked = keep.size() > 0;
  if (masked && (keep.rows() != X.rows() || keep.cols() != X.cols()))
    throw ShapeError("masked_softmax: mask " + shape_string(keep.rows(), keep.cols()) +
                     " does not match input " + shape_string(X.rows(), X.cols()));
  auto n = detail::make_node<Scalar>(Op::MaskedSoftmax, {x});
  n.axis = axis;
  n.value = Matrix<Scalar>::Zero(X.rows(), X.cols());
  const Eigen::Index slices = axis == 1 ? X.rows() : X.cols();
  const Eigen::Index width = axis == 1 ? X.cols() : X.rows();
  auto at = [&](Eigen::Index s, Eigen::Index k) -> std::pair<Eigen::Index, Eigen::Index> {
    return axis == 1 ? std::pair{s, k} : std::pair{k, s};
  };
  auto& tape = x.tape();
  for (Eigen::Index s = 0; s < slices; ++s) {
    Scalar best = -std::numeric_limits<Scalar>::infinity();
    bool any = false;
    for (Eigen::Index k = 0; k < width; ++k) {
      auto [r, c] = at(s, k);
      const bool on = !masked || keep(r, c);
      if (masked) tape.note_branch(on ? 0x31 : 0x30);
      if (!on) continue;
      any = true;
      best = std::max(best, X(r, c));
    }
    if (!any) throw DegenerateSliceError("masked_softmax: slice " + std::to_string(s) + " is fully masked");
    Scalar total = 0;
    for (Eigen::Index k = 0; k < width; ++k) {
      auto [r, c] = at(s, k);
      if (masked && !keep(r, c)) continue;
      const Scalar e = std::exp(X(r, c) - best);
      n.value(r, c) = e;
      total += e;
    }
    for (Eigen::Index k = 0; k < width; ++k) {
      auto [r, c] = at(s, k);
      n.value(r, c) /= total;
    }
  }
  if (masked) n.mask = keep;
  return tape.record(std::move(n));
}

template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& x, int axis) {
  return masked_softmax(x, Mask(), axis);
}

/// Elementwise minimum; ties route the gradient to `a`.
template <typename Scalar>
Var<Scalar> elementwise_min(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("min: shapes " + shape_string(a.rows(), a.cols()) + " and " +
                     shape_string(b.rows(), b.cols()) + " differ");
  auto n = detail::make_node<Scalar>(Op::Min, {a, b});
  n.value = a.value().cwiseMin(b.value());
  auto& tape = a.tape();
  for (Eigen::Index i = 0; i < a.value().size(); ++i)
    tape.note_branch(a.value().data()[i] <= b.value().data()[i] ? 0x41 : 0x40);
  return tape.record(std::move(n));
}

/// Row-wise maximum over columns: rows x cols -> rows x 1. First maximum wins ties.
template <typename Scalar>
Var<Scalar> max_pool(const Var<Scalar>& x) {
  const auto& X = x.value();
  if (X.cols() == 0) throw ShapeError("max_pool: input has no columns");
  auto n = detail::make_node<Scalar>(Op::MaxPool, {x});
  n.value.resize(X.rows(), 1);
  n.index.resize(static_cast<std::size_t>(X.rows()));
  auto& tape = x.tape();
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    Eigen::Index arg = 0;
    for (Eigen::Index c = 1; c < X.cols(); ++c)
      if (X(r, c) > X(r, arg)) arg = c;
    n.value(r, 0) = X(r, arg);
    n.index[static_cast<std::size_t>(r)] = arg;
    tape.note_branch(0x50 + static_cast<std::uint64_t>(arg));
  }
  return tape.record(std::move(n));
}

template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& table, std::span<const int> ids) {
  const auto& T = table.value();
  auto n = detail::make_node<Scalar>(Op::GatherRows, {table});
  n.value.resize(static_cast<Eigen::Index>(ids.size()), T.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= T.rows())
      throw ShapeError("gather_rows: index " + std::to_string(ids[i]) + " outside table of " +
                       std::to_string(T.rows()) + " rows");
    n.value.row(static_cast<Eigen::Index>(i)) = T.row(ids[i]);
    n.index.push_back(ids[i]);
  }
  return table.tape().record(std::move(n));
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar alpha) {
  auto n = detail::make_node<Scalar>(Op::Scale, {x});
  n.alpha = alpha;
  n.value = alpha * x.value();
  return x.tape().record(std::move(n));
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  auto n = detail::make_node<Scalar>(Op::Sum, {x});
  n.value = Matrix<Scalar>::Constant(1, 1, x.value().sum());
  return x.tape().record(std::move(n));
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& x) {
  auto n = detail::make_node<Scalar>(Op::Transpose, {x});
  n.value = x.value().transpose();
  return x.tape().record(std::move(n));
}

template <typename Scalar>
Var<Scalar> slice_rows(const Var<Scalar>& x, Eigen::Index start, Eigen::Index count) {
  const auto& X = x.value();
  if (start < 0 || count < 0 || start + count > X.rows())
    throw ShapeError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) +
                     ") outside " + shape_string(X.rows(), X.cols()));
  auto n = detail::make_node<Scalar>(Op::SliceRows, {x});
  n.index = {start, count};
  n.value = X.middleRows(start, count);
  return x.tape().record(std::move(n));
}

template <typename Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& x, Eigen::Index start, Eigen::Index count) {
  const auto& X = x.value();
  if (start < 0 || count < 0 || start + count > X.cols())
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) +
                     ") outside " + shape_string(X.rows(), X.cols()));
  auto n = detail::make_node<Scalar>(Op::SliceCols, {x});
  n.index = {start, count};
  n.value = X.middleCols(start, count);
  return x.tape().record(std::move(n));
}

// ---------------------------------------------------------------------------
// Compositions used throughout the model.

/// c - x for a scalar constant c.
template <typename Scalar>
Var<Scalar> rsub(Scalar c, const Var<Scalar>& x) {
  auto k = x.tape().constant(Matrix<Scalar>::Constant(x.rows(), x.cols(), c));
  return sub(k, x);
}

/// W x + b with b broadcast across columns.
template <typename Scalar>
Var<Scalar> affine(const Var<Scalar>& w, const Var<Scalar>& x, const Var<Scalar>& b) {
  return add(matmul(w, x), b);
}

/// Inverse of vertical concatenation.
template <typename Scalar>
std::vector<Var<Scalar>> split_rows(const Var<Scalar>& x, std::span<const Eigen::Index> sizes) {
  std::vector<Var<Scalar>> out;
  Eigen::Index offset = 0;
  for (Eigen::Index s : sizes) {
    out.push_back(slice_rows(x, offset, s));
    offset += s;
  }
  if (offset != x.rows())
    throw ShapeError("split_rows: sizes sum to " + std::to_string(offset) + " but input has " +
                     std::to_string(x.rows()) + " rows");
  return out;
}

}  // namespace g2s
