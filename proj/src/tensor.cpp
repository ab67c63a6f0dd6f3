#include "mvdis/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace mvdis {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

namespace {

template <typename Scalar>
using NodeT = detail::Node<Scalar>;
template <typename Scalar>
using NodePtrT = std::shared_ptr<detail::Node<Scalar>>;
template <typename Scalar>
using ArrayT = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_shape(const Shape& shape) {
  for (Index d : shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_to_string(shape));
  }
}

template <typename Scalar>
Tensor<Scalar> make_op(Shape shape, ArrayT<Scalar> value, std::vector<NodePtrT<Scalar>> inputs,
                       std::function<void(NodeT<Scalar>&)> backward_fn) {
  auto node = std::make_shared<NodeT<Scalar>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  const bool tracked =
      grad_mode_enabled() &&
      std::any_of(inputs.begin(), inputs.end(), [](const auto& in) { return in->requires_grad; });
  if (tracked) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<Scalar>(std::move(node));
}

int normalize_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return a;
}

// Splits a shape around `axis` into (outer, length, inner) extents.
struct AxisSplit {
  Index outer = 1, length = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape reduced_shape(const Shape& shape, int axis, bool keepdim) {
  Shape out = shape;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + axis);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

struct BroadcastPlan {
  Shape out;
  bool same = false;
  std::vector<Index> ia, ib;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + (rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + (rank - b.size()));
  plan.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw DimensionError("shapes " + shape_to_string(a) + " and " + shape_to_string(b) +
                           " are not broadcastable");
    }
    plan.out[i] = std::max(pa[i], pb[i]);
  }
  // Strides with zero along broadcast axes.
  std::vector<Index> sa(rank, 0), sb(rank, 0);
  Index ra = 1, rb = 1;
  for (std::size_t k = rank; k-- > 0;) {
    sa[k] = pa[k] == 1 ? 0 : ra;
    sb[k] = pb[k] == 1 ? 0 : rb;
    ra *= pa[k];
    rb *= pb[k];
  }
  const Index total = shape_size(plan.out);
  plan.ia.resize(total);
  plan.ib.resize(total);
  std::vector<Index> counter(rank, 0);
  Index offa = 0, offb = 0;
  for (Index flat = 0; flat < total; ++flat) {
    plan.ia[flat] = offa;
    plan.ib[flat] = offb;
    for (std::size_t k = rank; k-- > 0;) {
      ++counter[k];
      offa += sa[k];
      offb += sb[k];
      if (counter[k] < plan.out[k]) break;
      offa -= sa[k] * counter[k];
      offb -= sb[k] * counter[k];
      counter[k] = 0;
    }
  }
  return plan;
}

enum class BinaryKind { add, sub, mul };

template <typename Scalar>
Tensor<Scalar> binary(const Tensor<Scalar>& a, const Tensor<Scalar>& b, BinaryKind kind) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
  const auto& av = a.data();
  const auto& bv = b.data();
  ArrayT<Scalar> out;
  if (plan->same) {
    switch (kind) {
      case BinaryKind::add: out = av + bv; break;
      case BinaryKind::sub: out = av - bv; break;
      case BinaryKind::mul: out = av * bv; break;
    }
  } else {
    const Index total = static_cast<Index>(plan->ia.size());
    out.resize(total);
    for (Index i = 0; i < total; ++i) {
      const Scalar x = av[plan->ia[i]], y = bv[plan->ib[i]];
      switch (kind) {
        case BinaryKind::add: out[i] = x + y; break;
        case BinaryKind::sub: out[i] = x - y; break;
        case BinaryKind::mul: out[i] = x * y; break;
      }
    }
  }
  return make_op<Scalar>(plan->out, std::move(out), {a.node(), b.node()},
                         [plan, kind](NodeT<Scalar>& self) {
                           auto& na = *self.inputs[0];
                           auto& nb = *self.inputs[1];
                           const auto& g = self.grad;
                           if (plan->same) {
                             if (na.requires_grad) {
                               if (kind == BinaryKind::mul) na.accumulate(g * nb.value);
                               else na.accumulate(g);
                             }
                             if (nb.requires_grad) {
                               if (kind == BinaryKind::mul) nb.accumulate(g * na.value);
                               else if (kind == BinaryKind::sub) nb.accumulate(-g);
                               else nb.accumulate(g);
                             }
                             return;
                           }
                           const Index total = static_cast<Index>(plan->ia.size());
                           if (na.requires_grad) {
                             ArrayT<Scalar> ga = ArrayT<Scalar>::Zero(na.value.size());
                             for (Index i = 0; i < total; ++i) {
                               ga[plan->ia[i]] += kind == BinaryKind::mul ? g[i] * nb.value[plan->ib[i]] : g[i];
                             }
                             na.accumulate(ga);
                           }
                           if (nb.requires_grad) {
                             ArrayT<Scalar> gb = ArrayT<Scalar>::Zero(nb.value.size());
                             for (Index i = 0; i < total; ++i) {
                               Scalar gi = g[i];
                               if (kind == BinaryKind::mul) gi *= na.value[plan->ia[i]];
                               else if (kind == BinaryKind::sub) gi = -gi;
                               gb[plan->ib[i]] += gi;
                             }
                             nb.accumulate(gb);
                           }
                         });
}

// Elementwise unary op whose local derivative is a function of (input, output).
template <typename Scalar, typename Fwd, typename Deriv>
Tensor<Scalar> unary(const Tensor<Scalar>& a, Fwd fwd, Deriv deriv) {
  ArrayT<Scalar> out = a.data().unaryExpr(fwd);
  return make_op<Scalar>(a.shape(), std::move(out), {a.node()}, [deriv](NodeT<Scalar>& self) {
    auto& in = *self.inputs[0];
    const Index n = in.value.size();
    ArrayT<Scalar> g(n);
    for (Index i = 0; i < n; ++i) g[i] = self.grad[i] * deriv(in.value[i], self.value[i]);
    in.accumulate(g);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

template <typename Scalar>
Tensor<Scalar>::Tensor() : Tensor(Shape{1}, Array::Zero(1)) {}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Array data, bool requires_grad)
    : node_(std::make_shared<detail::Node<Scalar>>()) {
  check_shape(shape);
  if (shape_size(shape) != data.size()) {
    throw DimensionError("shape " + shape_to_string(shape) + " needs " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(Shape shape, bool requires_grad) {
  check_shape(shape);
  const Index n = shape_size(shape);
  return Tensor(std::move(shape), Array::Zero(n), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::full(Shape shape, Scalar value, bool requires_grad) {
  check_shape(shape);
  const Index n = shape_size(shape);
  return Tensor(std::move(shape), Array::Constant(n, value), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::scalar(Scalar value, bool requires_grad) {
  return full(Shape{1}, value, requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_values(Shape shape, std::initializer_list<Scalar> values,
                                           bool requires_grad) {
  Array a(static_cast<Index>(values.size()));
  Index i = 0;
  for (Scalar v : values) a[i++] = v;
  return Tensor(std::move(shape), std::move(a), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_matrix(const Matrix& m, bool requires_grad) {
  Array a = Eigen::Map<const Array>(m.data(), m.size());
  return Tensor(Shape{m.rows(), m.cols()}, std::move(a), requires_grad);
}

template <typename Scalar>
Index Tensor<Scalar>::dim(int axis) const {
  return node_->shape[normalize_axis(axis, rank())];
}

template <typename Scalar>
typename Tensor<Scalar>::Array& Tensor<Scalar>::mutable_data() {
  if (node_->backward_fn) throw StateError("mutable_data() is only valid on leaf tensors");
  return node_->value;
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) {
    throw ContractError("item() needs a single-element tensor, got " + shape_to_string(shape()));
  }
  return node_->value[0];
}

template <typename Scalar>
typename Tensor<Scalar>::ConstMatrixMap Tensor<Scalar>::matrix() const {
  const Index cols = node_->shape.back();
  return ConstMatrixMap(node_->value.data(), size() / cols, cols);
}

template <typename Scalar>
const typename Tensor<Scalar>::Array& Tensor<Scalar>::grad() const {
  if (!node_->grad_defined) throw StateError("tensor has no gradient");
  return node_->grad;
}

template <typename Scalar>
void Tensor<Scalar>::zero_grad() {
  node_->grad = Array();
  node_->grad_defined = false;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  return Tensor(node_->shape, node_->value, false);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::clone(bool requires_grad) const {
  return Tensor(node_->shape, node_->value, requires_grad);
}

template <typename Scalar>
void Tensor<Scalar>::backward() const {
  if (size() != 1) {
    throw ContractError("backward() needs a scalar output, got shape " + shape_to_string(shape()));
  }
  if (!node_->requires_grad) {
    throw ContractError("backward() on a tensor with no recorded operations");
  }
  if (node_->consumed) throw StateError("backward() already called on this graph");

  // Iterative post-order DFS gives a topological order of the tracked graph.
  std::vector<std::shared_ptr<detail::Node<Scalar>>> order;
  std::unordered_set<const detail::Node<Scalar>*> visited;
  std::vector<std::pair<std::shared_ptr<detail::Node<Scalar>>, std::size_t>> stack;
  stack.emplace_back(node_, 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->consumed) throw StateError("backward() through a graph that was already released");
    if (next < node->inputs.size()) {
      auto child = node->inputs[next++];
      if (child->requires_grad && visited.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
    } else {
      order.push_back(std::move(node));
      stack.pop_back();
    }
  }

  node_->grad = Array::Ones(1);
  node_->grad_defined = true;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto& node = *it;
    if (!node->backward_fn) continue;
    if (node->grad_defined) node->backward_fn(*node);
    node->backward_fn = nullptr;
    node->inputs.clear();
    node->consumed = true;
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() < 2 || b.rank() != 2 || a.shape().back() != b.shape()[0]) {
    throw DimensionError("matmul shape mismatch: " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  const Index k = b.shape()[0];
  const Index p = b.shape()[1];
  const Index rows = a.size() / k;
  Shape out_shape = a.shape();
  out_shape.back() = p;
  ArrayT<Scalar> out(rows * p);
  Eigen::Map<MatrixT<Scalar>>(out.data(), rows, p).noalias() = a.matrix() * b.matrix();
  return make_op<Scalar>(std::move(out_shape), std::move(out), {a.node(), b.node()},
                         [rows, k, p](NodeT<Scalar>& self) {
                           auto& na = *self.inputs[0];
                           auto& nb = *self.inputs[1];
                           Eigen::Map<const MatrixT<Scalar>> g(self.grad.data(), rows, p);
                           Eigen::Map<const MatrixT<Scalar>> am(na.value.data(), rows, k);
                           Eigen::Map<const MatrixT<Scalar>> bm(nb.value.data(), k, p);
                           if (na.requires_grad) {
                             ArrayT<Scalar> ga(rows * k);
                             Eigen::Map<MatrixT<Scalar>>(ga.data(), rows, k).noalias() = g * bm.transpose();
                             na.accumulate(ga);
                           }
                           if (nb.requires_grad) {
                             ArrayT<Scalar> gb(k * p);
                             Eigen::Map<MatrixT<Scalar>>(gb.data(), k, p).noalias() = am.transpose() * g;
                             nb.accumulate(gb);
                           }
                         });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  if (a.rank() != 2) throw DimensionError("transpose needs a 2-D tensor, got " + shape_to_string(a.shape()));
  const Index r = a.shape()[0], c = a.shape()[1];
  ArrayT<Scalar> out(r * c);
  Eigen::Map<MatrixT<Scalar>>(out.data(), c, r) = a.matrix().transpose();
  return make_op<Scalar>(Shape{c, r}, std::move(out), {a.node()}, [r, c](NodeT<Scalar>& self) {
    ArrayT<Scalar> g(r * c);
    Eigen::Map<MatrixT<Scalar>>(g.data(), r, c) =
        Eigen::Map<const MatrixT<Scalar>>(self.grad.data(), c, r).transpose();
    self.inputs[0]->accumulate(g);
  });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  check_shape(shape);
  if (shape_size(shape) != a.size()) {
    throw DimensionError("cannot reshape " + shape_to_string(a.shape()) + " to " + shape_to_string(shape));
  }
  return make_op<Scalar>(std::move(shape), a.data(), {a.node()},
                         [](NodeT<Scalar>& self) { self.inputs[0]->accumulate(self.grad); });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return binary(a, b, BinaryKind::add);
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return binary(a, b, BinaryKind::sub);
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return binary(a, b, BinaryKind::mul);
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s) {
  return make_op<Scalar>(a.shape(), a.data() * s, {a.node()},
                         [s](NodeT<Scalar>& self) { self.inputs[0]->accumulate(self.grad * s); });
}

template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& a, Scalar s) {
  return make_op<Scalar>(a.shape(), a.data() + s, {a.node()},
                         [](NodeT<Scalar>& self) { self.inputs[0]->accumulate(self.grad); });
}

template <typename Scalar>
Tensor<Scalar> neg(const Tensor<Scalar>& a) {
  return scale(a, Scalar(-1));
}

template <typename Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& a) {
  return unary(a, [](Scalar x) { return std::exp(x); }, [](Scalar, Scalar y) { return y; });
}

template <typename Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& a) {
  if ((a.data() <= Scalar(0)).any()) {
    throw DomainError("log of a non-positive value (clamp the argument first)");
  }
  return unary(a, [](Scalar x) { return std::log(x); }, [](Scalar x, Scalar) { return Scalar(1) / x; });
}

template <typename Scalar>
Tensor<Scalar> sqrt(const Tensor<Scalar>& a) {
  if ((a.data() < Scalar(0)).any()) throw DomainError("sqrt of a negative value");
  return unary(a, [](Scalar x) { return std::sqrt(x); },
               [](Scalar, Scalar y) { return y > Scalar(0) ? Scalar(0.5) / y : Scalar(0); });
}

template <typename Scalar>
Tensor<Scalar> square(const Tensor<Scalar>& a) {
  return unary(a, [](Scalar x) { return x * x; }, [](Scalar x, Scalar) { return Scalar(2) * x; });
}

template <typename Scalar>
Tensor<Scalar> clamp(const Tensor<Scalar>& a, Scalar lo, Scalar hi) {
  if (lo > hi) throw ContractError("clamp with lo > hi");
  return unary(a, [lo, hi](Scalar x) { return std::clamp(x, lo, hi); },
               [lo, hi](Scalar x, Scalar) { return (x >= lo && x <= hi) ? Scalar(1) : Scalar(0); });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a) {
  // Subgradient at zero is zero.
  return unary(a, [](Scalar x) { return x > Scalar(0) ? x : Scalar(0); },
               [](Scalar x, Scalar) { return x > Scalar(0) ? Scalar(1) : Scalar(0); });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  const Index n = a.size();
  return make_op<Scalar>(Shape{1}, ArrayT<Scalar>::Constant(1, a.data().sum()), {a.node()},
                         [n](NodeT<Scalar>& self) {
                           self.inputs[0]->accumulate(ArrayT<Scalar>::Constant(n, self.grad[0]));
                         });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a, int axis, bool keepdim) {
  const int ax = normalize_axis(axis, a.rank());
  const AxisSplit s = split_axis(a.shape(), ax);
  const auto& v = a.data();
  ArrayT<Scalar> out = ArrayT<Scalar>::Zero(s.outer * s.inner);
  for (Index o = 0; o < s.outer; ++o)
    for (Index l = 0; l < s.length; ++l)
      for (Index i = 0; i < s.inner; ++i) out[o * s.inner + i] += v[(o * s.length + l) * s.inner + i];
  return make_op<Scalar>(reduced_shape(a.shape(), ax, keepdim), std::move(out), {a.node()},
                         [s](NodeT<Scalar>& self) {
                           ArrayT<Scalar> g(s.outer * s.length * s.inner);
                           for (Index o = 0; o < s.outer; ++o)
                             for (Index l = 0; l < s.length; ++l)
                               for (Index i = 0; i < s.inner; ++i)
                                 g[(o * s.length + l) * s.inner + i] = self.grad[o * s.inner + i];
                           self.inputs[0]->accumulate(g);
                         });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.size()));
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a, int axis, bool keepdim) {
  const int ax = normalize_axis(axis, a.rank());
  return scale(sum(a, ax, keepdim), Scalar(1) / static_cast<Scalar>(a.shape()[ax]));
}

template <typename Scalar>
Tensor<Scalar> variance(const Tensor<Scalar>& a, int axis, bool keepdim) {
  const int ax = normalize_axis(axis, a.rank());
  auto centered = sub(a, mean(a, ax, true));
  return mean(square(centered), ax, keepdim);
}

template <typename Scalar>
Tensor<Scalar> std_dev(const Tensor<Scalar>& a, int axis, Scalar eps, bool keepdim) {
  return sqrt(add_scalar(variance(a, axis, keepdim), eps));
}

template <typename Scalar>
Tensor<Scalar> logsumexp(const Tensor<Scalar>& a, int axis, bool keepdim) {
  const int ax = normalize_axis(axis, a.rank());
  const AxisSplit s = split_axis(a.shape(), ax);
  const auto& v = a.data();
  ArrayT<Scalar> out(s.outer * s.inner);
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      Scalar m = v[o * s.length * s.inner + i];
      for (Index l = 1; l < s.length; ++l) m = std::max(m, v[(o * s.length + l) * s.inner + i]);
      Scalar acc = 0;
      for (Index l = 0; l < s.length; ++l) acc += std::exp(v[(o * s.length + l) * s.inner + i] - m);
      out[o * s.inner + i] = m + std::log(acc);
    }
  }
  return make_op<Scalar>(reduced_shape(a.shape(), ax, keepdim), std::move(out), {a.node()},
                         [s](NodeT<Scalar>& self) {
                           const auto& in = self.inputs[0]->value;
                           ArrayT<Scalar> g(in.size());
                           for (Index o = 0; o < s.outer; ++o)
                             for (Index l = 0; l < s.length; ++l)
                               for (Index i = 0; i < s.inner; ++i) {
                                 const Index r = o * s.inner + i;
                                 const Index idx = (o * s.length + l) * s.inner + i;
                                 g[idx] = self.grad[r] * std::exp(in[idx] - self.value[r]);
                               }
                           self.inputs[0]->accumulate(g);
                         });
}

// ---------------------------------------------------------------------------
// Feature axis

template <typename Scalar>
Tensor<Scalar> concat_features(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 1, sb.begin())) {
    throw DimensionError("concat_features leading shapes differ: " + shape_to_string(sa) + " vs " +
                         shape_to_string(sb));
  }
  const Index da = sa.back(), db = sb.back();
  const Index rows = a.size() / da;
  ArrayT<Scalar> out(rows * (da + db));
  Eigen::Map<MatrixT<Scalar>> om(out.data(), rows, da + db);
  om.leftCols(da) = a.matrix();
  om.rightCols(db) = b.matrix();
  Shape out_shape = sa;
  out_shape.back() = da + db;
  return make_op<Scalar>(std::move(out_shape), std::move(out), {a.node(), b.node()},
                         [rows, da, db](NodeT<Scalar>& self) {
                           Eigen::Map<const MatrixT<Scalar>> g(self.grad.data(), rows, da + db);
                           if (self.inputs[0]->requires_grad) {
                             ArrayT<Scalar> ga(rows * da);
                             Eigen::Map<MatrixT<Scalar>>(ga.data(), rows, da) = g.leftCols(da);
                             self.inputs[0]->accumulate(ga);
                           }
                           if (self.inputs[1]->requires_grad) {
                             ArrayT<Scalar> gb(rows * db);
                             Eigen::Map<MatrixT<Scalar>>(gb.data(), rows, db) = g.rightCols(db);
                             self.inputs[1]->accumulate(gb);
                           }
                         });
}

template <typename Scalar>
Tensor<Scalar> slice_features(const Tensor<Scalar>& a, Index begin, Index count) {
  const Index width = a.shape().back();
  if (begin < 0 || count <= 0 || begin + count > width) {
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for feature width " + std::to_string(width));
  }
  const Index rows = a.size() / width;
  ArrayT<Scalar> out(rows * count);
  Eigen::Map<MatrixT<Scalar>>(out.data(), rows, count) = a.matrix().middleCols(begin, count);
  Shape out_shape = a.shape();
  out_shape.back() = count;
  return make_op<Scalar>(std::move(out_shape), std::move(out), {a.node()},
                         [rows, width, begin, count](NodeT<Scalar>& self) {
                           ArrayT<Scalar> g = ArrayT<Scalar>::Zero(rows * width);
                           Eigen::Map<MatrixT<Scalar>>(g.data(), rows, width).middleCols(begin, count) =
                               Eigen::Map<const MatrixT<Scalar>>(self.grad.data(), rows, count);
                           self.inputs[0]->accumulate(g);
                         });
}

template <typename Scalar>
Tensor<Scalar> l2_normalize(const Tensor<Scalar>& a, Scalar eps) {
  if (!(eps > Scalar(0))) throw ContractError("l2_normalize needs eps > 0");
  const Index width = a.shape().back();
  const Index rows = a.size() / width;
  auto in = a.matrix();
  ArrayT<Scalar> denom(rows);
  ArrayT<Scalar> out(a.size());
  Eigen::Map<MatrixT<Scalar>> om(out.data(), rows, width);
  for (Index r = 0; r < rows; ++r) {
    denom[r] = std::max(in.row(r).norm(), eps);
    om.row(r) = in.row(r) / denom[r];
  }
  return make_op<Scalar>(a.shape(), std::move(out), {a.node()},
                         [rows, width, eps, denom](NodeT<Scalar>& self) {
                           Eigen::Map<const MatrixT<Scalar>> g(self.grad.data(), rows, width);
                           Eigen::Map<const MatrixT<Scalar>> y(self.value.data(), rows, width);
                           ArrayT<Scalar> gi(rows * width);
                           Eigen::Map<MatrixT<Scalar>> gm(gi.data(), rows, width);
                           for (Index r = 0; r < rows; ++r) {
                             if (denom[r] > eps) {
                               gm.row(r) = (g.row(r) - y.row(r) * y.row(r).dot(g.row(r))) / denom[r];
                             } else {
                               gm.row(r) = g.row(r) / eps;
                             }
                           }
                           self.inputs[0]->accumulate(gi);
                         });
}

// ---------------------------------------------------------------------------
// Instantiations

#define MVDIS_INSTANTIATE_TENSOR(S)                                                      \
  template class Tensor<S>;                                                              \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                         \
  template Tensor<S> transpose(const Tensor<S>&);                                        \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                   \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                            \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                            \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                            \
  template Tensor<S> scale(const Tensor<S>&, S);                                         \
  template Tensor<S> add_scalar(const Tensor<S>&, S);                                    \
  template Tensor<S> neg(const Tensor<S>&);                                              \
  template Tensor<S> exp(const Tensor<S>&);                                              \
  template Tensor<S> log(const Tensor<S>&);                                              \
  template Tensor<S> sqrt(const Tensor<S>&);                                             \
  template Tensor<S> square(const Tensor<S>&);                                           \
  template Tensor<S> clamp(const Tensor<S>&, S, S);                                      \
  template Tensor<S> relu(const Tensor<S>&);                                             \
  template Tensor<S> sum(const Tensor<S>&);                                              \
  template Tensor<S> sum(const Tensor<S>&, int, bool);                                   \
  template Tensor<S> mean(const Tensor<S>&);                                             \
  template Tensor<S> mean(const Tensor<S>&, int, bool);                                  \
  template Tensor<S> variance(const Tensor<S>&, int, bool);                              \
  template Tensor<S> std_dev(const Tensor<S>&, int, S, bool);                            \
  template Tensor<S> logsumexp(const Tensor<S>&, int, bool);                             \
  template Tensor<S> concat_features(const Tensor<S>&, const Tensor<S>&);                \
  template Tensor<S> slice_features(const Tensor<S>&, Index, Index);                     \
  template Tensor<S> l2_normalize(const Tensor<S>&, S);

MVDIS_INSTANTIATE_TENSOR(float)
MVDIS_INSTANTIATE_TENSOR(double)

#undef MVDIS_INSTANTIATE_TENSOR

}  // namespace mvdis
