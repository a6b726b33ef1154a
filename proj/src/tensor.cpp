#include "tdn/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <unordered_set>

#include "tdn/util.hpp"

namespace tdn {

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    TDN_REQUIRE(d > 0, "shape extent must be positive, got ", d, " in ", shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

namespace detail {

void Node::ensure_grad() {
  if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

void Node::accumulate_grad(const std::vector<double>& g) {
  ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

#ifndef NDEBUG
void debug_check_finite(const detail::Node& n) {
  for (double v : n.values) assert(std::isfinite(v) && "non-finite value produced by forward op");
}
#endif

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> values) {
  auto n = std::make_shared<detail::Node>();
  const std::int64_t want = shape_numel(shape);
  TDN_REQUIRE(static_cast<std::int64_t>(values.size()) == want, "tensor data size ",
              values.size(), " does not match shape ", shape_str(shape));
  n->shape = std::move(shape);
  n->values = std::move(values);
  return n;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  auto node = new_node(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0));
  node->requires_grad = requires_grad;
  node->op = "leaf";
  return wrap(std::move(node));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  auto node = new_node(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value));
  node->requires_grad = requires_grad;
  node->op = "leaf";
  return wrap(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  auto node = new_node(std::move(shape), std::move(values));
  node->requires_grad = requires_grad;
  node->op = "leaf";
  return wrap(std::move(node));
}

Tensor Tensor::wrap(std::shared_ptr<detail::Node> n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

const Shape& Tensor::shape() const {
  TDN_REQUIRE(node_, "use of undefined tensor");
  return node_->shape;
}

int Tensor::rank() const { return static_cast<int>(shape().size()); }

int Tensor::dim(int i) const {
  const auto& s = shape();
  TDN_REQUIRE(i >= 0 && i < static_cast<int>(s.size()), "dim index ", i, " out of range for ",
              shape_str(s));
  return s[static_cast<std::size_t>(i)];
}

std::int64_t Tensor::size() const {
  TDN_REQUIRE(node_, "use of undefined tensor");
  return node_->numel();
}

std::span<const double> Tensor::values() const {
  TDN_REQUIRE(node_, "use of undefined tensor");
  return {node_->values.data(), node_->values.size()};
}

std::span<double> Tensor::values_mut() {
  TDN_REQUIRE(node_, "use of undefined tensor");
  return {node_->values.data(), node_->values.size()};
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->values.size(); }

std::span<const double> Tensor::grad() const {
  TDN_REQUIRE(node_, "use of undefined tensor");
  TDN_REQUIRE(has_grad(), "tensor has no gradient buffer (op=", node_->op, ")");
  return {node_->grad.data(), node_->grad.size()};
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

double Tensor::scalar() const {
  TDN_REQUIRE(size() == 1, "scalar() requires a single-element tensor, got ", shape_str(shape()));
  return node_->values[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  const auto& s = shape();
  TDN_REQUIRE(idx.size() == s.size(), "index rank ", idx.size(), " does not match ", shape_str(s));
  std::int64_t flat = 0;
  std::size_t k = 0;
  for (int i : idx) {
    TDN_REQUIRE(i >= 0 && i < s[k], "index ", i, " out of range for dim ", k, " of ", shape_str(s));
    flat = flat * s[k] + i;
    ++k;
  }
  return node_->values[static_cast<std::size_t>(flat)];
}

void Tensor::zero_grad() const {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  TDN_REQUIRE(node_, "backward() on undefined tensor");
  TDN_REQUIRE(node_->numel() == 1, "backward() requires a scalar, got ", shape_str(node_->shape));

  // Iterative post-order DFS over parents: reverse of the result is a
  // reverse topological order, so each node runs after all its consumers.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  struct Frame {
    detail::Node* n;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  if (seen.insert(node_.get()).second) stack.push_back({node_.get(), 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.n->parents.size()) {
      detail::Node* p = f.n->parents[f.next_parent].node();
      ++f.next_parent;
      if (p && p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

namespace detail {

Tensor make_result(Shape shape, std::vector<double> values, const char* op,
                   std::vector<Tensor> parents, std::function<void(const Node&)> backward_fn) {
  auto node = new_node(std::move(shape), std::move(values));
  node->op = op;
#ifndef NDEBUG
  debug_check_finite(*node);
#endif
  if (g_grad_enabled) {
    bool needs = false;
    for (const auto& p : parents)
      if (p.requires_grad()) needs = true;
    if (needs) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor::wrap(std::move(node));
}

}  // namespace detail

namespace {

enum class Bcast { None, LeftLeading1, RightLeading1 };

// Identical shapes, or one operand with leading extent 1 whose remaining
// dims match the other's trailing dims ([1,rest] against [B,rest]).
Bcast broadcast_kind(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Bcast::None;
  auto rest_match = [](const Shape& one, const Shape& big) {
    if (one.size() != big.size() || one.empty() || one[0] != 1) return false;
    for (std::size_t i = 1; i < one.size(); ++i)
      if (one[i] != big[i]) return false;
    return true;
  };
  if (rest_match(a, b)) return Bcast::LeftLeading1;
  if (rest_match(b, a)) return Bcast::RightLeading1;
  fail(op, ": incompatible shapes ", shape_str(a), " vs ", shape_str(b));
}

template <typename Fwd>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* op, Fwd fwd,
                          double da_coeff, double db_coeff, bool mul_rule) {
  const Bcast kind = broadcast_kind(a.shape(), b.shape(), op);
  const Tensor& big = (kind == Bcast::LeftLeading1) ? b : a;
  const Tensor& one = (kind == Bcast::LeftLeading1) ? a : b;
  const std::int64_t n = big.size();
  const std::int64_t small_n = (kind == Bcast::None) ? n : one.size();

  const double* pa = a.values().data();
  const double* pb = b.values().data();
  std::vector<double> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const double va = (kind == Bcast::LeftLeading1) ? pa[i % small_n] : pa[i];
    const double vb = (kind == Bcast::RightLeading1) ? pb[i % small_n] : pb[i];
    out[static_cast<std::size_t>(i)] = fwd(va, vb);
  }

  Tensor ta = a, tb = b;
  return detail::make_result(
      big.shape(), std::move(out), op, {a, b},
      [ta, tb, kind, small_n, da_coeff, db_coeff, mul_rule](const detail::Node& self) {
        const std::int64_t n = self.numel();
        auto accum = [&](const Tensor& t, bool is_small, double coeff, const Tensor& other) {
          if (!t.requires_grad()) return;
          detail::Node* tn = t.node();
          tn->ensure_grad();
          const double* og = self.grad.data();
          const double* ov = other.values().data();
          const bool other_small = (&other != &t) && (other.size() == small_n) && (other.size() != n);
          for (std::int64_t i = 0; i < n; ++i) {
            double g = og[i] * coeff;
            if (mul_rule) g = og[i] * (other_small ? ov[i % small_n] : ov[i]);
            tn->grad[static_cast<std::size_t>(is_small ? (i % small_n) : i)] += g;
          }
        };
        const bool a_small = (kind == Bcast::LeftLeading1);
        const bool b_small = (kind == Bcast::RightLeading1);
        accum(ta, a_small, da_coeff, tb);
        accum(tb, b_small, db_coeff, ta);
      });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(a, b, "add", [](double x, double y) { return x + y; }, 1.0, 1.0, false);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(a, b, "sub", [](double x, double y) { return x - y; }, 1.0, -1.0, false);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(a, b, "mul", [](double x, double y) { return x * y; }, 0.0, 0.0, true);
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= c;
  Tensor ta = a;
  return detail::make_result(a.shape(), std::move(out), "scale", {a},
                             [ta, c](const detail::Node& self) {
                               if (!ta.requires_grad()) return;
                               detail::Node* an = ta.node();
                               an->ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 an->grad[i] += c * self.grad[i];
                             });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v += c;
  Tensor ta = a;
  return detail::make_result(a.shape(), std::move(out), "add_scalar", {a},
                             [ta](const detail::Node& self) {
                               if (!ta.requires_grad()) return;
                               ta.node()->accumulate_grad(self.grad);
                             });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  Tensor ta = a;
  return detail::make_result(a.shape(), std::move(out), "relu", {a},
                             [ta](const detail::Node& self) {
                               if (!ta.requires_grad()) return;
                               detail::Node* an = ta.node();
                               an->ensure_grad();
                               const double* x = an->values.data();
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 if (x[i] > 0.0) an->grad[i] += self.grad[i];
                             });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v = 1.0 / (1.0 + std::exp(-v));
  Tensor ta = a;
  return detail::make_result(a.shape(), std::move(out), "sigmoid", {a},
                             [ta](const detail::Node& self) {
                               if (!ta.requires_grad()) return;
                               detail::Node* an = ta.node();
                               an->ensure_grad();
                               const double* y = self.values.data();
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 an->grad[i] += y[i] * (1.0 - y[i]) * self.grad[i];
                             });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor ta = a;
  return detail::make_result({1}, {s}, "sum", {a}, [ta](const detail::Node& self) {
    if (!ta.requires_grad()) return;
    detail::Node* an = ta.node();
    an->ensure_grad();
    const double g = self.grad[0];
    for (double& v : an->grad) v += g;
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  TDN_REQUIRE(shape_numel(shape) == a.size(), "reshape: ", shape_str(a.shape()), " (", a.size(),
              " elements) cannot become ", shape_str(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  Tensor ta = a;
  return detail::make_result(std::move(shape), std::move(out), "reshape", {a},
                             [ta](const detail::Node& self) {
                               if (!ta.requires_grad()) return;
                               ta.node()->accumulate_grad(self.grad);
                             });
}

Tensor pick(const Tensor& a, std::int64_t flat_index) {
  TDN_REQUIRE(flat_index >= 0 && flat_index < a.size(), "pick: index ", flat_index,
              " out of range for ", shape_str(a.shape()));
  Tensor ta = a;
  return detail::make_result({1}, {a.values()[static_cast<std::size_t>(flat_index)]}, "pick", {a},
                             [ta, flat_index](const detail::Node& self) {
                               if (!ta.requires_grad()) return;
                               detail::Node* an = ta.node();
                               an->ensure_grad();
                               an->grad[static_cast<std::size_t>(flat_index)] += self.grad[0];
                             });
}

}  // namespace tdn
