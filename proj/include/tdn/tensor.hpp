#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tdn {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<Tensor> parents;
  std::function<void(const Node&)> backward_fn;
  const char* op = "";

  std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
  void ensure_grad();
  void accumulate_grad(const std::vector<double>& g);
};

}  // namespace detail

// Dense n-dimensional double tensor with reverse-mode autodiff. A Tensor is
// a cheap handle onto a graph node; ops are free functions that record their
// backward rule on the result. Values are immutable after creation except
// through values_mut(), which is intended for leaf parameters only.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  int dim(int i) const;
  std::int64_t size() const;

  std::span<const double> values() const;
  std::span<double> values_mut();
  bool has_grad() const;
  std::span<const double> grad() const;
  bool requires_grad() const;

  double scalar() const;
  double at(std::initializer_list<int> idx) const;

  void zero_grad() const;
  // Reverse-mode sweep from a scalar. Grads accumulate across calls.
  void backward() const;

  detail::Node* node() const { return node_.get(); }
  static Tensor wrap(std::shared_ptr<detail::Node> n);

 private:
  std::shared_ptr<detail::Node> node_;
};

// When false, ops run forward-only: no parents, no backward closures.
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  bool prev;
};

namespace detail {
// Shared by op implementations: makes the result node and wires the tape.
Tensor make_result(Shape shape, std::vector<double> values, const char* op,
                   std::vector<Tensor> parents, std::function<void(const Node&)> backward_fn);
}  // namespace detail

// Elementwise ops. add/sub/mul accept identical shapes or one operand with
// leading extent 1 broadcast against the other's batch dimension.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
// Picks one element as a scalar node (used to backprop from a single logit).
Tensor pick(const Tensor& a, std::int64_t flat_index);

}  // namespace tdn
