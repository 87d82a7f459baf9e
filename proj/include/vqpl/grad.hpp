// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

namespace vqpl::grad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major double tensor. A value type: copies are deep.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s);
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, double v);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.empty() ? 1 : shape.front(); }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  double item() const;

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
};

bool all_finite(const Tensor& t);

#ifdef NDEBUG
inline constexpr bool kCheckFiniteDefault = false;
#else
inline constexpr bool kCheckFiniteDefault = true;
#endif

class Tape;

/// Handle to a node recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
};

/// Records operations for one reverse-mode pass. Confined to one thread.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool check_finite = kCheckFiniteDefault) : check_finite_(check_finite) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is tracked when t.requires_grad is set.
  Var variable(Tensor t);
  Var param(Tensor t);
  Var constant(Tensor t);

  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, const std::vector<Var>& inputs, Backward backward);

  /// Reverse accumulation from a scalar loss.
  void backward(Var loss);

  /// Gradient of any node after backward; zeros if it received none.
  Tensor grad(Var v) const;

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  /// Gradient buffer for accumulation inside backward rules.
  std::vector<double>& grad_buffer(std::size_t id);
  const std::vector<double>& grad_of(std::size_t id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }
  bool check_finite() const { return check_finite_; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool needs_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  bool check_finite_;
};

// Elementwise arithmetic. The smaller operand broadcasts when its shape is a
// trailing suffix of the larger one (a scalar broadcasts everywhere).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);

Var matmul(Var a, Var b);  // (n,k) x (k,m)
Var transpose(Var a);      // rank 2
Var linear(Var x, Var weight, Var bias);  // x W + b, weight (in,out)

/// Rows of table (V,d) selected by ids.
Var gather(Var table, const std::vector<int>& ids);

/// Softmax along the last axis with max subtraction. Entries where
/// allowed[i] == 0 get probability 0; a fully blocked row is all zeros.
Var softmax(Var a, const std::vector<std::uint8_t>& allowed = {});
Var layer_norm(Var x, double eps = 1e-12);
Var gelu(Var a);
Var sin(Var a);
Var cos(Var a);
Var sqrt(Var a);
Var power(Var a, double p);
Var softplus(Var a);
Var exp(Var a);
Var log(Var a);

Var sum(Var a);
Var mean(Var a);
Var sum_last(Var a);  // drops the last axis

Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
Var reshape(Var a, Shape shape);

/// x / max(||x||, 1e-12) along the last axis.
Var l2_normalize(Var a);

/// Mean cross entropy over rows whose target is >= 0; 0 when none are.
Var cross_entropy_with_logits(Var logits, const std::vector<int>& targets);

/// Forward copy that blocks gradient flow.
Var stop_gradient(Var a);

/// Forward value is exactly `value`; the incoming gradient is passed
/// unchanged to `through` and nothing reaches `value`.
Var straight_through(Var through, Var value);

/// Rotary embedding over each head slice of x (n, n_heads*d_head).
Var rope(Var x, std::size_t n_heads, const std::vector<double>& positions);
void rope_inplace(Tensor& x, std::size_t n_heads, const std::vector<double>& positions, double sign = 1.0);

/// Multi-head scaled dot-product attention on (n, d) inputs. allowed is an
/// n*n row-major permission matrix (empty means all allowed). When probs is
/// given it receives the n_heads*n*n attention weights.
Var attention(Var q, Var k, Var v, std::size_t n_heads, const std::vector<std::uint8_t>& allowed = {},
              std::vector<double>* probs = nullptr);

using ScalarFn = std::function<Var(Tape&, Var)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  Tensor analytic;
  Tensor numeric;
};

/// Central finite differences against autodiff at every coordinate of point.
/// Relative error is |a-b| / max(|a|, |b|, 1e-8).
GradCheckResult grad_check_detail(const ScalarFn& f, const Tensor& point, double eps = 1e-5);
double grad_check(const ScalarFn& f, const Tensor& point, double eps = 1e-5);
double relative_error(double a, double b);

}  // namespace vqpl::grad
