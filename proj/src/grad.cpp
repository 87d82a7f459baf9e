// SPDX-License-Identifier: Apache-2.0
#include "vqpl/grad.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "vqpl/error.hpp"

namespace vqpl::grad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void mismatch(const std::string& op, const Shape& a, const Shape& b) {
  throw Error(Errc::shape_mismatch, op + ": " + shape_string(a) + " vs " + shape_string(b));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Tape& tape_of(Var a) { return *a.tape; }

Tape& common_tape(Var a, Var b) {
  if (a.tape != b.tape) throw Error(Errc::shape_mismatch, "operands recorded on different tapes");
  return *a.tape;
}

CMapMat cmat(const Tensor& t, std::size_t r, std::size_t c) { return CMapMat(t.data.data(), r, c); }
MapMat gmat(std::vector<double>& g, std::size_t r, std::size_t c) { return MapMat(g.data(), r, c); }
CMapMat cgmat(const std::vector<double>& g, std::size_t r, std::size_t c) { return CMapMat(g.data(), r, c); }

std::pair<std::size_t, std::size_t> as_matrix(const Shape& s) {
  const std::size_t cols = s.empty() ? 1 : s.back();
  const std::size_t total = shape_size(s);
  return {cols == 0 ? 0 : total / cols, cols};
}

// Unary elementwise op with derivative expressed from input and output.
template <class F, class D>
Var unary(Var a, F f, D dfdx) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = f(x.data[i]);
  const std::size_t ai = a.id;
  return t.record(std::move(out), {a}, [ai, dfdx](Tape& tp, std::size_t self) {
    if (!tp.needs_grad(ai)) return;
    const auto& g = tp.grad_of(self);
    const auto& xv = tp.value(ai).data;
    const auto& yv = tp.value(self).data;
    auto& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(xv[i], yv[i]);
  });
}

enum class Arith { add, sub, mul };

Var arith(Var a, Var b, Arith kind) {
  Tape& t = common_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool a_big = x.size() >= y.size();
  const Tensor& big = a_big ? x : y;
  const Tensor& small = a_big ? y : x;
  if (!is_suffix(small.shape, big.shape)) mismatch("elementwise", x.shape, y.shape);
  const std::size_t n = big.size();
  const std::size_t m = small.size();
  Tensor out(big.shape);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = a_big ? x.data[i] : x.data[i % m];
    const double v = a_big ? y.data[i % m] : y.data[i];
    switch (kind) {
      case Arith::add: out.data[i] = u + v; break;
      case Arith::sub: out.data[i] = u - v; break;
      case Arith::mul: out.data[i] = u * v; break;
    }
  }
  const std::size_t ai = a.id, bi = b.id;
  return t.record(std::move(out), {a, b}, [ai, bi, kind, a_big, n, m](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    const auto& xv = tp.value(ai).data;
    const auto& yv = tp.value(bi).data;
    const std::size_t na = a_big ? n : m;
    const std::size_t nb = a_big ? m : n;
    if (tp.needs_grad(ai)) {
      auto& ga = tp.grad_buffer(ai);
      for (std::size_t i = 0; i < n; ++i) {
        double d = g[i];
        if (kind == Arith::mul) d *= yv[i % nb];
        ga[i % na] += d;
      }
    }
    if (tp.needs_grad(bi)) {
      auto& gb = tp.grad_buffer(bi);
      for (std::size_t i = 0; i < n; ++i) {
        double d = g[i];
        if (kind == Arith::sub) d = -d;
        if (kind == Arith::mul) d *= xv[i % na];
        gb[i % nb] += d;
      }
    }
  });
}

// outer x axis x inner decomposition for concat/slice.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

constexpr double kNormFloor = 1e-12;

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape s) : shape(std::move(s)), data(shape_size(shape), 0.0) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_size(shape))
    throw Error(Errc::shape_mismatch, "tensor data length " + std::to_string(data.size()) + " for shape " +
                                          shape_string(shape));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::full(Shape s, double v) {
  Tensor t(std::move(s));
  std::fill(t.data.begin(), t.data.end(), v);
  return t;
}

double Tensor::item() const {
  if (data.size() != 1) throw Error(Errc::not_scalar, "item() on shape " + shape_string(shape));
  return data[0];
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data.begin(), t.data.end(), [](double v) { return std::isfinite(v); });
}

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::variable(Tensor t) {
  const bool g = t.requires_grad;
  nodes_.push_back(Node{std::move(t), {}, g, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Tape::param(Tensor t) {
  t.requires_grad = true;
  return variable(std::move(t));
}

Var Tape::constant(Tensor t) {
  t.requires_grad = false;
  return variable(std::move(t));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, Backward backward) {
  bool g = false;
  for (const auto& v : inputs) {
    if (v.tape != this) throw Error(Errc::shape_mismatch, "operand recorded on a different tape");
    g = g || nodes_[v.id].needs_grad;
  }
  if (check_finite_ && !all_finite(value))
    throw Error(Errc::numeric_error, "non-finite value produced at node " + std::to_string(nodes_.size()));
  value.requires_grad = g;
  nodes_.push_back(Node{std::move(value), {}, g, g ? std::move(backward) : nullptr});
  return Var{this, nodes_.size() - 1};
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw Error(Errc::shape_mismatch, "loss recorded on a different tape");
  if (nodes_[loss.id].value.size() != 1)
    throw Error(Errc::not_scalar, "backward from shape " + shape_string(nodes_[loss.id].value.shape));
  for (auto& n : nodes_) n.grad.clear();
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
}

Tensor Tape::grad(Var v) const {
  const auto& n = nodes_[v.id];
  Tensor out(n.value.shape);
  if (!n.grad.empty()) out.data = n.grad;
  return out;
}

Var add(Var a, Var b) { return arith(a, b, Arith::add); }
Var sub(Var a, Var b) { return arith(a, b, Arith::sub); }
Var mul(Var a, Var b) { return arith(a, b, Arith::mul); }

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var matmul(Var a, Var b) {
  Tape& t = common_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.shape[1] != y.shape[0]) mismatch("matmul", x.shape, y.shape);
  const std::size_t n = x.shape[0], k = x.shape[1], m = y.shape[1];
  Tensor out({n, m});
  MapMat(out.data.data(), n, m).noalias() = cmat(x, n, k) * cmat(y, k, m);
  const std::size_t ai = a.id, bi = b.id;
  return t.record(std::move(out), {a, b}, [ai, bi, n, k, m](Tape& tp, std::size_t self) {
    const auto g = cgmat(tp.grad_of(self), n, m);
    if (tp.needs_grad(ai)) gmat(tp.grad_buffer(ai), n, k).noalias() += g * cmat(tp.value(bi), k, m).transpose();
    if (tp.needs_grad(bi)) gmat(tp.grad_buffer(bi), k, m).noalias() += cmat(tp.value(ai), n, k).transpose() * g;
  });
}

Var transpose(Var a) {
  const Tensor& x = a.value();
  if (x.rank() != 2) throw Error(Errc::shape_mismatch, "transpose needs rank 2, got " + shape_string(x.shape));
  const std::size_t r = x.shape[0], c = x.shape[1];
  Tensor out({c, r});
  MapMat(out.data.data(), c, r) = cmat(x, r, c).transpose();
  const std::size_t ai = a.id;
  return tape_of(a).record(std::move(out), {a}, [ai, r, c](Tape& tp, std::size_t self) {
    gmat(tp.grad_buffer(ai), r, c) += cgmat(tp.grad_of(self), c, r).transpose();
  });
}

Var linear(Var x, Var weight, Var bias) { return add(matmul(x, weight), bias); }

Var gather(Var table, const std::vector<int>& ids) {
  const Tensor& tb = table.value();
  if (tb.rank() != 2) throw Error(Errc::shape_mismatch, "gather table must be rank 2");
  const std::size_t v = tb.shape[0], d = tb.shape[1];
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
      throw Error(Errc::shape_mismatch, "gather index " + std::to_string(ids[i]) + " outside table of " +
                                            std::to_string(v));
    std::copy_n(tb.data.begin() + ids[i] * d, d, out.data.begin() + i * d);
  }
  const std::size_t ti = table.id;
  return tape_of(table).record(std::move(out), {table}, [ti, ids, d](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    auto& gt = tp.grad_buffer(ti);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt[ids[i] * d + j] += g[i * d + j];
  });
}

Var softmax(Var a, const std::vector<std::uint8_t>& allowed) {
  const Tensor& x = a.value();
  if (!allowed.empty() && allowed.size() != x.size())
    throw Error(Errc::shape_mismatch, "softmax mask size " + std::to_string(allowed.size()));
  const auto [rows, cols] = as_matrix(x.shape);
  Tensor out(x.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data.data() + r * cols;
    double* o = out.data.data() + r * cols;
    const auto ok = [&](std::size_t c) { return allowed.empty() || allowed[r * cols + c]; };
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c)
      if (ok(c)) mx = std::max(mx, in[c]);
    if (!std::isfinite(mx)) continue;
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = ok(c) ? std::exp(in[c] - mx) : 0.0;
      z += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  const std::size_t ai = a.id;
  return tape_of(a).record(std::move(out), {a}, [ai, rows = rows, cols = cols](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    const auto& y = tp.value(self).data;
    auto& ga = tp.grad_buffer(ai);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
    }
  });
}

Var layer_norm(Var x, double eps) {
  const Tensor& xv = x.value();
  const auto [rows, cols] = as_matrix(xv.shape);
  Tensor out(xv.shape);
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += in[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) out.data[r * cols + c] = (in[c] - mu) * inv_std[r];
  }
  const std::size_t xi = x.id;
  return tape_of(x).record(std::move(out), {x},
                           [xi, rows = rows, cols = cols, inv_std = std::move(inv_std)](Tape& tp, std::size_t self) {
                             const auto& g = tp.grad_of(self);
                             const auto& y = tp.value(self).data;
                             auto& gx = tp.grad_buffer(xi);
                             const double inv_n = 1.0 / static_cast<double>(cols);
                             for (std::size_t r = 0; r < rows; ++r) {
                               double mg = 0.0, mgy = 0.0;
                               for (std::size_t c = 0; c < cols; ++c) {
                                 mg += g[r * cols + c];
                                 mgy += g[r * cols + c] * y[r * cols + c];
                               }
                               mg *= inv_n;
                               mgy *= inv_n;
                               for (std::size_t c = 0; c < cols; ++c) {
                                 const std::size_t i = r * cols + c;
                                 gx[i] += inv_std[r] * (g[i] - mg - y[i] * mgy);
                               }
                             }
                           });
}

Var gelu(Var a) {
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); },
      [](double x, double) {
        const double pdf = std::exp(-0.5 * x * x) * 0.5 * M_2_SQRTPI * M_SQRT1_2;
        return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * pdf;
      });
}

Var sin(Var a) {
  return unary(a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Var cos(Var a) {
  return unary(a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

Var sqrt(Var a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var power(Var a, double p) {
  return unary(a, [p](double x) { return std::pow(x, p); },
               [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Var softplus(Var a) {
  return unary(
      a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sum(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.data) s += v;
  const std::size_t ai = a.id;
  return tape_of(a).record(Tensor::scalar(s), {a}, [ai](Tape& tp, std::size_t self) {
    const double g = tp.grad_of(self)[0];
    for (double& v : tp.grad_buffer(ai)) v += g;
  });
}

Var mean(Var a) {
  const auto n = a.value().size();
  return scale(sum(a), n ? 1.0 / static_cast<double>(n) : 0.0);
}

Var sum_last(Var a) {
  const Tensor& x = a.value();
  if (x.rank() == 0) throw Error(Errc::shape_mismatch, "sum_last on a scalar");
  const auto [rows, cols] = as_matrix(x.shape);
  Shape s(x.shape.begin(), x.shape.end() - 1);
  Tensor out(s);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.data[r] += x.data[r * cols + c];
  const std::size_t ai = a.id;
  return tape_of(a).record(std::move(out), {a}, [ai, rows = rows, cols = cols](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    auto& ga = tp.grad_buffer(ai);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[r];
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw Error(Errc::shape_mismatch, "concat of nothing");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw Error(Errc::shape_mismatch, "concat axis out of range");
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) mismatch("concat", s0, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != s0[i]) mismatch("concat", s0, s);
    out_shape[axis] += s[axis];
  }
  const AxisSplit o = split_axis(out_shape, axis);
  Tensor out(out_shape);
  std::vector<std::size_t> offsets, extents, ids;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t ext = p.shape()[axis];
    const auto& src = p.value().data;
    for (std::size_t a = 0; a < o.outer; ++a)
      std::copy_n(src.begin() + a * ext * o.inner, ext * o.inner,
                  out.data.begin() + (a * o.extent + off) * o.inner);
    offsets.push_back(off);
    extents.push_back(ext);
    ids.push_back(p.id);
    off += ext;
  }
  return tape_of(parts[0]).record(std::move(out), parts, [o, offsets, extents, ids](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.needs_grad(ids[k])) continue;
      auto& gp = tp.grad_buffer(ids[k]);
      const std::size_t span = extents[k] * o.inner;
      for (std::size_t a = 0; a < o.outer; ++a) {
        const double* src = g.data() + (a * o.extent + offsets[k]) * o.inner;
        double* dst = gp.data() + a * span;
        for (std::size_t i = 0; i < span; ++i) dst[i] += src[i];
      }
    }
  });
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin > end || end > s[axis])
    throw Error(Errc::shape_mismatch, "slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                                          shape_string(s));
  const AxisSplit o = split_axis(s, axis);
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const std::size_t span = (end - begin) * o.inner;
  const auto& src = a.value().data;
  for (std::size_t i = 0; i < o.outer; ++i)
    std::copy_n(src.begin() + (i * o.extent + begin) * o.inner, span, out.data.begin() + i * span);
  const std::size_t ai = a.id;
  return tape_of(a).record(std::move(out), {a}, [ai, o, begin, span](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    auto& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < o.outer; ++i) {
      double* dst = ga.data() + (i * o.extent + begin) * o.inner;
      for (std::size_t j = 0; j < span; ++j) dst[j] += g[i * span + j];
    }
  });
}

Var reshape(Var a, Shape shape) {
  if (shape_size(shape) != a.value().size()) mismatch("reshape", a.shape(), shape);
  Tensor out(std::move(shape), a.value().data);
  const std::size_t ai = a.id;
  return tape_of(a).record(std::move(out), {a}, [ai](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    auto& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var l2_normalize(Var a) {
  const Tensor& x = a.value();
  const auto [rows, cols] = as_matrix(x.shape);
  Tensor out(x.shape);
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += x.data[r * cols + c] * x.data[r * cols + c];
    norms[r] = std::sqrt(s);
    const double d = std::max(norms[r], kNormFloor);
    for (std::size_t c = 0; c < cols; ++c) out.data[r * cols + c] = x.data[r * cols + c] / d;
  }
  const std::size_t ai = a.id;
  return tape_of(a).record(std::move(out), {a},
                           [ai, rows = rows, cols = cols, norms = std::move(norms)](Tape& tp, std::size_t self) {
                             const auto& g = tp.grad_of(self);
                             const auto& y = tp.value(self).data;
                             auto& ga = tp.grad_buffer(ai);
                             for (std::size_t r = 0; r < rows; ++r) {
                               const std::size_t b = r * cols;
                               if (norms[r] > kNormFloor) {
                                 double dot = 0.0;
                                 for (std::size_t c = 0; c < cols; ++c) dot += y[b + c] * g[b + c];
                                 for (std::size_t c = 0; c < cols; ++c)
                                   ga[b + c] += (g[b + c] - y[b + c] * dot) / norms[r];
                               } else {
                                 for (std::size_t c = 0; c < cols; ++c) ga[b + c] += g[b + c] / kNormFloor;
                               }
                             }
                           });
}

Var cross_entropy_with_logits(Var logits, const std::vector<int>& targets) {
  const Tensor& x = logits.value();
  const auto [rows, cols] = as_matrix(x.shape);
  if (x.rank() != 2 || targets.size() != rows)
    throw Error(Errc::shape_mismatch, "cross entropy logits " + shape_string(x.shape) + " with " +
                                          std::to_string(targets.size()) + " targets");
  std::vector<double> probs(x.size(), 0.0);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0) continue;
    if (static_cast<std::size_t>(targets[r]) >= cols)
      throw Error(Errc::shape_mismatch, "target class " + std::to_string(targets[r]) + " >= " + std::to_string(cols));
    const double* in = x.data.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(in[c] - mx);
    for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] = std::exp(in[c] - mx) / z;
    total += mx + std::log(z) - in[targets[r]];
    ++count;
  }
  const double inv = count ? 1.0 / static_cast<double>(count) : 0.0;
  const std::size_t li = logits.id;
  return tape_of(logits).record(
      Tensor::scalar(total * inv), {logits},
      [li, targets, probs = std::move(probs), inv, cols = cols](Tape& tp, std::size_t self) {
        const double g = tp.grad_of(self)[0] * inv;
        auto& gl = tp.grad_buffer(li);
        for (std::size_t r = 0; r < targets.size(); ++r) {
          if (targets[r] < 0) continue;
          for (std::size_t c = 0; c < cols; ++c) gl[r * cols + c] += g * probs[r * cols + c];
          gl[r * cols + targets[r]] -= g;
        }
      });
}

Var stop_gradient(Var a) { return tape_of(a).constant(a.value()); }

Var straight_through(Var through, Var value) {
  Tape& t = common_tape(through, value);
  if (through.shape() != value.shape()) mismatch("straight_through", through.shape(), value.shape());
  const std::size_t ti = through.id;
  return t.record(value.value(), {through}, [ti](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    auto& gt = tp.grad_buffer(ti);
    for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
  });
}

void rope_inplace(Tensor& x, std::size_t n_heads, const std::vector<double>& positions, double sign) {
  if (x.rank() != 2) throw Error(Errc::shape_mismatch, "rope expects (n, d), got " + shape_string(x.shape));
  const std::size_t n = x.shape[0], d = x.shape[1];
  if (n_heads == 0 || d % n_heads != 0)
    throw Error(Errc::shape_mismatch, "width " + std::to_string(d) + " not divisible by heads");
  const std::size_t dh = d / n_heads;
  if (dh % 2 != 0) throw Error(Errc::odd_head_dim, "head dim " + std::to_string(dh) + " is odd");
  if (positions.size() != n) throw Error(Errc::shape_mismatch, "rope positions length mismatch");
  std::vector<double> theta(dh / 2);
  for (std::size_t t = 0; t < dh / 2; ++t)
    theta[t] = std::pow(10000.0, -2.0 * static_cast<double>(t) / static_cast<double>(dh));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < dh / 2; ++t) {
      const double ang = sign * positions[i] * theta[t];
      const double c = std::cos(ang), s = std::sin(ang);
      for (std::size_t h = 0; h < n_heads; ++h) {
        double* p = x.data.data() + i * d + h * dh + 2 * t;
        const double x0 = p[0], x1 = p[1];
        p[0] = x0 * c - x1 * s;
        p[1] = x0 * s + x1 * c;
      }
    }
  }
}

Var rope(Var x, std::size_t n_heads, const std::vector<double>& positions) {
  Tensor out = x.value();
  rope_inplace(out, n_heads, positions, 1.0);
  const std::size_t xi = x.id;
  const Shape s = out.shape;
  return tape_of(x).record(std::move(out), {x}, [xi, n_heads, positions, s](Tape& tp, std::size_t self) {
    Tensor g(s, tp.grad_of(self));
    rope_inplace(g, n_heads, positions, -1.0);
    auto& gx = tp.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g.data[i];
  });
}

Var attention(Var q, Var k, Var v, std::size_t n_heads, const std::vector<std::uint8_t>& allowed,
              std::vector<double>* probs) {
  Tape& t = common_tape(q, k);
  common_tape(q, v);
  const Tensor& qv = q.value();
  if (qv.rank() != 2 || k.shape() != qv.shape || v.shape() != qv.shape)
    mismatch("attention", qv.shape, k.shape());
  const std::size_t n = qv.shape[0], d = qv.shape[1];
  if (n_heads == 0 || d % n_heads != 0)
    throw Error(Errc::shape_mismatch, "width " + std::to_string(d) + " not divisible by heads");
  if (!allowed.empty() && allowed.size() != n * n)
    throw Error(Errc::shape_mismatch, "attention mask must be n*n");
  const std::size_t dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto Q = cmat(qv, n, d), K = cmat(k.value(), n, d), V = cmat(v.value(), n, d);
  std::vector<double> p(n_heads * n * n);
  Tensor out({n, d});
  MapMat O(out.data.data(), n, d);
  for (std::size_t h = 0; h < n_heads; ++h) {
    MapMat P(p.data() + h * n * n, n, n);
    P.noalias() = Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose();
    P *= inv_sqrt;
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j)
        if (allowed.empty() || allowed[i * n + j]) mx = std::max(mx, P(i, j));
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const bool ok = (allowed.empty() || allowed[i * n + j]) && std::isfinite(mx);
        P(i, j) = ok ? std::exp(P(i, j) - mx) : 0.0;
        z += P(i, j);
      }
      if (z > 0.0) P.row(i) /= z;
    }
    O.middleCols(h * dh, dh).noalias() = P * V.middleCols(h * dh, dh);
  }
  if (probs) *probs = p;
  const std::size_t qi = q.id, ki = k.id, vi = v.id;
  return t.record(std::move(out), {q, k, v},
                  [qi, ki, vi, n, d, dh, n_heads, inv_sqrt, p = std::move(p)](Tape& tp, std::size_t self) {
                    const auto G = cgmat(tp.grad_of(self), n, d);
                    const auto Qm = cmat(tp.value(qi), n, d), Km = cmat(tp.value(ki), n, d),
                               Vm = cmat(tp.value(vi), n, d);
                    const bool gq = tp.needs_grad(qi), gk = tp.needs_grad(ki), gv = tp.needs_grad(vi);
                    RowMat dP(n, n);
                    for (std::size_t h = 0; h < n_heads; ++h) {
                      const CMapMat P(p.data() + h * n * n, n, n);
                      const auto Gh = G.middleCols(h * dh, dh);
                      if (gv) gmat(tp.grad_buffer(vi), n, d).middleCols(h * dh, dh).noalias() += P.transpose() * Gh;
                      if (!gq && !gk) continue;
                      dP.noalias() = Gh * Vm.middleCols(h * dh, dh).transpose();
                      for (std::size_t i = 0; i < n; ++i) {
                        const double dot = dP.row(i).dot(P.row(i));
                        dP.row(i) = P.row(i).cwiseProduct((dP.row(i).array() - dot).matrix());
                      }
                      dP *= inv_sqrt;
                      if (gq)
                        gmat(tp.grad_buffer(qi), n, d).middleCols(h * dh, dh).noalias() +=
                            dP * Km.middleCols(h * dh, dh);
                      if (gk)
                        gmat(tp.grad_buffer(ki), n, d).middleCols(h * dh, dh).noalias() +=
                            dP.transpose() * Qm.middleCols(h * dh, dh);
                    }
                  });
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

GradCheckResult grad_check_detail(const ScalarFn& f, const Tensor& point, double eps) {
  GradCheckResult r;
  {
    Tape tape(false);
    Var x = tape.param(point);
    Var y = f(tape, x);
    tape.backward(y);
    r.analytic = tape.grad(x);
  }
  r.numeric = Tensor(point.shape);
  auto eval = [&](const Tensor& p) {
    Tape tape(false);
    Var x = tape.param(p);
    return f(tape, x).value().item();
  };
  Tensor p = point;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p.data[i];
    p.data[i] = orig + eps;
    const double hi = eval(p);
    p.data[i] = orig - eps;
    const double lo = eval(p);
    p.data[i] = orig;
    r.numeric.data[i] = (hi - lo) / (2.0 * eps);
    r.max_rel_error = std::max(r.max_rel_error, relative_error(r.analytic.data[i], r.numeric.data[i]));
  }
  return r;
}

double grad_check(const ScalarFn& f, const Tensor& point, double eps) {
  return grad_check_detail(f, point, eps).max_rel_error;
}

}  // namespace vqpl::grad
