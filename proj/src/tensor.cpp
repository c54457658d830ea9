#include "disp/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "disp/errors.hpp"
#include "parallel.hpp"

namespace disp {

using detail::TensorNode;
using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

namespace {

std::size_t shape_product(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw NumericError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] void shape_error(const std::string& op, const Shape& a) {
  throw NumericError(op + ": invalid shape " + shape_str(a));
}

// GEMM with the row range of C split across threads. Eigen runs single
// threaded inside each block.
void gemm(ConstMatMap a, ConstMatMap b, MatMap c, bool accumulate) {
  detail::parallel_blocks(static_cast<std::size_t>(c.rows()), [&](std::size_t lo, std::size_t hi) {
    auto rows = static_cast<Eigen::Index>(hi - lo);
    auto off = static_cast<Eigen::Index>(lo);
    if (accumulate)
      c.middleRows(off, rows).noalias() += a.middleRows(off, rows) * b;
    else
      c.middleRows(off, rows).noalias() = a.middleRows(off, rows) * b;
  });
}

ConstMatMap cmat(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return ConstMatMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MatMap mat(std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return MatMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

}  // namespace

Tensor make_op_result(std::string op, Shape shape, std::vector<double> values,
                      std::vector<Tensor> inputs,
                      std::function<void(TensorNode&)> backprop);

// ---------------------------------------------------------------------------
// Tensor handle

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return from_values(shape, std::vector<double>(shape_product(shape), 0.0), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_product(shape) != values.size())
    throw NumericError("tensor: shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->values.size(); }

std::span<const double> Tensor::values() const { return node_->values; }
std::span<double> Tensor::values_mut() { return node_->values; }

double Tensor::item() const {
  if (size() != 1) throw NumericError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

std::span<const double> Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

std::span<double> Tensor::grad_mut() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

Tensor Tensor::detached(bool requires_grad) const {
  return from_values(node_->shape, node_->values, requires_grad);
}

Tensor make_op_result(std::string op, Shape shape, std::vector<double> values,
                      std::vector<Tensor> inputs,
                      std::function<void(TensorNode&)> backprop) {
  Tensor out = Tensor::from_values(std::move(shape), std::move(values), false);
  bool needs_record = false;
  for (const Tensor& t : inputs) needs_record |= t.requires_grad();
  if (needs_record) {
    TensorNode* node = out.node_.get();
    node->requires_grad = true;
    node->op = std::move(op);
    node->backprop = std::move(backprop);
    node->inputs.reserve(inputs.size());
    for (const Tensor& t : inputs) node->inputs.push_back(t.node_);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Primitives

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
    shape_error("matmul", a.shape(), b.shape());
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  {
    auto c = mat(out, m, n);
    gemm(cmat(a.node()->values, m, k), cmat(b.node()->values, k, n), c, false);
  }
  return make_op_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& node) {
    auto& a_in = *node.inputs[0];
    auto& b_in = *node.inputs[1];
    ConstMatMap g(node.grad.data(), m, n);
    if (a_in.requires_grad) {
      a_in.ensure_grad();
      MatMap ga(a_in.grad.data(), m, k);
      ConstMatMap bm(b_in.values.data(), k, n);
      detail::parallel_blocks(m, [&](std::size_t lo, std::size_t hi) {
        auto rows = static_cast<Eigen::Index>(hi - lo);
        auto off = static_cast<Eigen::Index>(lo);
        ga.middleRows(off, rows).noalias() += g.middleRows(off, rows) * bm.transpose();
      });
    }
    if (b_in.requires_grad) {
      b_in.ensure_grad();
      MatMap gb(b_in.grad.data(), k, n);
      ConstMatMap am(a_in.values.data(), m, k);
      // Split over columns of gb so writes stay disjoint.
      detail::parallel_blocks(n, [&](std::size_t lo, std::size_t hi) {
        auto cols = static_cast<Eigen::Index>(hi - lo);
        auto off = static_cast<Eigen::Index>(lo);
        gb.middleCols(off, cols).noalias() += am.transpose() * g.middleCols(off, cols);
      });
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.shape().size() != 2) shape_error("transpose", a.shape());
  std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  mat(out, n, m) = cmat(a.node()->values, m, n).transpose();
  return make_op_result("transpose", {n, m}, std::move(out), {a}, [m, n](TensorNode& node) {
    auto& a_in = *node.inputs[0];
    if (!a_in.requires_grad) return;
    a_in.ensure_grad();
    MatMap ga(a_in.grad.data(), m, n);
    ConstMatMap g(node.grad.data(), n, m);
    ga.noalias() += g.transpose();
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  const bool row_bias =
      a.shape().size() == 2 && b.shape().size() == 1 && b.dim(0) == a.dim(1);
  if (!same && !row_bias) shape_error("add", a.shape(), b.shape());
  std::vector<double> out(a.size());
  const auto& av = a.node()->values;
  const auto& bv = b.node()->values;
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  } else {
    std::size_t n = b.dim(0);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i % n];
  }
  return make_op_result("add", a.shape(), std::move(out), {a, b}, [same](TensorNode& node) {
    auto& a_in = *node.inputs[0];
    auto& b_in = *node.inputs[1];
    if (a_in.requires_grad) {
      a_in.ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i) a_in.grad[i] += node.grad[i];
    }
    if (b_in.requires_grad) {
      b_in.ensure_grad();
      if (same) {
        for (std::size_t i = 0; i < node.grad.size(); ++i) b_in.grad[i] += node.grad[i];
      } else {
        std::size_t n = b_in.values.size();
        for (std::size_t i = 0; i < node.grad.size(); ++i) b_in.grad[i % n] += node.grad[i];
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  std::vector<double> out(a.size());
  const auto& av = a.node()->values;
  const auto& bv = b.node()->values;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op_result("mul", a.shape(), std::move(out), {a, b}, [](TensorNode& node) {
    auto& a_in = *node.inputs[0];
    auto& b_in = *node.inputs[1];
    if (a_in.requires_grad) {
      a_in.ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i)
        a_in.grad[i] += node.grad[i] * b_in.values[i];
    }
    if (b_in.requires_grad) {
      b_in.ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i)
        b_in.grad[i] += node.grad[i] * a_in.values[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  const auto& av = a.node()->values;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  return make_op_result("scale", a.shape(), std::move(out), {a}, [c](TensorNode& node) {
    auto& a_in = *node.inputs[0];
    if (!a_in.requires_grad) return;
    a_in.ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i) a_in.grad[i] += node.grad[i] * c;
  });
}

namespace {

template <typename FwdFn, typename BwdFn>
Tensor elementwise(const char* op, const Tensor& a, FwdFn fwd, BwdFn dfdx_from_x) {
  std::vector<double> out(a.size());
  const auto& av = a.node()->values;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return make_op_result(op, a.shape(), std::move(out), {a}, [dfdx_from_x](TensorNode& node) {
    auto& a_in = *node.inputs[0];
    if (!a_in.requires_grad) return;
    a_in.ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i)
      a_in.grad[i] += node.grad[i] * dfdx_from_x(a_in.values[i]);
  });
}

}  // namespace

Tensor tanh(const Tensor& a) {
  return elementwise(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double x) {
        double t = std::tanh(x);
        return 1.0 - t * t;
      });
}

Tensor relu(const Tensor& a) {
  return elementwise(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& a) {
  // Subgradient 0 at exactly 0.
  return elementwise(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.node()->values) acc += v;
  double inv_n = 1.0 / static_cast<double>(a.size());
  return make_op_result("mean", {1}, {acc * inv_n}, {a}, [inv_n](TensorNode& node) {
    auto& a_in = *node.inputs[0];
    if (!a_in.requires_grad) return;
    a_in.ensure_grad();
    double g = node.grad[0] * inv_n;
    for (double& gi : a_in.grad) gi += g;
  });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.node()->values) acc += v;
  return make_op_result("sum", {1}, {acc}, {a}, [](TensorNode& node) {
    auto& a_in = *node.inputs[0];
    if (!a_in.requires_grad) return;
    a_in.ensure_grad();
    double g = node.grad[0];
    for (double& gi : a_in.grad) gi += g;
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 1 || a.shape() != b.shape()) shape_error("dot", a.shape(), b.shape());
  double acc = 0.0;
  const auto& av = a.node()->values;
  const auto& bv = b.node()->values;
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  return make_op_result("dot", {1}, {acc}, {a, b}, [](TensorNode& node) {
    auto& a_in = *node.inputs[0];
    auto& b_in = *node.inputs[1];
    double g = node.grad[0];
    if (a_in.requires_grad) {
      a_in.ensure_grad();
      for (std::size_t i = 0; i < a_in.values.size(); ++i) a_in.grad[i] += g * b_in.values[i];
    }
    if (b_in.requires_grad) {
      b_in.ensure_grad();
      for (std::size_t i = 0; i < b_in.values.size(); ++i) b_in.grad[i] += g * a_in.values[i];
    }
  });
}

Tensor l2_normalize(const Tensor& a) {
  std::size_t rows, cols;
  if (a.shape().size() == 1) {
    rows = 1;
    cols = a.dim(0);
  } else if (a.shape().size() == 2) {
    rows = a.dim(0);
    cols = a.dim(1);
  } else {
    shape_error("l2_normalize", a.shape());
  }
  const auto& av = a.node()->values;
  std::vector<double> out(a.size());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sq += av[r * cols + c] * av[r * cols + c];
    double norm = std::sqrt(sq);
    if (norm < kEpsilonNorm)
      throw NumericError("l2_normalize: row " + std::to_string(r) + " has norm " +
                         std::to_string(norm) + " below epsilon; degenerate feature vector");
    norms[r] = norm;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = av[r * cols + c] / norm;
  }
  return make_op_result("l2_normalize", a.shape(), std::move(out), {a},
                        [rows, cols, norms](TensorNode& node) {
                          auto& a_in = *node.inputs[0];
                          if (!a_in.requires_grad) return;
                          a_in.ensure_grad();
                          // d(v/|v|)/dv applied to g: (g - vhat (vhat.g)) / |v|
                          for (std::size_t r = 0; r < rows; ++r) {
                            const double* v = a_in.values.data() + r * cols;
                            const double* g = node.grad.data() + r * cols;
                            double inv = 1.0 / norms[r];
                            double vg = 0.0;
                            for (std::size_t c = 0; c < cols; ++c) vg += v[c] * g[c];
                            double k = vg * inv * inv;
                            double* ga = a_in.grad.data() + r * cols;
                            for (std::size_t c = 0; c < cols; ++c)
                              ga[c] += (g[c] - v[c] * k) * inv;
                          }
                        });
}

// ---------------------------------------------------------------------------
// conv2d via batched im2col + GEMM

namespace {

struct ConvDims {
  std::size_t m, cin, h, w, cout, k, stride, pad, hout, wout;
  std::size_t patch_cols() const { return cin * k * k; }
  std::size_t out_positions() const { return hout * wout; }
};

void im2col(const ConvDims& d, const std::vector<double>& x, std::vector<double>& patches) {
  // patches: [m*hout*wout, cin*k*k]
  detail::parallel_blocks(d.m, [&](std::size_t m_lo, std::size_t m_hi) {
    for (std::size_t mi = m_lo; mi < m_hi; ++mi) {
      const double* xm = x.data() + mi * d.cin * d.h * d.w;
      double* pm = patches.data() + mi * d.out_positions() * d.patch_cols();
      for (std::size_t oy = 0; oy < d.hout; ++oy) {
        for (std::size_t ox = 0; ox < d.wout; ++ox) {
          double* row = pm + (oy * d.wout + ox) * d.patch_cols();
          for (std::size_t ci = 0; ci < d.cin; ++ci) {
            const double* xc = xm + ci * d.h * d.w;
            for (std::size_t ky = 0; ky < d.k; ++ky) {
              std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy * d.stride + ky) - static_cast<std::ptrdiff_t>(d.pad);
              double* dst = row + (ci * d.k + ky) * d.k;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) {
                std::fill(dst, dst + d.k, 0.0);
                continue;
              }
              for (std::size_t kx = 0; kx < d.k; ++kx) {
                std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * d.stride + kx) -
                                    static_cast<std::ptrdiff_t>(d.pad);
                dst[kx] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w))
                              ? 0.0
                              : xc[static_cast<std::size_t>(iy) * d.w + static_cast<std::size_t>(ix)];
              }
            }
          }
        }
      }
    }
  });
}

void col2im_add(const ConvDims& d, const std::vector<double>& patches, std::vector<double>& gx) {
  detail::parallel_blocks(d.m, [&](std::size_t m_lo, std::size_t m_hi) {
    for (std::size_t mi = m_lo; mi < m_hi; ++mi) {
      double* xm = gx.data() + mi * d.cin * d.h * d.w;
      const double* pm = patches.data() + mi * d.out_positions() * d.patch_cols();
      for (std::size_t oy = 0; oy < d.hout; ++oy) {
        for (std::size_t ox = 0; ox < d.wout; ++ox) {
          const double* row = pm + (oy * d.wout + ox) * d.patch_cols();
          for (std::size_t ci = 0; ci < d.cin; ++ci) {
            double* xc = xm + ci * d.h * d.w;
            for (std::size_t ky = 0; ky < d.k; ++ky) {
              std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy * d.stride + ky) - static_cast<std::ptrdiff_t>(d.pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
              const double* src = row + (ci * d.k + ky) * d.k;
              for (std::size_t kx = 0; kx < d.k; ++kx) {
                std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * d.stride + kx) -
                                    static_cast<std::ptrdiff_t>(d.pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
                xc[static_cast<std::size_t>(iy) * d.w + static_cast<std::size_t>(ix)] += src[kx];
              }
            }
          }
        }
      }
    }
  });
}

// [m*out_positions, cout] row-major <-> [m, cout, hout, wout]
void rows_to_nchw(const ConvDims& d, const std::vector<double>& rows, std::vector<double>& out) {
  detail::parallel_blocks(d.m, [&](std::size_t m_lo, std::size_t m_hi) {
    for (std::size_t mi = m_lo; mi < m_hi; ++mi) {
      const double* rm = rows.data() + mi * d.out_positions() * d.cout;
      double* om = out.data() + mi * d.cout * d.out_positions();
      for (std::size_t pos = 0; pos < d.out_positions(); ++pos)
        for (std::size_t co = 0; co < d.cout; ++co) om[co * d.out_positions() + pos] = rm[pos * d.cout + co];
    }
  });
}

void nchw_to_rows(const ConvDims& d, const std::vector<double>& nchw, std::vector<double>& rows) {
  detail::parallel_blocks(d.m, [&](std::size_t m_lo, std::size_t m_hi) {
    for (std::size_t mi = m_lo; mi < m_hi; ++mi) {
      const double* om = nchw.data() + mi * d.cout * d.out_positions();
      double* rm = rows.data() + mi * d.out_positions() * d.cout;
      for (std::size_t co = 0; co < d.cout; ++co)
        for (std::size_t pos = 0; pos < d.out_positions(); ++pos) rm[pos * d.cout + co] = om[co * d.out_positions() + pos];
    }
  });
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (x.shape().size() != 4 || w.shape().size() != 4 || w.dim(2) != w.dim(3) ||
      x.dim(1) != w.dim(1))
    shape_error("conv2d", x.shape(), w.shape());
  if (bias.defined() && (bias.shape().size() != 1 || bias.dim(0) != w.dim(0)))
    shape_error("conv2d", w.shape(), bias.shape());
  if (stride == 0) throw NumericError("conv2d: stride must be positive");

  ConvDims d;
  d.m = x.dim(0);
  d.cin = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.cout = w.dim(0);
  d.k = w.dim(2);
  d.stride = stride;
  d.pad = padding;
  if (d.h + 2 * d.pad < d.k || d.w + 2 * d.pad < d.k)
    shape_error("conv2d", x.shape(), w.shape());
  d.hout = (d.h + 2 * d.pad - d.k) / d.stride + 1;
  d.wout = (d.w + 2 * d.pad - d.k) / d.stride + 1;

  auto patches = std::make_shared<std::vector<double>>(d.m * d.out_positions() * d.patch_cols());
  im2col(d, x.node()->values, *patches);

  // Weights as [patch_cols, cout]: transpose the [cout, patch_cols] layout.
  std::vector<double> wt(d.patch_cols() * d.cout);
  mat(wt, d.patch_cols(), d.cout) = cmat(w.node()->values, d.cout, d.patch_cols()).transpose();

  std::vector<double> rows(d.m * d.out_positions() * d.cout);
  {
    auto c = mat(rows, d.m * d.out_positions(), d.cout);
    gemm(cmat(*patches, d.m * d.out_positions(), d.patch_cols()),
         cmat(wt, d.patch_cols(), d.cout), c, false);
  }
  if (bias.defined()) {
    const auto& bv = bias.node()->values;
    detail::parallel_blocks(d.m * d.out_positions(), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t r = lo; r < hi; ++r)
        for (std::size_t co = 0; co < d.cout; ++co) rows[r * d.cout + co] += bv[co];
    });
  }
  std::vector<double> out(d.m * d.cout * d.out_positions());
  rows_to_nchw(d, rows, out);

  std::vector<Tensor> inputs = {x, w};
  if (bias.defined()) inputs.push_back(bias);
  bool has_bias = bias.defined();
  return make_op_result(
      "conv2d", {d.m, d.cout, d.hout, d.wout}, std::move(out), std::move(inputs),
      [d, patches, has_bias](TensorNode& node) {
        auto& x_in = *node.inputs[0];
        auto& w_in = *node.inputs[1];
        std::vector<double> grows(d.m * d.out_positions() * d.cout);
        nchw_to_rows(d, node.grad, grows);
        ConstMatMap gm(grows.data(), static_cast<Eigen::Index>(d.m * d.out_positions()),
                       static_cast<Eigen::Index>(d.cout));
        if (has_bias) {
          auto& b_in = *node.inputs[2];
          if (b_in.requires_grad) {
            b_in.ensure_grad();
            for (std::size_t r = 0; r < d.m * d.out_positions(); ++r)
              for (std::size_t co = 0; co < d.cout; ++co) b_in.grad[co] += grows[r * d.cout + co];
          }
        }
        if (w_in.requires_grad) {
          w_in.ensure_grad();
          // gW^T [patch_cols, cout] = P^T * g, written back transposed.
          std::vector<double> gwt(d.patch_cols() * d.cout);
          auto gwtm = mat(gwt, d.patch_cols(), d.cout);
          ConstMatMap pm(patches->data(), static_cast<Eigen::Index>(d.m * d.out_positions()),
                         static_cast<Eigen::Index>(d.patch_cols()));
          detail::parallel_blocks(d.patch_cols(), [&](std::size_t lo, std::size_t hi) {
            auto rows_n = static_cast<Eigen::Index>(hi - lo);
            auto off = static_cast<Eigen::Index>(lo);
            gwtm.middleRows(off, rows_n).noalias() = pm.middleCols(off, rows_n).transpose() * gm;
          });
          MatMap gw(w_in.grad.data(), static_cast<Eigen::Index>(d.cout),
                    static_cast<Eigen::Index>(d.patch_cols()));
          gw.noalias() += gwtm.transpose();
        }
        if (x_in.requires_grad) {
          x_in.ensure_grad();
          // gP = g * W  ([m*pos, patch_cols]), then scatter back onto gx.
          std::vector<double> gpatches(d.m * d.out_positions() * d.patch_cols());
          auto gp = mat(gpatches, d.m * d.out_positions(), d.patch_cols());
          ConstMatMap wm(w_in.values.data(), static_cast<Eigen::Index>(d.cout),
                         static_cast<Eigen::Index>(d.patch_cols()));
          detail::parallel_blocks(d.m * d.out_positions(), [&](std::size_t lo, std::size_t hi) {
            auto rows_n = static_cast<Eigen::Index>(hi - lo);
            auto off = static_cast<Eigen::Index>(lo);
            gp.middleRows(off, rows_n).noalias() = gm.middleRows(off, rows_n) * wm;
          });
          col2im_add(d, gpatches, x_in.grad);
        }
      });
}

Tensor avg_pool_global(const Tensor& x) {
  if (x.shape().size() != 4) shape_error("avg_pool", x.shape());
  std::size_t m = x.dim(0), c = x.dim(1), spatial = x.dim(2) * x.dim(3);
  const auto& xv = x.node()->values;
  std::vector<double> out(m * c);
  double inv = 1.0 / static_cast<double>(spatial);
  for (std::size_t mi = 0; mi < m; ++mi)
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double* p = xv.data() + (mi * c + ci) * spatial;
      double acc = 0.0;
      for (std::size_t s = 0; s < spatial; ++s) acc += p[s];
      out[mi * c + ci] = acc * inv;
    }
  return make_op_result("avg_pool", {m, c}, std::move(out), {x},
                        [m, c, spatial, inv](TensorNode& node) {
                          auto& x_in = *node.inputs[0];
                          if (!x_in.requires_grad) return;
                          x_in.ensure_grad();
                          for (std::size_t mi = 0; mi < m; ++mi)
                            for (std::size_t ci = 0; ci < c; ++ci) {
                              double g = node.grad[mi * c + ci] * inv;
                              double* p = x_in.grad.data() + (mi * c + ci) * spatial;
                              for (std::size_t s = 0; s < spatial; ++s) p[s] += g;
                            }
                        });
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.shape().size() != 2 || logits.dim(0) != labels.size())
    shape_error("softmax_cross_entropy", logits.shape());
  std::size_t m = logits.dim(0), c = logits.dim(1);
  for (int t : labels)
    if (t < 0 || static_cast<std::size_t>(t) >= c)
      throw NumericError("softmax_cross_entropy: label " + std::to_string(t) + " out of range");

  const auto& lv = logits.node()->values;
  auto softmax = std::make_shared<std::vector<double>>(m * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = lv.data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    double logz = std::log(z) + mx;
    for (std::size_t j = 0; j < c; ++j) (*softmax)[i * c + j] = std::exp(row[j] - logz);
    loss -= row[static_cast<std::size_t>(labels[i])] - logz;
  }
  loss /= static_cast<double>(m);
  return make_op_result("softmax_cross_entropy", {1}, {loss}, {logits},
                        [m, c, labels, softmax](TensorNode& node) {
                          auto& l_in = *node.inputs[0];
                          if (!l_in.requires_grad) return;
                          l_in.ensure_grad();
                          double g = node.grad[0] / static_cast<double>(m);
                          for (std::size_t i = 0; i < m; ++i) {
                            double* gl = l_in.grad.data() + i * c;
                            const double* s = softmax->data() + i * c;
                            for (std::size_t j = 0; j < c; ++j) gl[j] += g * s[j];
                            gl[static_cast<std::size_t>(labels[i])] -= g;
                          }
                        });
}

// ---------------------------------------------------------------------------
// Reverse sweep

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw NumericError("backward: loss must be a scalar tensor");
  TensorNode* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS; each node enters the order exactly once.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      TensorNode* child = node->inputs[next].get();
      ++next;
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients are scratch for this sweep; leaves accumulate across
  // sweeps until explicitly reset.
  for (TensorNode* node : order)
    if (node->backprop) node->grad.assign(node->values.size(), 0.0);
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop(**it);
}

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                               double step) {
  if (!(step > 0.0) || step > 1e-3)
    throw NumericError("finite_difference_check: step must be in (0, 1e-3]");

  Tensor var = x.detached(true);
  Tensor y = f(var);
  if (y.size() != 1) throw NumericError("finite_difference_check: f must be scalar-valued");
  if (!std::isfinite(y.item()))
    throw NumericError("finite_difference_check: non-finite evaluation");
  backward(y);
  std::vector<double> analytic(var.grad().begin(), var.grad().end());

  std::vector<double> base(x.values().begin(), x.values().end());
  double worst = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto eval = [&](double v) {
      std::vector<double> perturbed = base;
      perturbed[i] = v;
      double out = f(Tensor::from_values(x.shape(), std::move(perturbed))).item();
      if (!std::isfinite(out))
        throw NumericError("finite_difference_check: non-finite evaluation");
      return out;
    };
    double central = (eval(base[i] + step) - eval(base[i] - step)) / (2.0 * step);
    double denom = std::max({std::fabs(analytic[i]), std::fabs(central), 1e-12});
    worst = std::max(worst, std::fabs(analytic[i] - central) / denom);
  }
  return worst;
}

}  // namespace disp
