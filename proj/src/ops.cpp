#include "metafas/ops.hpp"

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

namespace metafas {

Tensor make_op_result(Shape shape, std::vector<double> values, const char* op,
                      std::vector<Tensor> inputs, detail::BackwardFn backward);

namespace {

using Inputs = std::vector<Tensor>;

void check_defined(const char* op, const Tensor& t) {
  if (!t.defined()) throw ValueError(std::string(op) + ": undefined tensor operand");
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     detail::shape_str(a.shape()) + " vs " +
                     detail::shape_str(b.shape()));
  }
}

// Row-major C(m,n) += A(m,k) * B(k,n). C must be pre-zeroed.
void gemm(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Row-major C(k,n) += A(m,k)^T * B(m,n). C must be pre-zeroed.
void gemm_at(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    const double* brow = b + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class F>
Tensor elementwise2(const char* op, const Tensor& a, const Tensor& b, F f,
                    detail::BackwardFn backward) {
  check_defined(op, a);
  check_defined(op, b);
  check_same_shape(op, a, b);
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
  return make_op_result(a.shape(), std::move(out), op, {a, b}, std::move(backward));
}

template <class F>
Tensor elementwise1(const char* op, const Tensor& a, F f, detail::BackwardFn backward) {
  check_defined(op, a);
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return make_op_result(a.shape(), std::move(out), op, {a}, std::move(backward));
}

struct Dims4 {
  int b, h, w, c;
};

Dims4 dims4(const char* op, const Tensor& t) {
  const Shape& s = t.shape();
  if (s.size() != 4) {
    throw ShapeError(std::string(op) + ": expected rank-4 (B,H,W,C) tensor, got " +
                     detail::shape_str(s));
  }
  return {s[0], s[1], s[2], s[3]};
}

using IndexBuf = std::shared_ptr<const std::vector<int64_t>>;

Tensor pool_scatter(const Tensor& g, const IndexBuf& idx, const Shape& in_shape);

// Reads out[o] = a[idx[o]]; adjoint of pool_scatter with the same index set.
Tensor pool_gather(const Tensor& a, const IndexBuf& idx, const Shape& out_shape) {
  const auto& av = a.values();
  std::vector<double> out(idx->size());
  for (size_t o = 0; o < idx->size(); ++o) out[o] = av[static_cast<size_t>((*idx)[o])];
  return make_op_result(out_shape, std::move(out), "pool_gather", {a},
                        [idx](const Inputs& in, const Tensor& g) -> std::vector<Tensor> {
                          return {pool_scatter(g, idx, in[0].shape())};
                        });
}

Tensor pool_scatter(const Tensor& g, const IndexBuf& idx, const Shape& in_shape) {
  if (static_cast<int64_t>(idx->size()) != g.size()) {
    throw ShapeError("pool_scatter: index/gradient size mismatch");
  }
  std::vector<double> out(static_cast<size_t>(detail::numel(in_shape)), 0.0);
  const auto& gv = g.values();
  for (size_t o = 0; o < idx->size(); ++o) out[static_cast<size_t>((*idx)[o])] = gv[o];
  return make_op_result(in_shape, std::move(out), "pool_scatter", {g},
                        [idx](const Inputs& in, const Tensor& g2) -> std::vector<Tensor> {
                          return {pool_gather(g2, idx, in[0].shape())};
                        });
}

Tensor avg_unpool(const Tensor& y, int window, const Shape& in_shape) {
  Dims4 d = dims4("avg_unpool", y);
  std::vector<double> out(static_cast<size_t>(detail::numel(in_shape)));
  const auto& yv = y.values();
  const double inv = 1.0 / (static_cast<double>(window) * window);
  const int oh = d.h * window, ow = d.w * window;
  for (int b = 0; b < d.b; ++b)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        const size_t src =
            ((static_cast<size_t>(b) * d.h + i / window) * d.w + j / window) * d.c;
        const size_t dst = ((static_cast<size_t>(b) * oh + i) * ow + j) * d.c;
        for (int c = 0; c < d.c; ++c) out[dst + c] = yv[src + c] * inv;
      }
  return make_op_result(in_shape, std::move(out), "avg_unpool", {y},
                        [window](const Inputs&, const Tensor& g) -> std::vector<Tensor> {
                          return {avg_pool2d(g, window)};
                        });
}

// Zero-padded patch matrix: one row per output pixel, one column per
// (kh, kw, cin) kernel tap. Kernel storage order matches, so conv is a gemm.
std::vector<double> im2col(const Tensor& x, int kh, int kw, int padding, int oh,
                           int ow) {
  Dims4 d = dims4("im2col", x);
  const auto& xv = x.values();
  const int cols = kh * kw * d.c;
  std::vector<double> buf(static_cast<size_t>(d.b) * oh * ow * cols, 0.0);
  for (int b = 0; b < d.b; ++b) {
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        double* row = buf.data() + ((static_cast<size_t>(b) * oh + i) * ow + j) * cols;
        for (int ki = 0; ki < kh; ++ki) {
          const int ih = i + ki - padding;
          if (ih < 0 || ih >= d.h) continue;
          for (int kj = 0; kj < kw; ++kj) {
            const int iw = j + kj - padding;
            if (iw < 0 || iw >= d.w) continue;
            const double* src =
                xv.data() + ((static_cast<size_t>(b) * d.h + ih) * d.w + iw) * d.c;
            double* dst = row + (ki * kw + kj) * d.c;
            for (int c = 0; c < d.c; ++c) dst[c] = src[c];
          }
        }
      }
    }
  }
  return buf;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise2("add", a, b, [](double x, double y) { return x + y; },
                      [](const Inputs& in, const Tensor& g) -> std::vector<Tensor> {
                        std::vector<Tensor> out(2);
                        if (in[0].requires_grad()) out[0] = g;
                        if (in[1].requires_grad()) out[1] = g;
                        return out;
                      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise2("sub", a, b, [](double x, double y) { return x - y; },
                      [](const Inputs& in, const Tensor& g) -> std::vector<Tensor> {
                        std::vector<Tensor> out(2);
                        if (in[0].requires_grad()) out[0] = g;
                        if (in[1].requires_grad()) out[1] = neg(g);
                        return out;
                      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise2("mul", a, b, [](double x, double y) { return x * y; },
                      [](const Inputs& in, const Tensor& g) -> std::vector<Tensor> {
                        std::vector<Tensor> out(2);
                        if (in[0].requires_grad()) out[0] = mul(g, in[1]);
                        if (in[1].requires_grad()) out[1] = mul(g, in[0]);
                        return out;
                      });
}

Tensor neg(const Tensor& a) {
  return elementwise1("neg", a, [](double x) { return -x; },
                      [](const Inputs&, const Tensor& g) -> std::vector<Tensor> {
                        return {neg(g)};
                      });
}

Tensor relu(const Tensor& a) {
  check_defined("relu", a);
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  // The active-element mask is a constant of the linearization: second
  // derivatives through relu are zero almost everywhere.
  return make_op_result(a.shape(), std::move(out), "relu", {a},
                        [](const Inputs& in, const Tensor& g) -> std::vector<Tensor> {
                          const auto& xv = in[0].values();
                          std::vector<double> mask(xv.size());
                          for (size_t i = 0; i < xv.size(); ++i)
                            mask[i] = xv[i] > 0.0 ? 1.0 : 0.0;
                          return {mul(g, Tensor::from_values(in[0].shape(), std::move(mask)))};
                        });
}

Tensor exp(const Tensor& a) {
  return elementwise1("exp", a, [](double x) { return std::exp(x); },
                      [](const Inputs& in, const Tensor& g) -> std::vector<Tensor> {
                        return {mul(g, exp(in[0]))};
                      });
}

Tensor log(const Tensor& a) {
  return elementwise1("log", a, [](double x) { return std::log(x); },
                      [](const Inputs& in, const Tensor& g) -> std::vector<Tensor> {
                        return {mul(g, reciprocal(in[0]))};
                      });
}

Tensor reciprocal(const Tensor& a) {
  return elementwise1("reciprocal", a, [](double x) { return 1.0 / x; },
                      [](const Inputs& in, const Tensor& g) -> std::vector<Tensor> {
                        return {neg(mul(g, square(reciprocal(in[0]))))};
                      });
}

Tensor sigmoid(const Tensor& a) {
  return elementwise1("sigmoid", a,
                      [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                      [](const Inputs& in, const Tensor& g) -> std::vector<Tensor> {
                        Tensor s = sigmoid(in[0]);
                        Tensor one = Tensor::ones(in[0].shape());
                        return {mul(g, mul(s, sub(one, s)))};
                      });
}

Tensor square(const Tensor& a) {
  return elementwise1("square", a, [](double x) { return x * x; },
                      [](const Inputs& in, const Tensor& g) -> std::vector<Tensor> {
                        return {mul(g, scale(in[0], 2.0))};
                      });
}

Tensor scale(const Tensor& a, double c) {
  return elementwise1("scale", a, [c](double x) { return c * x; },
                      [c](const Inputs&, const Tensor& g) -> std::vector<Tensor> {
                        return {scale(g, c)};
                      });
}

Tensor scalar_mul(const Tensor& s, const Tensor& x) {
  check_defined("scalar_mul", s);
  check_defined("scalar_mul", x);
  if (!s.shape().empty()) {
    throw ShapeError("scalar_mul: multiplier must be rank-0, got " +
                     detail::shape_str(s.shape()));
  }
  const double sv = s.item();
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = sv * xv[i];
  return make_op_result(x.shape(), std::move(out), "scalar_mul", {s, x},
                        [](const Inputs& in, const Tensor& g) -> std::vector<Tensor> {
                          std::vector<Tensor> out(2);
                          if (in[0].requires_grad()) out[0] = sum(mul(g, in[1]));
                          if (in[1].requires_grad()) out[1] = scalar_mul(in[0], g);
                          return out;
                        });
}

Tensor sum(const Tensor& a) {
  check_defined("sum", a);
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return make_op_result({}, {acc}, "sum", {a},
                        [](const Inputs& in, const Tensor& g) -> std::vector<Tensor> {
                          return {scalar_mul(g, Tensor::ones(in[0].shape()))};
                        });
}

Tensor mean(const Tensor& a) {
  check_defined("mean", a);
  const auto& av = a.values();
  if (av.empty()) throw ValueError("mean: empty tensor");
  double acc = 0.0;
  for (double v : av) acc += v;
  const double n = static_cast<double>(av.size());
  return make_op_result({}, {acc / n}, "mean", {a},
                        [n](const Inputs& in, const Tensor& g) -> std::vector<Tensor> {
                          return {scalar_mul(g, Tensor::full(in[0].shape(), 1.0 / n))};
                        });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined("matmul", a);
  check_defined("matmul", b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw ShapeError("matmul: incompatible shapes " + detail::shape_str(sa) + " x " +
                     detail::shape_str(sb));
  }
  const int m = sa[0], k = sa[1], n = sb[1];
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  gemm(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_op_result({m, n}, std::move(out), "matmul", {a, b},
                        [](const Inputs& in, const Tensor& g) -> std::vector<Tensor> {
                          std::vector<Tensor> out(2);
                          if (in[0].requires_grad()) out[0] = matmul(g, transpose(in[1]));
                          if (in[1].requires_grad()) out[1] = matmul(transpose(in[0]), g);
                          return out;
                        });
}

Tensor transpose(const Tensor& a) {
  check_defined("transpose", a);
  const Shape& s = a.shape();
  if (s.size() != 2) {
    throw ShapeError("transpose: expected rank-2, got " + detail::shape_str(s));
  }
  const int m = s[0], n = s[1];
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(j) * m + i] = av[static_cast<size_t>(i) * n + j];
  return make_op_result({n, m}, std::move(out), "transpose", {a},
                        [](const Inputs&, const Tensor& g) -> std::vector<Tensor> {
                          return {transpose(g)};
                        });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  check_defined("reshape", a);
  if (detail::numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + detail::shape_str(a.shape()) + " as " +
                     detail::shape_str(shape));
  }
  return make_op_result(shape, a.values(), "reshape", {a},
                        [](const Inputs& in, const Tensor& g) -> std::vector<Tensor> {
                          return {reshape(g, in[0].shape())};
                        });
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, int padding) {
  check_defined("conv2d", x);
  check_defined("conv2d", kernel);
  Dims4 xd = dims4("conv2d", x);
  const Shape& ks = kernel.shape();
  if (ks.size() != 4) {
    throw ShapeError("conv2d: kernel must be (KH,KW,Cin,Cout), got " +
                     detail::shape_str(ks));
  }
  const int kh = ks[0], kw = ks[1], cin = ks[2], cout = ks[3];
  if (cin != xd.c) {
    throw ShapeError("conv2d: input has " + std::to_string(xd.c) +
                     " channels, kernel expects " + std::to_string(cin));
  }
  if (padding < 0 || padding > kh - 1 || padding > kw - 1) {
    throw ShapeError("conv2d: padding " + std::to_string(padding) +
                     " out of range for kernel " + detail::shape_str(ks));
  }
  const int oh = xd.h + 2 * padding - kh + 1;
  const int ow = xd.w + 2 * padding - kw + 1;
  if (oh < 1 || ow < 1) {
    throw ShapeError("conv2d: kernel " + detail::shape_str(ks) + " too large for input " +
                     detail::shape_str(x.shape()));
  }
  std::vector<double> cols = im2col(x, kh, kw, padding, oh, ow);
  const int rows = xd.b * oh * ow;
  const int width = kh * kw * cin;
  std::vector<double> out(static_cast<size_t>(rows) * cout, 0.0);
  gemm(cols.data(), kernel.values().data(), out.data(), rows, width, cout);
  return make_op_result(
      {xd.b, oh, ow, cout}, std::move(out), "conv2d", {x, kernel},
      [padding, kh, kw](const Inputs& in, const Tensor& g) -> std::vector<Tensor> {
        std::vector<Tensor> out(2);
        if (in[0].requires_grad())
          out[0] = conv2d(g, kernel_flip_transpose(in[1]), kh - 1 - padding);
        if (in[1].requires_grad())
          out[1] = conv2d_kernel_grad(in[0], g, padding, kh, kw);
        return out;
      });
}

Tensor conv2d_kernel_grad(const Tensor& x, const Tensor& out_grad, int padding,
                          int kh, int kw) {
  check_defined("conv2d_kernel_grad", x);
  check_defined("conv2d_kernel_grad", out_grad);
  Dims4 xd = dims4("conv2d_kernel_grad", x);
  Dims4 gd = dims4("conv2d_kernel_grad", out_grad);
  if (gd.b != xd.b || gd.h != xd.h + 2 * padding - kh + 1 ||
      gd.w != xd.w + 2 * padding - kw + 1) {
    throw ShapeError("conv2d_kernel_grad: output gradient " +
                     detail::shape_str(out_grad.shape()) + " inconsistent with input " +
                     detail::shape_str(x.shape()));
  }
  std::vector<double> cols = im2col(x, kh, kw, padding, gd.h, gd.w);
  const int rows = xd.b * gd.h * gd.w;
  const int width = kh * kw * xd.c;
  std::vector<double> out(static_cast<size_t>(width) * gd.c, 0.0);
  gemm_at(cols.data(), out_grad.values().data(), out.data(), rows, width, gd.c);
  return make_op_result(
      {kh, kw, xd.c, gd.c}, std::move(out), "conv2d_kernel_grad", {x, out_grad},
      [padding, kh, kw](const Inputs& in, const Tensor& gk) -> std::vector<Tensor> {
        std::vector<Tensor> out(2);
        if (in[0].requires_grad())
          out[0] = conv2d(in[1], kernel_flip_transpose(gk), kh - 1 - padding);
        if (in[1].requires_grad()) out[1] = conv2d(in[0], gk, padding);
        return out;
      });
}

Tensor kernel_flip_transpose(const Tensor& kernel) {
  check_defined("kernel_flip_transpose", kernel);
  const Shape& ks = kernel.shape();
  if (ks.size() != 4) {
    throw ShapeError("kernel_flip_transpose: expected rank-4 kernel, got " +
                     detail::shape_str(ks));
  }
  const int kh = ks[0], kw = ks[1], cin = ks[2], cout = ks[3];
  const auto& kv = kernel.values();
  std::vector<double> out(kv.size());
  for (int i = 0; i < kh; ++i)
    for (int j = 0; j < kw; ++j)
      for (int ci = 0; ci < cin; ++ci)
        for (int co = 0; co < cout; ++co) {
          const size_t src = ((static_cast<size_t>(i) * kw + j) * cin + ci) * cout + co;
          const size_t dst =
              ((static_cast<size_t>(kh - 1 - i) * kw + (kw - 1 - j)) * cout + co) * cin + ci;
          out[dst] = kv[src];
        }
  return make_op_result({kh, kw, cout, cin}, std::move(out), "kernel_flip_transpose",
                        {kernel},
                        [](const Inputs&, const Tensor& g) -> std::vector<Tensor> {
                          return {kernel_flip_transpose(g)};
                        });
}

Tensor max_pool2d(const Tensor& x, int window) {
  check_defined("max_pool2d", x);
  Dims4 d = dims4("max_pool2d", x);
  if (window < 1 || d.h % window != 0 || d.w % window != 0) {
    throw ShapeError("max_pool2d: window " + std::to_string(window) +
                     " does not tile input " + detail::shape_str(x.shape()));
  }
  const int oh = d.h / window, ow = d.w / window;
  const auto& xv = x.values();
  std::vector<double> out(static_cast<size_t>(d.b) * oh * ow * d.c);
  auto idx = std::make_shared<std::vector<int64_t>>(out.size());
  for (int b = 0; b < d.b; ++b)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j)
        for (int c = 0; c < d.c; ++c) {
          double best = 0.0;
          int64_t best_at = -1;
          for (int di = 0; di < window; ++di)
            for (int dj = 0; dj < window; ++dj) {
              const size_t off =
                  ((static_cast<size_t>(b) * d.h + i * window + di) * d.w + j * window +
                   dj) *
                      d.c +
                  c;
              if (best_at < 0 || xv[off] > best) {
                best = xv[off];
                best_at = static_cast<int64_t>(off);
              }
            }
          const size_t o = ((static_cast<size_t>(b) * oh + i) * ow + j) * d.c + c;
          out[o] = best;
          (*idx)[o] = best_at;
        }
  IndexBuf cidx = idx;
  return make_op_result({d.b, oh, ow, d.c}, std::move(out), "max_pool2d", {x},
                        [cidx](const Inputs& in, const Tensor& g) -> std::vector<Tensor> {
                          return {pool_scatter(g, cidx, in[0].shape())};
                        });
}

Tensor avg_pool2d(const Tensor& x, int window) {
  check_defined("avg_pool2d", x);
  Dims4 d = dims4("avg_pool2d", x);
  if (window < 1 || d.h % window != 0 || d.w % window != 0) {
    throw ShapeError("avg_pool2d: window " + std::to_string(window) +
                     " does not tile input " + detail::shape_str(x.shape()));
  }
  const int oh = d.h / window, ow = d.w / window;
  const auto& xv = x.values();
  const double inv = 1.0 / (static_cast<double>(window) * window);
  std::vector<double> out(static_cast<size_t>(d.b) * oh * ow * d.c, 0.0);
  for (int b = 0; b < d.b; ++b)
    for (int i = 0; i < d.h; ++i)
      for (int j = 0; j < d.w; ++j) {
        const size_t src = ((static_cast<size_t>(b) * d.h + i) * d.w + j) * d.c;
        const size_t dst =
            ((static_cast<size_t>(b) * oh + i / window) * ow + j / window) * d.c;
        for (int c = 0; c < d.c; ++c) out[dst + c] += xv[src + c] * inv;
      }
  return make_op_result({d.b, oh, ow, d.c}, std::move(out), "avg_pool2d", {x},
                        [window](const Inputs& in, const Tensor& g) -> std::vector<Tensor> {
                          return {avg_unpool(g, window, in[0].shape())};
                        });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ValueError("concat: no operands");
  for (const auto& p : parts) check_defined("concat", p);
  const Shape& first = parts[0].shape();
  const int rank = static_cast<int>(first.size());
  if (axis < 0 || axis >= rank) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                     detail::shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (static_cast<int>(s.size()) != rank) {
      throw ShapeError("concat: rank mismatch " + detail::shape_str(first) + " vs " +
                       detail::shape_str(s));
    }
    for (int d = 0; d < rank; ++d) {
      if (d != axis && s[d] != first[d]) {
        throw ShapeError("concat: dimension " + std::to_string(d) + " mismatch " +
                         detail::shape_str(first) + " vs " + detail::shape_str(s));
      }
    }
    out_shape[axis] += s[axis];
  }

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= first[d];
  for (int d = axis + 1; d < rank; ++d) inner *= first[d];

  std::vector<double> out(static_cast<size_t>(detail::numel(out_shape)));
  const int64_t out_row = static_cast<int64_t>(out_shape[axis]) * inner;
  int64_t off = 0;
  for (const auto& p : parts) {
    const auto& pv = p.values();
    const int64_t part_row = static_cast<int64_t>(p.shape()[axis]) * inner;
    for (int64_t o = 0; o < outer; ++o) {
      std::copy(pv.begin() + o * part_row, pv.begin() + (o + 1) * part_row,
                out.begin() + o * out_row + off);
    }
    off += part_row;
  }

  return make_op_result(out_shape, std::move(out), "concat", parts,
                        [axis](const Inputs& in, const Tensor& g) -> std::vector<Tensor> {
                          std::vector<Tensor> out(in.size());
                          int start = 0;
                          for (size_t i = 0; i < in.size(); ++i) {
                            const int len = in[i].shape()[axis];
                            if (in[i].requires_grad()) out[i] = slice(g, axis, start, len);
                            start += len;
                          }
                          return out;
                        });
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
  check_defined("slice", a);
  const Shape& s = a.shape();
  const int rank = static_cast<int>(s.size());
  if (axis < 0 || axis >= rank) {
    throw ShapeError("slice: axis " + std::to_string(axis) + " out of range for " +
                     detail::shape_str(s));
  }
  if (start < 0 || len < 1 || start + len > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") outside dimension " +
                     std::to_string(s[axis]));
  }
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s[d];
  for (int d = axis + 1; d < rank; ++d) inner *= s[d];

  Shape out_shape = s;
  out_shape[axis] = len;
  std::vector<double> out(static_cast<size_t>(detail::numel(out_shape)));
  const auto& av = a.values();
  const int64_t in_row = static_cast<int64_t>(s[axis]) * inner;
  const int64_t out_row = static_cast<int64_t>(len) * inner;
  for (int64_t o = 0; o < outer; ++o) {
    std::copy(av.begin() + o * in_row + start * inner,
              av.begin() + o * in_row + (start + len) * inner, out.begin() + o * out_row);
  }
  return make_op_result(out_shape, std::move(out), "slice", {a},
                        [axis, start, len](const Inputs& in, const Tensor& g)
                            -> std::vector<Tensor> {
                          const int after = in[0].shape()[axis] - start - len;
                          return {pad_axis(g, axis, start, after)};
                        });
}

Tensor pad_axis(const Tensor& a, int axis, int before, int after) {
  check_defined("pad_axis", a);
  const Shape& s = a.shape();
  const int rank = static_cast<int>(s.size());
  if (axis < 0 || axis >= rank) {
    throw ShapeError("pad_axis: axis " + std::to_string(axis) + " out of range for " +
                     detail::shape_str(s));
  }
  if (before < 0 || after < 0) throw ShapeError("pad_axis: negative padding");
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s[d];
  for (int d = axis + 1; d < rank; ++d) inner *= s[d];

  Shape out_shape = s;
  out_shape[axis] += before + after;
  std::vector<double> out(static_cast<size_t>(detail::numel(out_shape)), 0.0);
  const auto& av = a.values();
  const int64_t in_row = static_cast<int64_t>(s[axis]) * inner;
  const int64_t out_row = static_cast<int64_t>(out_shape[axis]) * inner;
  for (int64_t o = 0; o < outer; ++o) {
    std::copy(av.begin() + o * in_row, av.begin() + (o + 1) * in_row,
              out.begin() + o * out_row + before * inner);
  }
  return make_op_result(out_shape, std::move(out), "pad_axis", {a},
                        [axis, before](const Inputs& in, const Tensor& g)
                            -> std::vector<Tensor> {
                          return {slice(g, axis, before, in[0].shape()[axis])};
                        });
}

Tensor broadcast_to_last_axis(const Tensor& v, const Shape& shape) {
  check_defined("broadcast_to_last_axis", v);
  const Shape& vs = v.shape();
  if (vs.size() != 1 || shape.empty() || shape.back() != vs[0]) {
    throw ShapeError("broadcast_to_last_axis: cannot broadcast " + detail::shape_str(vs) +
                     " over " + detail::shape_str(shape));
  }
  const int c = vs[0];
  const int64_t rows = detail::numel(shape) / c;
  const auto& vv = v.values();
  std::vector<double> out(static_cast<size_t>(rows) * c);
  for (int64_t r = 0; r < rows; ++r) {
    std::copy(vv.begin(), vv.end(), out.begin() + r * c);
  }
  return make_op_result(shape, std::move(out), "broadcast_to_last_axis", {v},
                        [](const Inputs&, const Tensor& g) -> std::vector<Tensor> {
                          return {sum_to_last_axis(g)};
                        });
}

Tensor sum_to_last_axis(const Tensor& a) {
  check_defined("sum_to_last_axis", a);
  const Shape& s = a.shape();
  if (s.empty()) throw ShapeError("sum_to_last_axis: rank-0 input");
  const int c = s.back();
  const int64_t rows = detail::numel(s) / c;
  const auto& av = a.values();
  std::vector<double> out(static_cast<size_t>(c), 0.0);
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = av.data() + r * c;
    for (int j = 0; j < c; ++j) out[j] += row[j];
  }
  return make_op_result({c}, std::move(out), "sum_to_last_axis", {a},
                        [](const Inputs& in, const Tensor& g) -> std::vector<Tensor> {
                          return {broadcast_to_last_axis(g, in[0].shape())};
                        });
}

Tensor div(const Tensor& a, const Tensor& b) { return mul(a, reciprocal(b)); }

}  // namespace metafas
