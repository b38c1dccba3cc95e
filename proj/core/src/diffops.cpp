// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "demoseg/diffops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace demoseg {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
MatMap<T> mat(T* p, std::int64_t rows, std::int64_t cols, std::int64_t stride) {
  return MatMap<T>(p, rows, cols, Eigen::OuterStride<>(stride));
}
template <typename T>
ConstMatMap<T> cmat(const T* p, std::int64_t rows, std::int64_t cols, std::int64_t stride) {
  return ConstMatMap<T>(p, rows, cols, Eigen::OuterStride<>(stride));
}

// Fixed left-to-right order (Eigen's map reductions vary with alignment).
template <typename T>
T serial_sum(const T* p, std::int64_t n) {
  T acc{0};
  for (std::int64_t i = 0; i < n; ++i) acc += p[i];
  return acc;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <typename T>
void accumulate(Node<T>& parent, const Tensor<T>& g) {
  auto& dst = parent.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

// Geometry of a padded 3D convolution on one output-plane range.
struct ConvGeom {
  std::int64_t cin, d, h, w;     // input
  std::int64_t k, stride, pad;
  std::int64_t od, oh, ow;       // output
  std::int64_t patch() const { return cin * k * k * k; }
};

// Column buffer rows = (ci, kd, kh, kw), cols = output voxels of planes [d0, d1).
template <typename T>
void im2col(const T* x, const ConvGeom& g, std::int64_t d0, std::int64_t d1, T* col) {
  const std::int64_t ncols = (d1 - d0) * g.oh * g.ow;
  std::int64_t row = 0;
  for (std::int64_t ci = 0; ci < g.cin; ++ci) {
    const T* xc = x + ci * g.d * g.h * g.w;
    for (std::int64_t kd = 0; kd < g.k; ++kd)
      for (std::int64_t kh = 0; kh < g.k; ++kh)
        for (std::int64_t kw = 0; kw < g.k; ++kw, ++row) {
          T* dst = col + row * ncols;
          for (std::int64_t od = d0; od < d1; ++od) {
            const std::int64_t id = od * g.stride + kd - g.pad;
            for (std::int64_t oh = 0; oh < g.oh; ++oh) {
              const std::int64_t ih = oh * g.stride + kh - g.pad;
              T* out = dst + ((od - d0) * g.oh + oh) * g.ow;
              if (id < 0 || id >= g.d || ih < 0 || ih >= g.h) {
                std::fill(out, out + g.ow, T{0});
                continue;
              }
              const T* src = xc + (id * g.h + ih) * g.w;
              if (g.stride == 1) {
                // Valid columns satisfy 0 <= ow + kw - pad < w.
                const std::int64_t lo = std::max<std::int64_t>(0, g.pad - kw);
                const std::int64_t hi = std::min<std::int64_t>(g.ow, g.w + g.pad - kw);
                std::fill(out, out + lo, T{0});
                if (hi > lo) std::copy(src + lo + kw - g.pad, src + hi + kw - g.pad, out + lo);
                std::fill(out + std::max(lo, hi), out + g.ow, T{0});
              } else {
                for (std::int64_t ow = 0; ow < g.ow; ++ow) {
                  const std::int64_t iw = ow * g.stride + kw - g.pad;
                  out[ow] = (iw >= 0 && iw < g.w) ? src[iw] : T{0};
                }
              }
            }
          }
        }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeom& g, std::int64_t d0, std::int64_t d1, T* dx) {
  const std::int64_t ncols = (d1 - d0) * g.oh * g.ow;
  std::int64_t row = 0;
  for (std::int64_t ci = 0; ci < g.cin; ++ci) {
    T* xc = dx + ci * g.d * g.h * g.w;
    for (std::int64_t kd = 0; kd < g.k; ++kd)
      for (std::int64_t kh = 0; kh < g.k; ++kh)
        for (std::int64_t kw = 0; kw < g.k; ++kw, ++row) {
          const T* src = col + row * ncols;
          for (std::int64_t od = d0; od < d1; ++od) {
            const std::int64_t id = od * g.stride + kd - g.pad;
            if (id < 0 || id >= g.d) continue;
            for (std::int64_t oh = 0; oh < g.oh; ++oh) {
              const std::int64_t ih = oh * g.stride + kh - g.pad;
              if (ih < 0 || ih >= g.h) continue;
              const T* in = src + ((od - d0) * g.oh + oh) * g.ow;
              T* dst = xc + (id * g.h + ih) * g.w;
              for (std::int64_t ow = 0; ow < g.ow; ++ow) {
                const std::int64_t iw = ow * g.stride + kw - g.pad;
                if (iw >= 0 && iw < g.w) dst[iw] += in[ow];
              }
            }
          }
        }
  }
}

// Output planes per im2col chunk, bounding the column buffer to ~1 MB (cache resident).
std::int64_t planes_per_chunk(const ConvGeom& g, std::size_t elem) {
  const std::int64_t budget = (std::int64_t{1} << 20) / static_cast<std::int64_t>(elem);
  const std::int64_t per_plane = g.patch() * g.oh * g.ow;
  return std::clamp<std::int64_t>(budget / std::max<std::int64_t>(per_plane, 1), 1, g.od);
}

// y[Cout, od*oh*ow] = W[Cout, patch] * im2col(x), chunked over output planes.
template <typename T>
void conv_forward_into(const T* x, const ConvGeom& g, const T* w, std::int64_t cout, T* y) {
  const std::int64_t plane = g.oh * g.ow;
  const std::int64_t nout = g.od * plane;
  const std::int64_t kdim = g.patch();
  auto W = cmat(w, cout, kdim, kdim);
  if (g.k == 1 && g.stride == 1) {
    mat(y, cout, nout, nout).noalias() = W * cmat(x, g.cin, nout, nout);
    return;
  }
  const std::int64_t step = planes_per_chunk(g, sizeof(T));
  std::vector<T> col(static_cast<std::size_t>(kdim * step * plane));
  for (std::int64_t d0 = 0; d0 < g.od; d0 += step) {
    const std::int64_t d1 = std::min(g.od, d0 + step);
    const std::int64_t n = (d1 - d0) * plane;
    im2col(x, g, d0, d1, col.data());
    mat(y + d0 * plane, cout, n, nout).noalias() = W * cmat(col.data(), kdim, n, n);
  }
}

// outer x axis x inner decomposition for axis-wise ops.
struct AxisSplit {
  std::int64_t outer = 1, len = 1, inner = 1;
};
AxisSplit split_axis(const Shape& s, std::size_t axis) {
  require(axis < s.size(), "axis " + std::to_string(axis) + " out of range for " + to_string(s));
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

}  // namespace

template <typename T>
Var<T> Var<T>::constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = "constant";
  return Var<T>(std::move(n));
}

template <typename T>
Var<T> Var<T>::leaf(Tensor<T> value, bool requires_grad) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->op = "leaf";
  return Var<T>(std::move(n));
}

template <typename T>
Var<T> make_op(std::string name, Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = std::move(name);
  for (const auto& p : parents) {
    if (p.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.shared());
    n->backward = std::move(backward_fn);
  }
  return Var<T>(std::move(n));
}

template <typename T>
void backward(const Var<T>& root) {
  if (!root.defined() || root.value().size() != 1) {
    throw ShapeError("backward() needs a single-element root");
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
  }
}

namespace ops {

template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  require(xs.size() == 4, "conv3d input must be [C,D,H,W], got " + to_string(xs));
  require(ws.size() == 5 && ws[2] == ws[3] && ws[3] == ws[4] && ws[2] % 2 == 1,
          "conv3d weight must be [Cout,Cin,k,k,k] with odd k, got " + to_string(ws));
  require(ws[1] == xs[0], "conv3d channel mismatch: input " + to_string(xs) + " weight " + to_string(ws));
  require(stride >= 1, "conv3d stride must be positive");
  const std::int64_t cout = ws[0];
  if (b.defined()) require(b.shape() == Shape{cout}, "conv3d bias must be [Cout]");

  ConvGeom g;
  g.cin = xs[0];
  g.d = xs[1];
  g.h = xs[2];
  g.w = xs[3];
  g.k = ws[2];
  g.stride = stride;
  g.pad = g.k / 2;
  g.od = (g.d + 2 * g.pad - g.k) / stride + 1;
  g.oh = (g.h + 2 * g.pad - g.k) / stride + 1;
  g.ow = (g.w + 2 * g.pad - g.k) / stride + 1;
  require(g.od > 0 && g.oh > 0 && g.ow > 0, "conv3d output would be empty");

  const std::int64_t nout = g.od * g.oh * g.ow;
  const std::int64_t plane = g.oh * g.ow;
  const std::int64_t kdim = g.patch();
  const bool pointwise = g.k == 1 && stride == 1;

  Tensor<T> y({cout, g.od, g.oh, g.ow});
  conv_forward_into(x.value().data(), g, w.value().data(), cout, y.data());
  if (b.defined()) {
    for (std::int64_t c = 0; c < cout; ++c) {
      const T bc = b.value()[c];
      for (auto& v : y.channel(c)) v += bc;
    }
  }

  return make_op<T>("conv3d", std::move(y), {x, w, b}, [g, cout, nout, plane, kdim, pointwise](Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& wn = *self.parents[1];
    Node<T>* bn = self.parents[2].get();
    const T* dy = self.grad.data();
    auto dY = cmat(dy, cout, nout, nout);

    if (bn && bn->requires_grad) {
      auto& db = bn->grad_buffer();
      for (std::int64_t c = 0; c < cout; ++c) db[c] += serial_sum(dy + c * nout, nout);
    }
    const T* xd = xn.value.data();
    auto W = cmat(wn.value.data(), cout, kdim, kdim);
    if (pointwise) {
      if (wn.requires_grad) {
        mat(wn.grad_buffer().data(), cout, kdim, kdim).noalias() += dY * cmat(xd, g.cin, nout, nout).transpose();
      }
      if (xn.requires_grad) {
        mat(xn.grad_buffer().data(), g.cin, nout, nout).noalias() += W.transpose() * dY;
      }
      return;
    }
    if (xn.requires_grad && g.stride == 1) {
      // Stride-1 "same" convolution: dx is the convolution of dy with the
      // spatially flipped, channel-transposed kernel.
      const std::int64_t taps = g.k * g.k * g.k;
      std::vector<T> wflip(static_cast<std::size_t>(g.cin * cout * taps));
      const T* wd = wn.value.data();
      for (std::int64_t co = 0; co < cout; ++co)
        for (std::int64_t ci = 0; ci < g.cin; ++ci)
          for (std::int64_t t = 0; t < taps; ++t)
            wflip[(ci * cout + co) * taps + (taps - 1 - t)] = wd[(co * g.cin + ci) * taps + t];
      ConvGeom gb{cout, g.od, g.oh, g.ow, g.k, 1, g.pad, g.d, g.h, g.w};
      std::vector<T> dx(static_cast<std::size_t>(g.cin * g.d * g.h * g.w));
      conv_forward_into(dy, gb, wflip.data(), g.cin, dx.data());
      auto& gx = xn.grad_buffer();
      for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += dx[i];
    }
    const bool strided_dx = xn.requires_grad && g.stride != 1;
    if (!wn.requires_grad && !strided_dx) return;
    const std::int64_t step = planes_per_chunk(g, sizeof(T));
    std::vector<T> col(static_cast<std::size_t>(kdim * step * plane));
    std::vector<T> dcol(strided_dx ? col.size() : 0);
    T* dx = strided_dx ? xn.grad_buffer().data() : nullptr;
    for (std::int64_t d0 = 0; d0 < g.od; d0 += step) {
      const std::int64_t d1 = std::min(g.od, d0 + step);
      const std::int64_t n = (d1 - d0) * plane;
      auto dYc = cmat(dy + d0 * plane, cout, n, nout);
      if (wn.requires_grad) {
        im2col(xd, g, d0, d1, col.data());
        mat(wn.grad_buffer().data(), cout, kdim, kdim).noalias() +=
            dYc * cmat(col.data(), kdim, n, n).transpose();
      }
      if (dx) {
        mat(dcol.data(), kdim, n, n).noalias() = W.transpose() * dYc;
        col2im(dcol.data(), g, d0, d1, dx);
      }
    }
  });
}

template <typename T>
Var<T> conv_transpose3d(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  require(xs.size() == 4, "conv_transpose3d input must be [C,D,H,W], got " + to_string(xs));
  require(ws.size() == 5 && ws[0] == xs[0] && ws[2] == 2 && ws[3] == 2 && ws[4] == 2,
          "conv_transpose3d weight must be [Cin,Cout,2,2,2], got " + to_string(ws));
  const std::int64_t cin = xs[0], cout = ws[1];
  const std::int64_t d = xs[1], h = xs[2], wd = xs[3];
  const std::int64_t n = d * h * wd;
  if (b.defined()) require(b.shape() == Shape{cout}, "conv_transpose3d bias must be [Cout]");

  // Z[(co,a,b,c), v] = sum_ci W[ci, (co,a,b,c)] X[ci, v]
  const std::int64_t zrows = cout * 8;
  std::vector<T> z(static_cast<std::size_t>(zrows * n));
  mat(z.data(), zrows, n, n).noalias() =
      cmat(w.value().data(), cin, zrows, zrows).transpose() * cmat(x.value().data(), cin, n, n);

  Tensor<T> y({cout, 2 * d, 2 * h, 2 * wd});
  auto scatter_index = [=](std::int64_t co, std::int64_t k, std::int64_t v) {
    const std::int64_t a = k >> 2, bb = (k >> 1) & 1, c = k & 1;
    const std::int64_t vd = v / (h * wd), vh = (v / wd) % h, vw = v % wd;
    return ((co * 2 * d + 2 * vd + a) * 2 * h + 2 * vh + bb) * 2 * wd + 2 * vw + c;
  };
  for (std::int64_t co = 0; co < cout; ++co) {
    const T bias = b.defined() ? b.value()[co] : T{0};
    for (std::int64_t k = 0; k < 8; ++k) {
      const T* zr = z.data() + (co * 8 + k) * n;
      for (std::int64_t v = 0; v < n; ++v) y[scatter_index(co, k, v)] = zr[v] + bias;
    }
  }

  return make_op<T>("conv_transpose3d", std::move(y), {x, w, b},
                    [=](Node<T>& self) {
                      auto& xn = *self.parents[0];
                      auto& wn = *self.parents[1];
                      Node<T>* bn = self.parents[2].get();
                      std::vector<T> dz(static_cast<std::size_t>(zrows * n));
                      for (std::int64_t co = 0; co < cout; ++co)
                        for (std::int64_t k = 0; k < 8; ++k) {
                          T* zr = dz.data() + (co * 8 + k) * n;
                          for (std::int64_t v = 0; v < n; ++v) zr[v] = self.grad[scatter_index(co, k, v)];
                        }
                      auto dZ = cmat(dz.data(), zrows, n, n);
                      if (bn && bn->requires_grad) {
                        auto& db = bn->grad_buffer();
                        for (std::int64_t co = 0; co < cout; ++co) db[co] += serial_sum(dz.data() + co * 8 * n, 8 * n);
                      }
                      if (wn.requires_grad) {
                        mat(wn.grad_buffer().data(), cin, zrows, zrows).noalias() +=
                            cmat(xn.value.data(), cin, n, n) * dZ.transpose();
                      }
                      if (xn.requires_grad) {
                        mat(xn.grad_buffer().data(), cin, n, n).noalias() +=
                            cmat(wn.value.data(), cin, zrows, zrows) * dZ;
                      }
                    });
}

template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps) {
  const auto& xs = x.shape();
  require(xs.size() >= 2, "instance_norm needs [C, spatial...], got " + to_string(xs));
  const std::int64_t c = xs[0];
  require(gamma.shape() == Shape{c} && beta.shape() == Shape{c}, "instance_norm affine params must be [C]");
  const std::int64_t n = x.value().inner();

  Tensor<T> xhat(xs);
  std::vector<T> inv_std(static_cast<std::size_t>(c));
  Tensor<T> y(xs);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    auto in = x.value().channel(ch);
    double mu = 0.0;
    for (T v : in) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (T v : in) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[ch] = static_cast<T>(is);
    auto xh = xhat.channel(ch);
    auto out = y.channel(ch);
    const T g = gamma.value()[ch], bt = beta.value()[ch];
    for (std::int64_t i = 0; i < n; ++i) {
      xh[i] = static_cast<T>((in[i] - mu) * is);
      out[i] = g * xh[i] + bt;
    }
  }

  return make_op<T>("instance_norm", std::move(y), {x, gamma, beta},
                    [xhat = std::move(xhat), inv_std = std::move(inv_std), c, n](Node<T>& self) {
                      auto& xn = *self.parents[0];
                      auto& gn = *self.parents[1];
                      auto& bn = *self.parents[2];
                      for (std::int64_t ch = 0; ch < c; ++ch) {
                        auto dy = self.grad.channel(ch);
                        auto xh = xhat.channel(ch);
                        double sdy = 0.0, sdyx = 0.0;
                        for (std::int64_t i = 0; i < n; ++i) {
                          sdy += dy[i];
                          sdyx += dy[i] * xh[i];
                        }
                        if (gn.requires_grad) gn.grad_buffer()[ch] += static_cast<T>(sdyx);
                        if (bn.requires_grad) bn.grad_buffer()[ch] += static_cast<T>(sdy);
                        if (!xn.requires_grad) continue;
                        const double g = gn.value[ch];
                        const double k = g * inv_std[ch] / static_cast<double>(n);
                        auto dx = xn.grad_buffer().channel(ch);
                        for (std::int64_t i = 0; i < n; ++i) {
                          dx[i] += static_cast<T>(k * (n * static_cast<double>(dy[i]) - sdy - xh[i] * sdyx));
                        }
                      }
                    });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, double slope) {
  Tensor<T> y(x.shape());
  const auto& xv = x.value();
  const T s = static_cast<T>(slope);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > T{0} ? xv[i] : s * xv[i];
  return make_op<T>("leaky_relu", std::move(y), {x}, [s](Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& dx = xn.grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += xn.value[i] > T{0} ? self.grad[i] : s * self.grad[i];
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = T{1} / (T{1} + std::exp(-x.value()[i]));
  return make_op<T>("sigmoid", std::move(y), {x}, [](Node<T>& self) {
    auto& dx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T s = self.value[i];
      dx[i] += self.grad[i] * s * (T{1} - s);
    }
  });
}

template <typename T>
Var<T> log(const Var<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(x.value()[i] > T{0})) throw NumericError("log of non-positive value");
    y[i] = std::log(x.value()[i]);
  }
  return make_op<T>("log", std::move(y), {x}, [](Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& dx = xn.grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i] / xn.value[i];
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const auto& xs = x.shape();
  require(xs.size() >= 2, "global_avg_pool needs [C, spatial...], got " + to_string(xs));
  const std::int64_t c = xs[0];
  const std::int64_t n = x.value().inner();
  Tensor<T> y({c});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (T v : x.value().channel(ch)) s += v;
    y[ch] = static_cast<T>(s / static_cast<double>(n));
  }
  return make_op<T>("global_avg_pool", std::move(y), {x}, [c, n](Node<T>& self) {
    auto& dx = self.parents[0]->grad_buffer();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T g = self.grad[ch] / static_cast<T>(n);
      for (auto& v : dx.channel(ch)) v += g;
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  require(x.shape().size() == 1, "linear input must be a vector, got " + to_string(x.shape()));
  require(w.shape().size() == 2 && w.shape()[1] == x.shape()[0],
          "linear weight " + to_string(w.shape()) + " does not match input " + to_string(x.shape()));
  const std::int64_t cout = w.shape()[0], cin = w.shape()[1];
  if (b.defined()) require(b.shape() == Shape{cout}, "linear bias must be [Cout]");
  Tensor<T> y({cout});
  for (std::int64_t o = 0; o < cout; ++o) {
    T s = b.defined() ? b.value()[o] : T{0};
    for (std::int64_t i = 0; i < cin; ++i) s += w.value()[o * cin + i] * x.value()[i];
    y[o] = s;
  }
  return make_op<T>("linear", std::move(y), {x, w, b}, [cout, cin](Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& wn = *self.parents[1];
    Node<T>* bn = self.parents[2].get();
    for (std::int64_t o = 0; o < cout; ++o) {
      const T g = self.grad[o];
      if (bn && bn->requires_grad) bn->grad_buffer()[o] += g;
      if (wn.requires_grad) {
        auto& dw = wn.grad_buffer();
        for (std::int64_t i = 0; i < cin; ++i) dw[o * cin + i] += g * xn.value[i];
      }
      if (xn.requires_grad) {
        auto& dx = xn.grad_buffer();
        for (std::int64_t i = 0; i < cin; ++i) dx[i] += g * wn.value[o * cin + i];
      }
    }
  });
}

template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
  const auto a = split_axis(x.shape(), axis);
  require(a.len > 0, "softmax over an empty axis");
  Tensor<T> y(x.shape());
  const T* xv = x.value().data();
  for (std::int64_t o = 0; o < a.outer; ++o)
    for (std::int64_t i = 0; i < a.inner; ++i) {
      const std::int64_t base = o * a.len * a.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::int64_t k = 0; k < a.len; ++k) mx = std::max(mx, xv[base + k * a.inner]);
      T s = 0;
      for (std::int64_t k = 0; k < a.len; ++k) {
        const T e = std::exp(xv[base + k * a.inner] - mx);
        y[base + k * a.inner] = e;
        s += e;
      }
      for (std::int64_t k = 0; k < a.len; ++k) y[base + k * a.inner] /= s;
    }
  return make_op<T>("softmax", std::move(y), {x}, [a](Node<T>& self) {
    auto& dx = self.parents[0]->grad_buffer();
    for (std::int64_t o = 0; o < a.outer; ++o)
      for (std::int64_t i = 0; i < a.inner; ++i) {
        const std::int64_t base = o * a.len * a.inner + i;
        T dot = 0;
        for (std::int64_t k = 0; k < a.len; ++k) {
          const auto j = base + k * a.inner;
          dot += self.grad[j] * self.value[j];
        }
        for (std::int64_t k = 0; k < a.len; ++k) {
          const auto j = base + k * a.inner;
          dx[j] += self.value[j] * (self.grad[j] - dot);
        }
      }
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  require(!parts.empty(), "concat of zero tensors");
  Shape out = parts.front().shape();
  require(axis < out.size(), "concat axis out of range");
  out[axis] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    require(s.size() == out.size(), "concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis) require(s[i] == out[i], "concat shape mismatch: " + to_string(s) + " vs " + to_string(out));
    }
    out[axis] += s[axis];
  }
  const auto a = split_axis(out, axis);
  Tensor<T> y(out);
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::int64_t len = p.shape()[axis];
    for (std::int64_t o = 0; o < a.outer; ++o) {
      std::copy_n(p.value().data() + o * len * a.inner, len * a.inner,
                  y.data() + (o * a.len + off) * a.inner);
    }
    off += len;
  }
  return make_op<T>("concat", std::move(y), parts, [a, axis, offsets](Node<T>& self) {
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      auto& pn = *self.parents[pi];
      if (!pn.requires_grad) continue;
      const std::int64_t len = pn.value.shape()[axis];
      auto& dx = pn.grad_buffer();
      for (std::int64_t o = 0; o < a.outer; ++o) {
        const T* src = self.grad.data() + (o * a.len + offsets[pi]) * a.inner;
        T* dst = dx.data() + o * len * a.inner;
        for (std::int64_t i = 0; i < len * a.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::int64_t begin, std::int64_t end) {
  const auto a = split_axis(x.shape(), axis);
  require(0 <= begin && begin <= end && end <= a.len,
          "slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " + to_string(x.shape()));
  Shape out = x.shape();
  out[axis] = end - begin;
  const std::int64_t len = end - begin;
  Tensor<T> y(out);
  for (std::int64_t o = 0; o < a.outer; ++o) {
    std::copy_n(x.value().data() + (o * a.len + begin) * a.inner, len * a.inner, y.data() + o * len * a.inner);
  }
  return make_op<T>("slice", std::move(y), {x}, [a, begin, len](Node<T>& self) {
    auto& dx = self.parents[0]->grad_buffer();
    for (std::int64_t o = 0; o < a.outer; ++o) {
      const T* src = self.grad.data() + o * len * a.inner;
      T* dst = dx.data() + (o * a.len + begin) * a.inner;
      for (std::int64_t i = 0; i < len * a.inner; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "add shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
  return make_op<T>("add", std::move(y), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) accumulate(*p, self.grad);
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "mul shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * b.value()[i];
  return make_op<T>("mul", std::move(y), {a, b}, [](Node<T>& self) {
    auto& an = *self.parents[0];
    auto& bn = *self.parents[1];
    if (an.requires_grad) {
      auto& da = an.grad_buffer();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += self.grad[i] * bn.value[i];
    }
    if (bn.requires_grad) {
      auto& db = bn.grad_buffer();
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += self.grad[i] * an.value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, double s) {
  Tensor<T> y(x.shape());
  const T st = static_cast<T>(s);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = st * x.value()[i];
  return make_op<T>("scale", std::move(y), {x}, [st](Node<T>& self) {
    auto& dx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += st * self.grad[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  double s = 0.0;
  for (T v : x.value().values()) s += v;
  return make_op<T>("sum", Tensor<T>({1}, static_cast<T>(s)), {x}, [](Node<T>& self) {
    auto& dx = self.parents[0]->grad_buffer();
    const T g = self.grad[0];
    for (auto& v : dx.values()) v += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  require(x.value().size() > 0, "mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

template <typename T>
Var<T> channel_gather(const Var<T>& x, const std::vector<std::int64_t>& index) {
  const auto& xs = x.shape();
  require(!xs.empty(), "channel_gather on a scalar");
  const std::int64_t c = xs[0];
  for (auto i : index) require(0 <= i && i < c, "channel_gather index out of range");
  Shape out = xs;
  out[0] = static_cast<std::int64_t>(index.size());
  Tensor<T> y(out);
  const std::int64_t n = x.value().inner();
  for (std::size_t k = 0; k < index.size(); ++k) {
    std::copy_n(x.value().data() + index[k] * n, n, y.data() + static_cast<std::int64_t>(k) * n);
  }
  return make_op<T>("channel_gather", std::move(y), {x}, [index, n](Node<T>& self) {
    auto& dx = self.parents[0]->grad_buffer();
    for (std::size_t k = 0; k < index.size(); ++k) {
      const T* src = self.grad.data() + static_cast<std::int64_t>(k) * n;
      T* dst = dx.data() + index[k] * n;
      for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> channel_scale(const Var<T>& x, const Var<T>& s) {
  const auto& xs = x.shape();
  require(!xs.empty() && s.shape() == Shape{xs[0]}, "channel_scale needs s of shape [C]");
  const std::int64_t c = xs[0];
  const std::int64_t n = x.value().inner();
  Tensor<T> y(xs);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const T sc = s.value()[ch];
    auto in = x.value().channel(ch);
    auto out = y.channel(ch);
    for (std::int64_t i = 0; i < n; ++i) out[i] = sc * in[i];
  }
  return make_op<T>("channel_scale", std::move(y), {x, s}, [c, n](Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& sn = *self.parents[1];
    for (std::int64_t ch = 0; ch < c; ++ch) {
      auto dy = self.grad.channel(ch);
      if (sn.requires_grad) {
        auto in = xn.value.channel(ch);
        T acc = 0;
        for (std::int64_t i = 0; i < n; ++i) acc += dy[i] * in[i];
        sn.grad_buffer()[ch] += acc;
      }
      if (xn.requires_grad) {
        auto dx = xn.grad_buffer().channel(ch);
        const T sc = sn.value[ch];
        for (std::int64_t i = 0; i < n; ++i) dx[i] += sc * dy[i];
      }
    }
  });
}

template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
  const Extent3 e = spatial_extent(x.shape());
  require(e.d % 2 == 0 && e.h % 2 == 0 && e.w % 2 == 0, "avg_pool2 needs even spatial dims, got " + to_string(x.shape()));
  const std::int64_t c = x.shape()[0];
  const Extent3 o{e.d / 2, e.h / 2, e.w / 2};
  Tensor<T> y({c, o.d, o.h, o.w});
  auto in_idx = [e](std::int64_t ch, std::int64_t d, std::int64_t h, std::int64_t w) {
    return ((ch * e.d + d) * e.h + h) * e.w + w;
  };
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t d = 0; d < o.d; ++d)
      for (std::int64_t h = 0; h < o.h; ++h)
        for (std::int64_t w = 0; w < o.w; ++w) {
          T s = 0;
          for (int k = 0; k < 8; ++k) s += x.value()[in_idx(ch, 2 * d + (k >> 2), 2 * h + ((k >> 1) & 1), 2 * w + (k & 1))];
          y[((ch * o.d + d) * o.h + h) * o.w + w] = s / T{8};
        }
  return make_op<T>("avg_pool2", std::move(y), {x}, [c, o, in_idx](Node<T>& self) {
    auto& dx = self.parents[0]->grad_buffer();
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t d = 0; d < o.d; ++d)
        for (std::int64_t h = 0; h < o.h; ++h)
          for (std::int64_t w = 0; w < o.w; ++w) {
            const T g = self.grad[((ch * o.d + d) * o.h + h) * o.w + w] / T{8};
            for (int k = 0; k < 8; ++k) dx[in_idx(ch, 2 * d + (k >> 2), 2 * h + ((k >> 1) & 1), 2 * w + (k & 1))] += g;
          }
  });
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  return Var<T>::constant(x.value());
}

}  // namespace ops

#define DEMOSEG_INSTANTIATE_DIFFOPS(T)                                                                      \
  template class Var<T>;                                                                                    \
  template Var<T> make_op<T>(std::string, Tensor<T>, std::vector<Var<T>>, std::function<void(Node<T>&)>); \
  template void backward<T>(const Var<T>&);                                                                 \
  template Var<T> ops::conv3d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int);                         \
  template Var<T> ops::conv_transpose3d<T>(const Var<T>&, const Var<T>&, const Var<T>&);                    \
  template Var<T> ops::instance_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, double);               \
  template Var<T> ops::leaky_relu<T>(const Var<T>&, double);                                                \
  template Var<T> ops::sigmoid<T>(const Var<T>&);                                                           \
  template Var<T> ops::log<T>(const Var<T>&);                                                               \
  template Var<T> ops::global_avg_pool<T>(const Var<T>&);                                                   \
  template Var<T> ops::linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                              \
  template Var<T> ops::softmax<T>(const Var<T>&, std::size_t);                                              \
  template Var<T> ops::concat<T>(const std::vector<Var<T>>&, std::size_t);                                  \
  template Var<T> ops::slice<T>(const Var<T>&, std::size_t, std::int64_t, std::int64_t);                    \
  template Var<T> ops::add<T>(const Var<T>&, const Var<T>&);                                                \
  template Var<T> ops::mul<T>(const Var<T>&, const Var<T>&);                                                \
  template Var<T> ops::scale<T>(const Var<T>&, double);                                                     \
  template Var<T> ops::sum<T>(const Var<T>&);                                                               \
  template Var<T> ops::mean<T>(const Var<T>&);                                                              \
  template Var<T> ops::channel_gather<T>(const Var<T>&, const std::vector<std::int64_t>&);                  \
  template Var<T> ops::channel_scale<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> ops::avg_pool2<T>(const Var<T>&);                                                         \
  template Var<T> ops::detach<T>(const Var<T>&);

DEMOSEG_INSTANTIATE_DIFFOPS(float)
DEMOSEG_INSTANTIATE_DIFFOPS(double)

}  // namespace demoseg
