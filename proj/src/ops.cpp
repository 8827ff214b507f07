#include "occattn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "occattn/error.hpp"

namespace occattn::ops {

namespace {

using detail::Node;

Node& input(Node& n, std::size_t i) { return *n.inputs[i]; }

// Index bookkeeping for same-rank broadcasting between two operands and an output.
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

Shape left_pad(const Shape& s, std::size_t rank) {
  Shape out(rank - s.size(), 1);
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

BroadcastPlan plan_broadcast(const Shape& a_in, const Shape& b_in, const char* op) {
  const std::size_t rank = std::max(a_in.size(), b_in.size());
  const Shape a = left_pad(a_in, rank);
  const Shape b = left_pad(b_in, rank);
  BroadcastPlan plan;
  plan.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (a[i] != b[i] && a[i] != 1 && b[i] != 1)
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(a_in) + " with " +
                           shape_string(b_in));
    plan.out[i] = std::max(a[i], b[i]);
  }
  const auto sa = contiguous_strides(a);
  const auto sb = contiguous_strides(b);
  plan.stride_a.resize(rank);
  plan.stride_b.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    plan.stride_a[i] = a[i] == 1 ? 0 : sa[i];
    plan.stride_b[i] = b[i] == 1 ? 0 : sb[i];
  }
  return plan;
}

// Calls fn(out_index, a_index, b_index) over the broadcast output in row-major order.
// Adjacent axes with the same broadcast pattern are merged; up to four merged runs are
// walked with plain strided loops, anything else falls back to an odometer.
template <typename Fn>
void for_each_broadcast(const BroadcastPlan& plan, Fn&& fn) {
  const std::size_t rank = plan.out.size();
  struct Run {
    std::size_t extent, sa, sb;
  };
  std::vector<Run> runs;
  for (std::size_t d = 0; d < rank; ++d) {
    if (plan.out[d] == 1) continue;
    const bool ba = plan.stride_a[d] == 0, bb = plan.stride_b[d] == 0;
    if (!runs.empty()) {
      Run& last = runs.back();
      const bool la = last.sa == 0, lb = last.sb == 0;
      if (la == ba && lb == bb) {
        // Merge: the inner axis is contiguous with the run for non-broadcast operands.
        last.extent *= plan.out[d];
        last.sa = plan.stride_a[d];
        last.sb = plan.stride_b[d];
        continue;
      }
    }
    runs.push_back({plan.out[d], plan.stride_a[d], plan.stride_b[d]});
  }
  if (runs.size() <= 4) {
    while (runs.size() < 4) runs.insert(runs.begin(), Run{1, 0, 0});
    std::size_t o = 0;
    for (std::size_t i0 = 0; i0 < runs[0].extent; ++i0)
      for (std::size_t i1 = 0; i1 < runs[1].extent; ++i1)
        for (std::size_t i2 = 0; i2 < runs[2].extent; ++i2) {
          std::size_t a = i0 * runs[0].sa + i1 * runs[1].sa + i2 * runs[2].sa;
          std::size_t b = i0 * runs[0].sb + i1 * runs[1].sb + i2 * runs[2].sb;
          const std::size_t n = runs[3].extent, sa = runs[3].sa, sb = runs[3].sb;
          for (std::size_t i3 = 0; i3 < n; ++i3, ++o, a += sa, b += sb) fn(o, a, b);
        }
    return;
  }
  const std::size_t total = shape_size(plan.out);
  const std::size_t inner = plan.out[rank - 1];
  const std::size_t ia_step = plan.stride_a[rank - 1];
  const std::size_t ib_step = plan.stride_b[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    std::size_t a = ia;
    std::size_t b = ib;
    for (std::size_t k = 0; k < inner; ++k, a += ia_step, b += ib_step) fn(o + k, a, b);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      ia += plan.stride_a[d];
      ib += plan.stride_b[d];
      if (idx[d] < plan.out[d]) break;
      ia -= plan.stride_a[d] * idx[d];
      ib -= plan.stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
}

void require_rank(const Var& x, std::size_t rank, const char* op) {
  if (x.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(x.shape()));
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  Tensor out = Tensor::uninitialized({m, n});
  out.matrix(m, n).noalias() = a.value().matrix(m, k) * b.value().matrix(k, n);
  return make_op("matmul", std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto dc = self.grad.matrix(m, n);
    Node& na = input(self, 0);
    Node& nb = input(self, 1);
    if (na.requires_grad) na.grad.matrix(m, k).noalias() += dc * nb.value.matrix(k, n).transpose();
    if (nb.requires_grad) nb.grad.matrix(k, n).noalias() += na.value.matrix(m, k).transpose() * dc;
  });
}

Var batched_matmul(const Var& a, const Var& b) {
  require_rank(a, 3, "batched_matmul");
  require_rank(b, 3, "batched_matmul");
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (b.dim(0) != batch || b.dim(1) != k)
    throw DimensionError("batched_matmul: incompatible " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  Tensor out = Tensor::uninitialized({batch, m, n});
  for (std::size_t i = 0; i < batch; ++i) {
    ConstMatrixMap am(a.value().data() + i * m * k, m, k);
    ConstMatrixMap bm(b.value().data() + i * k * n, k, n);
    MatrixMap(out.data() + i * m * n, m, n).noalias() = am * bm;
  }
  return make_op("batched_matmul", std::move(out), {a, b}, [batch, m, k, n](Node& self) {
    Node& na = input(self, 0);
    Node& nb = input(self, 1);
    for (std::size_t i = 0; i < batch; ++i) {
      ConstMatrixMap dc(self.grad.data() + i * m * n, m, n);
      if (na.requires_grad)
        MatrixMap(na.grad.data() + i * m * k, m, k).noalias() +=
            dc * ConstMatrixMap(nb.value.data() + i * k * n, k, n).transpose();
      if (nb.requires_grad)
        MatrixMap(nb.grad.data() + i * k * n, k, n).noalias() +=
            ConstMatrixMap(na.value.data() + i * m * k, m, k).transpose() * dc;
    }
  });
}

Var transpose(const Var& x) {
  if (x.rank() != 2 && x.rank() != 3)
    throw DimensionError("transpose: expected rank 2 or 3, got " + shape_string(x.shape()));
  const bool batched = x.rank() == 3;
  const std::size_t batch = batched ? x.dim(0) : 1;
  const std::size_t r = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  Tensor out = Tensor::uninitialized(shape);
  for (std::size_t i = 0; i < batch; ++i)
    MatrixMap(out.data() + i * r * c, c, r) = ConstMatrixMap(x.value().data() + i * r * c, r, c).transpose();
  return make_op("transpose", std::move(out), {x}, [batch, r, c](Node& self) {
    Node& nx = input(self, 0);
    for (std::size_t i = 0; i < batch; ++i)
      MatrixMap(nx.grad.data() + i * r * c, r, c) += ConstMatrixMap(self.grad.data() + i * r * c, c, r).transpose();
  });
}

Var fully_connected(const Var& x, const Var& weight, const Var& bias) {
  require_rank(weight, 2, "fully_connected");
  require_rank(bias, 1, "fully_connected");
  const std::size_t in = weight.dim(0), out_dim = weight.dim(1);
  if (x.rank() < 2 || x.dim(x.rank() - 1) != in || bias.dim(0) != out_dim)
    throw DimensionError("fully_connected: input " + shape_string(x.shape()) + " vs weight " +
                         shape_string(weight.shape()) + " and bias " + shape_string(bias.shape()));
  const std::size_t rows = x.value().size() / in;
  Shape shape = x.shape();
  shape.back() = out_dim;
  Tensor out = Tensor::uninitialized(shape);
  auto om = out.matrix(rows, out_dim);
  om.noalias() = x.value().matrix(rows, in) * weight.value().matrix(in, out_dim);
  om.rowwise() += bias.value().vector().transpose();
  return make_op("fully_connected", std::move(out), {x, weight, bias}, [rows, in, out_dim](Node& self) {
    const auto dy = self.grad.matrix(rows, out_dim);
    Node& nx = input(self, 0);
    Node& nw = input(self, 1);
    Node& nb = input(self, 2);
    if (nx.requires_grad) nx.grad.matrix(rows, in).noalias() += dy * nw.value.matrix(in, out_dim).transpose();
    if (nw.requires_grad) nw.grad.matrix(in, out_dim).noalias() += nx.value.matrix(rows, in).transpose() * dy;
    if (nb.requires_grad) nb.grad.vector() += dy.colwise().sum().transpose();
  });
}

Var add(const Var& a, const Var& b) {
  if (a.shape() == b.shape()) {
    Tensor out(a.shape());
    out.vector() = a.value().vector() + b.value().vector();
    return make_op("add", std::move(out), {a, b}, [](Node& self) {
      for (std::size_t i = 0; i < 2; ++i)
        if (input(self, i).requires_grad) input(self, i).grad.vector() += self.grad.vector();
    });
  }
  auto plan = plan_broadcast(a.shape(), b.shape(), "add");
  Tensor out = Tensor::uninitialized(plan.out);
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { po[o] = pa[ia] + pb[ib]; });
  return make_op("add", std::move(out), {a, b}, [plan](Node& self) {
    Node& na = input(self, 0);
    Node& nb = input(self, 1);
    const double* g = self.grad.data();
    double* ga = na.requires_grad ? na.grad.data() : nullptr;
    double* gb = nb.requires_grad ? nb.grad.data() : nullptr;
    for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      if (ga) ga[ia] += g[o];
      if (gb) gb[ib] += g[o];
    });
  });
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var mul(const Var& a, const Var& b) {
  if (a.shape() == b.shape()) {
    Tensor out(a.shape());
    out.vector() = a.value().vector().cwiseProduct(b.value().vector());
    return make_op("mul", std::move(out), {a, b}, [](Node& self) {
      Node& na = input(self, 0);
      Node& nb = input(self, 1);
      if (na.requires_grad) na.grad.vector() += self.grad.vector().cwiseProduct(nb.value.vector());
      if (nb.requires_grad) nb.grad.vector() += self.grad.vector().cwiseProduct(na.value.vector());
    });
  }
  auto plan = plan_broadcast(a.shape(), b.shape(), "mul");
  Tensor out = Tensor::uninitialized(plan.out);
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { po[o] = pa[ia] * pb[ib]; });
  return make_op("mul", std::move(out), {a, b}, [plan](Node& self) {
    Node& na = input(self, 0);
    Node& nb = input(self, 1);
    const double* g = self.grad.data();
    const double* va = na.value.data();
    const double* vb = nb.value.data();
    double* ga = na.requires_grad ? na.grad.data() : nullptr;
    double* gb = nb.requires_grad ? nb.grad.data() : nullptr;
    for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      if (ga) ga[ia] += g[o] * vb[ib];
      if (gb) gb[ib] += g[o] * va[ia];
    });
  });
}

Var scale(const Var& x, double factor) {
  Tensor out = Tensor::uninitialized(x.shape());
  out.vector() = x.value().vector() * factor;
  return make_op("scale", std::move(out), {x},
                 [factor](Node& self) { input(self, 0).grad.vector() += self.grad.vector() * factor; });
}

Var relu(const Var& x) {
  Tensor out = Tensor::uninitialized(x.shape());
  out.vector() = x.value().vector().cwiseMax(0.0);
  return make_op("relu", std::move(out), {x}, [](Node& self) {
    Node& nx = input(self, 0);
    nx.grad.vector().array() += (nx.value.vector().array() > 0.0).select(self.grad.vector().array(), 0.0);
  });
}

Var sigmoid(const Var& x) {
  Tensor out(x.shape());
  const double* px = x.value().data();
  double* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = px[i];
    // Branch on sign so exp never overflows.
    if (v >= 0) {
      po[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      po[i] = e / (1.0 + e);
    }
  }
  return make_op("sigmoid", std::move(out), {x}, [](Node& self) {
    const auto& y = self.value.vector().array();
    input(self, 0).grad.vector().array() += self.grad.vector().array() * y * (1.0 - y);
  });
}

Var sum(const Var& x) {
  return make_op("sum", Tensor::scalar(x.value().vector().sum()), {x},
                 [](Node& self) { input(self, 0).grad.vector().array() += self.grad[0]; });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  return make_op("mean", Tensor::scalar(x.value().vector().sum() / n), {x},
                 [n](Node& self) { input(self, 0).grad.vector().array() += self.grad[0] / n; });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_op("reshape", std::move(out), {x},
                 [](Node& self) { input(self, 0).grad.vector() += self.grad.vector(); });
}

Var global_average_pool(const Var& x) {
  require_rank(x, 4, "global_average_pool");
  const std::size_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({b, c});
  out.vector() = x.value().matrix(b * c, hw).rowwise().mean();
  return make_op("global_average_pool", std::move(out), {x}, [b, c, hw](Node& self) {
    auto g = input(self, 0).grad.matrix(b * c, hw);
    const auto& gy = self.grad.vector();
    g.colwise() += gy / static_cast<double>(hw);
  });
}

Var softmax_rows(const Var& x) {
  if (x.rank() == 0) throw DimensionError("softmax_rows on rank-0 tensor");
  if (!x.value().all_finite()) throw NonFiniteError("softmax_rows: non-finite input");
  const std::size_t cols = x.dim(x.rank() - 1);
  const std::size_t rows = x.value().size() / cols;
  Tensor out(x.shape());
  auto in = x.value().matrix(rows, cols);
  auto o = out.matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double peak = in.row(r).maxCoeff();
    o.row(r) = (in.row(r).array() - peak).exp();
    o.row(r) /= o.row(r).sum();
  }
  return make_op("softmax_rows", std::move(out), {x}, [rows, cols](Node& self) {
    const auto y = self.value.matrix(rows, cols);
    const auto gy = self.grad.matrix(rows, cols);
    auto gx = input(self, 0).grad.matrix(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
      const double dot = y.row(r).dot(gy.row(r));
      gx.row(r).array() += y.row(r).array() * (gy.row(r).array() - dot);
    }
  });
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (kernel > in + 2 * padding) throw DimensionError("conv2d: kernel larger than padded input");
  return (in + 2 * padding - kernel) / stride + 1;
}

namespace {

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t filters, kh, kw;
  std::size_t out_h, out_w;
  std::size_t stride, padding;

  std::size_t patch() const { return channels * kh * kw; }
  std::size_t out_area() const { return out_h * out_w; }
};

ConvGeometry conv_geometry(const Var& x, const Var& w, ConvOptions opt) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  if (w.dim(1) != x.dim(1))
    throw DimensionError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, kernel expects " +
                         std::to_string(w.dim(1)));
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), 0, 0,
                 opt.stride, opt.padding};
  g.out_h = conv_output_extent(g.height, g.kh, g.stride, g.padding);
  g.out_w = conv_output_extent(g.width, g.kw, g.stride, g.padding);
  return g;
}

// Unfolds one image [C,H,W] into columns [C*kh*kw, H'*W'].
void im2col(const ConvGeometry& g, const double* img, double* cols) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = cols + ((c * g.kh + ky) * g.kw + kx) * g.out_area();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                                ix < static_cast<std::ptrdiff_t>(g.width);
            row[oy * g.out_w + ox] = inside ? img[(c * g.height + iy) * g.width + ix] : 0.0;
          }
        }
      }
}

void col2im(const ConvGeometry& g, const double* cols, double* img) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = cols + ((c * g.kh + ky) * g.kw + kx) * g.out_area();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            img[(c * g.height + iy) * g.width + ix] += row[oy * g.out_w + ox];
          }
        }
      }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, ConvOptions options) {
  const ConvGeometry g = conv_geometry(x, w, options);
  Tensor out({g.batch, g.filters, g.out_h, g.out_w});
  const auto wm = w.value().matrix(g.filters, g.patch());
  RowMatrixXd cols(g.patch(), g.out_area());
  const std::size_t in_stride = g.channels * g.height * g.width;
  const std::size_t out_stride = g.filters * g.out_area();
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(g, x.value().data() + b * in_stride, cols.data());
    MatrixMap(out.data() + b * out_stride, g.filters, g.out_area()).noalias() = wm * cols;
  }
  return make_op("conv2d", std::move(out), {x, w}, [g, in_stride, out_stride](Node& self) {
    Node& nx = input(self, 0);
    Node& nw = input(self, 1);
    const auto wm = nw.value.matrix(g.filters, g.patch());
    RowMatrixXd cols(g.patch(), g.out_area());
    RowMatrixXd dcols(g.patch(), g.out_area());
    for (std::size_t b = 0; b < g.batch; ++b) {
      ConstMatrixMap dy(self.grad.data() + b * out_stride, g.filters, g.out_area());
      if (nw.requires_grad) {
        im2col(g, nx.value.data() + b * in_stride, cols.data());
        nw.grad.matrix(g.filters, g.patch()).noalias() += dy * cols.transpose();
      }
      if (nx.requires_grad) {
        dcols.noalias() = wm.transpose() * dy;
        col2im(g, dcols.data(), nx.grad.data() + b * in_stride);
      }
    }
  });
}

Var conv2d_direct(const Var& x, const Var& w, ConvOptions options) {
  const ConvGeometry g = conv_geometry(x, w, options);
  Tensor out({g.batch, g.filters, g.out_h, g.out_w});
  const double* px = x.value().data();
  const double* pw = w.value().data();
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.padding);
  // Visits every (output, weight, input) triple that contributes to the correlation.
  auto visit = [g, pad](auto&& fn) {
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t f = 0; f < g.filters; ++f)
        for (std::size_t oy = 0; oy < g.out_h; ++oy)
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::size_t o = ((b * g.filters + f) * g.out_h + oy) * g.out_w + ox;
            for (std::size_t c = 0; c < g.channels; ++c)
              for (std::size_t ky = 0; ky < g.kh; ++ky)
                for (std::size_t kx = 0; kx < g.kw; ++kx) {
                  const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
                  if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.height) ||
                      ix >= static_cast<std::ptrdiff_t>(g.width))
                    continue;
                  const std::size_t i = ((b * g.channels + c) * g.height + iy) * g.width + ix;
                  const std::size_t k = ((f * g.channels + c) * g.kh + ky) * g.kw + kx;
                  fn(o, i, k);
                }
          }
  };
  double* po = out.data();
  visit([&](std::size_t o, std::size_t i, std::size_t k) { po[o] += px[i] * pw[k]; });
  return make_op("conv2d_direct", std::move(out), {x, w}, [visit](Node& self) {
    Node& nx = input(self, 0);
    Node& nw = input(self, 1);
    const double* gy = self.grad.data();
    const double* vx = nx.value.data();
    const double* vw = nw.value.data();
    double* gx = nx.requires_grad ? nx.grad.data() : nullptr;
    double* gw = nw.requires_grad ? nw.grad.data() : nullptr;
    visit([&](std::size_t o, std::size_t i, std::size_t k) {
      if (gx) gx[i] += gy[o] * vw[k];
      if (gw) gw[k] += gy[o] * vx[i];
    });
  });
}

Normalized batch_normalize(const Var& x, const std::vector<std::size_t>& axes, double eps) {
  if (eps <= 0) throw ContractError("batch_normalize: eps must be positive");
  Shape stat_shape = x.shape();
  for (std::size_t a : axes) {
    if (a >= stat_shape.size())
      throw DimensionError("batch_normalize: axis " + std::to_string(a) + " out of range for " +
                           shape_string(x.shape()));
    stat_shape[a] = 1;
  }
  const std::size_t groups = shape_size(stat_shape);
  const std::size_t population = x.value().size() / groups;
  if (axes.empty() || population < 1) throw EmptyPopulationError("batch_normalize: empty reduction population");

  const BroadcastPlan plan = plan_broadcast(x.shape(), stat_shape, "batch_normalize");
  const double* px = x.value().data();
  Tensor mean(stat_shape), var(stat_shape);
  double* pm = mean.data();
  double* pv = var.data();
  for_each_broadcast(plan, [&](std::size_t, std::size_t i, std::size_t s) { pm[s] += px[i]; });
  mean.vector() /= static_cast<double>(population);
  for_each_broadcast(plan, [&](std::size_t, std::size_t i, std::size_t s) {
    const double d = px[i] - pm[s];
    pv[s] += d * d;
  });
  var.vector() /= static_cast<double>(population);

  Tensor inv_std(stat_shape);
  inv_std.vector() = (var.vector().array() + eps).rsqrt().matrix();
  Tensor out(x.shape());
  double* po = out.data();
  const double* pis = inv_std.data();
  for_each_broadcast(plan, [&](std::size_t, std::size_t i, std::size_t s) { po[i] = (px[i] - pm[s]) * pis[s]; });

  Var result = make_op("batch_normalize", std::move(out), {x}, [plan, inv_std, population](Node& self) {
    // dx = inv_std * (dy - mean(dy) - xhat * mean(dy * xhat))
    const double* gy = self.grad.data();
    const double* xh = self.value.data();
    double* gx = input(self, 0).grad.data();
    Tensor mean_g(inv_std.shape()), mean_gx(inv_std.shape());
    double* mg = mean_g.data();
    double* mgx = mean_gx.data();
    for_each_broadcast(plan, [&](std::size_t, std::size_t i, std::size_t s) {
      mg[s] += gy[i];
      mgx[s] += gy[i] * xh[i];
    });
    const double n = static_cast<double>(population);
    const double* pis = inv_std.data();
    for_each_broadcast(plan, [&](std::size_t, std::size_t i, std::size_t s) {
      gx[i] += pis[s] * (gy[i] - mg[s] / n - xh[i] * mgx[s] / n);
    });
  });
  return {std::move(result), std::move(mean), std::move(var)};
}

Var bce_with_logits(const Var& logits, const Tensor& labels) {
  if (labels.shape() != logits.shape())
    throw DimensionError("bce_with_logits: labels " + shape_string(labels.shape()) + " vs logits " +
                         shape_string(logits.shape()));
  const std::size_t n = labels.size();
  double total = 0.0;
  const double* pl = logits.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double y = labels[i];
    if (y != 0.0 && y != 1.0) throw ContractError("bce_with_logits: labels must be 0 or 1");
    const double l = pl[i];
    // -[y log s(l) + (1-y) log(1 - s(l))] = max(l,0) - l*y + log(1 + exp(-|l|))
    total += std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
  }
  return make_op("bce_with_logits", Tensor::scalar(total / static_cast<double>(n)), {logits},
                 [labels, n](Node& self) {
                   Node& nl = input(self, 0);
                   const double g = self.grad[0] / static_cast<double>(n);
                   const double* pl = nl.value.data();
                   double* gl = nl.grad.data();
                   for (std::size_t i = 0; i < n; ++i) {
                     const double l = pl[i];
                     const double s = l >= 0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
                     gl[i] += g * (s - labels[i]);
                   }
                 });
}

}  // namespace occattn::ops
