#include "hyperst/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hyperst::ops {

namespace {

void require_same_shape(std::string_view op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

void require_rank(std::string_view op, const Var& x, std::size_t rank, std::string_view what) {
  if (x.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": " + std::string(what) + " must have rank " + std::to_string(rank) +
                         ", got " + to_string(x.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1, mid = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.mid = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

void check_axis_vector(std::string_view op, const Var& x, const Var& v, std::size_t axis) {
  if (axis >= x.shape().size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         to_string(x.shape()));
  }
  if (v.shape().size() != 1 || v.shape()[0] != x.shape()[axis]) {
    throw DimensionError(std::string(op) + ": vector " + to_string(v.shape()) + " does not match axis " +
                         std::to_string(axis) + " of " + to_string(x.shape()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  require_rank("matmul", a, 2, "left operand");
  require_rank("matmul", b, 2, "right operand");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner extents disagree, " + to_string(a.shape()) + " · " + to_string(b.shape()));
  }
  Tensor out({m, n});
  const double* A = a.value().raw();
  const double* B = b.value().raw();
  double* C = out.raw();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return a.tape().record("matmul", std::move(out), {a, b}, [m, k, n](BackwardContext& ctx) {
    const double* G = ctx.output_grad().raw();
    const double* A = ctx.input(0).raw();
    const double* B = ctx.input(1).raw();
    if (ctx.needs(0)) {
      double* dA = ctx.sink(0).data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B + p * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          dA[i * k + p] += acc;
        }
      }
    }
    if (ctx.needs(1)) {
      double* dB = ctx.sink(1).data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          if (aip == 0.0) continue;
          double* drow = dB + p * n;
          for (std::size_t j = 0; j < n; ++j) drow[j] += aip * grow[j];
        }
      }
    }
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  const double* bs = b.value().raw();
  double* os = out.raw();
  for (std::size_t i = 0; i < out.numel(); ++i) os[i] += bs[i];
  return a.tape().record("add", std::move(out), {a, b}, [](BackwardContext& ctx) {
    const auto g = ctx.output_grad().data();
    for (std::size_t k = 0; k < 2; ++k) {
      if (!ctx.needs(k)) continue;
      auto s = ctx.sink(k);
      for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  const double* bs = b.value().raw();
  double* os = out.raw();
  for (std::size_t i = 0; i < out.numel(); ++i) os[i] -= bs[i];
  return a.tape().record("sub", std::move(out), {a, b}, [](BackwardContext& ctx) {
    const auto g = ctx.output_grad().data();
    if (ctx.needs(0)) {
      auto s = ctx.sink(0);
      for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i];
    }
    if (ctx.needs(1)) {
      auto s = ctx.sink(1);
      for (std::size_t i = 0; i < g.size(); ++i) s[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  const double* bs = b.value().raw();
  double* os = out.raw();
  for (std::size_t i = 0; i < out.numel(); ++i) os[i] *= bs[i];
  return a.tape().record("mul", std::move(out), {a, b}, [](BackwardContext& ctx) {
    const auto g = ctx.output_grad().data();
    const double* as = ctx.input(0).raw();
    const double* bs = ctx.input(1).raw();
    if (ctx.needs(0)) {
      auto s = ctx.sink(0);
      for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] * bs[i];
    }
    if (ctx.needs(1)) {
      auto s = ctx.sink(1);
      for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] * as[i];
    }
  });
}

Var sigmoid(Var x) {
  Tensor out(x.shape());
  const double* xs = x.value().raw();
  double* os = out.raw();
  for (std::size_t i = 0; i < out.numel(); ++i) os[i] = 1.0 / (1.0 + std::exp(-xs[i]));
  return x.tape().record("sigmoid", std::move(out), {x}, [](BackwardContext& ctx) {
    const auto g = ctx.output_grad().data();
    const double* y = ctx.output().raw();
    auto s = ctx.sink(0);
    for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var tanh(Var x) {
  Tensor out(x.shape());
  const double* xs = x.value().raw();
  double* os = out.raw();
  for (std::size_t i = 0; i < out.numel(); ++i) os[i] = std::tanh(xs[i]);
  return x.tape().record("tanh", std::move(out), {x}, [](BackwardContext& ctx) {
    const auto g = ctx.output_grad().data();
    const double* y = ctx.output().raw();
    auto s = ctx.sink(0);
    for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (auto& v : out.data()) v *= factor;
  return x.tape().record("scale", std::move(out), {x}, [factor](BackwardContext& ctx) {
    const auto g = ctx.output_grad().data();
    auto s = ctx.sink(0);
    for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] * factor;
  });
}

Var scale_along(Var x, Var v, std::size_t axis) {
  check_axis_vector("scale_along", x, v, axis);
  const AxisSplit sp = split_at(x.shape(), axis);
  Tensor out = x.value();
  const double* vs = v.value().raw();
  double* os = out.raw();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t m = 0; m < sp.mid; ++m) {
      double* row = os + (o * sp.mid + m) * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) row[i] *= vs[m];
    }
  return x.tape().record("scale_along", std::move(out), {x, v}, [sp](BackwardContext& ctx) {
    const double* g = ctx.output_grad().raw();
    const double* xs = ctx.input(0).raw();
    const double* vs = ctx.input(1).raw();
    const bool dx = ctx.needs(0), dv = ctx.needs(1);
    double* sx = dx ? ctx.sink(0).data() : nullptr;
    double* svec = dv ? ctx.sink(1).data() : nullptr;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t m = 0; m < sp.mid; ++m) {
        const std::size_t base = (o * sp.mid + m) * sp.inner;
        double acc = 0.0;
        for (std::size_t i = 0; i < sp.inner; ++i) {
          if (dx) sx[base + i] += g[base + i] * vs[m];
          acc += g[base + i] * xs[base + i];
        }
        if (dv) svec[m] += acc;
      }
  });
}

Var add_along(Var x, Var v, std::size_t axis) {
  check_axis_vector("add_along", x, v, axis);
  const AxisSplit sp = split_at(x.shape(), axis);
  Tensor out = x.value();
  const double* vs = v.value().raw();
  double* os = out.raw();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t m = 0; m < sp.mid; ++m) {
      double* row = os + (o * sp.mid + m) * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) row[i] += vs[m];
    }
  return x.tape().record("add_along", std::move(out), {x, v}, [sp](BackwardContext& ctx) {
    const double* g = ctx.output_grad().raw();
    if (ctx.needs(0)) {
      auto s = ctx.sink(0);
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += g[i];
    }
    if (ctx.needs(1)) {
      double* sv = ctx.sink(1).data();
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t m = 0; m < sp.mid; ++m) {
          const double* row = g + (o * sp.mid + m) * sp.inner;
          double acc = 0.0;
          for (std::size_t i = 0; i < sp.inner; ++i) acc += row[i];
          sv[m] += acc;
        }
    }
  });
}

Var sum(Var x) {
  const auto d = x.value().data();
  const double total = std::accumulate(d.begin(), d.end(), 0.0);
  return x.tape().record("sum", Tensor::scalar(total), {x}, [](BackwardContext& ctx) {
    const double g = ctx.output_grad()[0];
    for (auto& s : ctx.sink(0)) s += g;
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record("reshape", std::move(out), {x}, [](BackwardContext& ctx) {
    const auto g = ctx.output_grad().data();
    auto s = ctx.sink(0);
    for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i];
  });
}

Var permute(Var x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  const std::size_t r = in.size();
  std::vector<std::size_t> sorted = axes;
  std::sort(sorted.begin(), sorted.end());
  bool ok = axes.size() == r;
  for (std::size_t i = 0; ok && i < r; ++i) ok = sorted[i] == i;
  if (!ok) throw DimensionError("permute: axes are not a permutation of rank " + std::to_string(r));

  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in[axes[i]];
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * in[i + 1];
  // Stride in the input for each output axis.
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) src_stride[i] = in_stride[axes[i]];

  // Maps each output flat index to its input flat index.
  std::vector<std::size_t> gather(x.value().numel());
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < gather.size(); ++flat) {
    gather[flat] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      src += src_stride[ax];
      if (idx[ax] < out_shape[ax]) break;
      src -= src_stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  Tensor out(out_shape);
  const double* xs = x.value().raw();
  for (std::size_t i = 0; i < gather.size(); ++i) out[i] = xs[gather[i]];
  return x.tape().record("permute", std::move(out), {x}, [gather = std::move(gather)](BackwardContext& ctx) {
    const double* g = ctx.output_grad().raw();
    auto s = ctx.sink(0);
    for (std::size_t i = 0; i < gather.size(); ++i) s[gather[i]] += g[i];
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> mids;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw DimensionError("concat: " + to_string(s) + " incompatible with " + to_string(first));
    mids.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisSplit sp = split_at(out_shape, axis);
  Tensor out(out_shape);
  double* os = out.raw();
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const double* ps = parts[k].value().raw();
    const std::size_t block = mids[k] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy(ps + o * block, ps + (o + 1) * block, os + o * sp.mid * sp.inner + offset);
    }
    offset += block;
  }
  return parts.front().tape().record(
      "concat", std::move(out), std::span<const Var>(parts), [sp, mids](BackwardContext& ctx) {
        const double* g = ctx.output_grad().raw();
        std::size_t offset = 0;
        for (std::size_t k = 0; k < mids.size(); ++k) {
          const std::size_t block = mids[k] * sp.inner;
          if (ctx.needs(k)) {
            double* s = ctx.sink(k).data();
            for (std::size_t o = 0; o < sp.outer; ++o) {
              const double* src = g + o * sp.mid * sp.inner + offset;
              for (std::size_t i = 0; i < block; ++i) s[o * block + i] += src[i];
            }
          }
          offset += block;
        }
      });
}

Var conv2d(Var x, Var kernel, Padding padding) {
  require_rank("conv2d", x, 3, "input");
  require_rank("conv2d", kernel, 4, "kernel");
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  const std::size_t cin = xs[0], hx = xs[1], wx = xs[2];
  const std::size_t cout = ks[0], kh = ks[2], kw = ks[3];
  if (ks[1] != cin) {
    throw DimensionError("conv2d: channel mismatch, input " + to_string(xs) + " kernel " + to_string(ks));
  }
  std::size_t pt = 0, pl = 0, ho = 0, wo = 0;
  if (padding == Padding::same) {
    pt = (kh - 1) / 2;
    pl = (kw - 1) / 2;
    ho = hx;
    wo = wx;
  } else {
    if (kh > hx || kw > wx) {
      throw DimensionError("conv2d: kernel " + to_string(ks) + " larger than input " + to_string(xs));
    }
    ho = hx - kh + 1;
    wo = wx - kw + 1;
  }
  const long lpt = static_cast<long>(pt), lpl = static_cast<long>(pl);

  Tensor out({cout, ho, wo});
  const double* X = x.value().raw();
  const double* K = kernel.value().raw();
  double* Y = out.raw();
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t u = 0; u < kh; ++u)
        for (std::size_t v = 0; v < kw; ++v) {
          const double kv = K[((o * cin + c) * kh + u) * kw + v];
          if (kv == 0.0) continue;
          for (std::size_t i = 0; i < ho; ++i) {
            const long y = static_cast<long>(i + u) - lpt;
            if (y < 0 || y >= static_cast<long>(hx)) continue;
            const double* xrow = X + (c * hx + static_cast<std::size_t>(y)) * wx;
            double* yrow = Y + (o * ho + i) * wo;
            for (std::size_t j = 0; j < wo; ++j) {
              const long xc = static_cast<long>(j + v) - lpl;
              if (xc < 0 || xc >= static_cast<long>(wx)) continue;
              yrow[j] += kv * xrow[xc];
            }
          }
        }

  return x.tape().record(
      "conv2d", std::move(out), {x, kernel},
      [cin, hx, wx, cout, kh, kw, ho, wo, lpt, lpl](BackwardContext& ctx) {
        const double* G = ctx.output_grad().raw();
        const double* X = ctx.input(0).raw();
        const double* K = ctx.input(1).raw();
        double* dX = ctx.needs(0) ? ctx.sink(0).data() : nullptr;
        double* dK = ctx.needs(1) ? ctx.sink(1).data() : nullptr;
        for (std::size_t o = 0; o < cout; ++o)
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const std::size_t kidx = ((o * cin + c) * kh + u) * kw + v;
                const double kv = K[kidx];
                double acc = 0.0;
                for (std::size_t i = 0; i < ho; ++i) {
                  const long y = static_cast<long>(i + u) - lpt;
                  if (y < 0 || y >= static_cast<long>(hx)) continue;
                  const std::size_t xoff = (c * hx + static_cast<std::size_t>(y)) * wx;
                  const double* grow = G + (o * ho + i) * wo;
                  for (std::size_t j = 0; j < wo; ++j) {
                    const long xc = static_cast<long>(j + v) - lpl;
                    if (xc < 0 || xc >= static_cast<long>(wx)) continue;
                    acc += grow[j] * X[xoff + xc];
                    if (dX) dX[xoff + xc] += grow[j] * kv;
                  }
                }
                if (dK) dK[kidx] += acc;
              }
      });
}

Var batched_matvec(Var x, Var w) {
  require_rank("batched_matvec", x, 2, "vectors");
  require_rank("batched_matvec", w, 3, "matrices");
  const std::size_t b = x.shape()[0], k = x.shape()[1];
  if (w.shape()[0] != b || w.shape()[1] != k) {
    throw DimensionError("batched_matvec: " + to_string(x.shape()) + " vs " + to_string(w.shape()));
  }
  const std::size_t n = w.shape()[2];
  Tensor out({b, n});
  const double* X = x.value().raw();
  const double* W = w.value().raw();
  double* Y = out.raw();
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = X[r * k + p];
      const double* wrow = W + (r * k + p) * n;
      double* yrow = Y + r * n;
      for (std::size_t j = 0; j < n; ++j) yrow[j] += xv * wrow[j];
    }
  return x.tape().record("batched_matvec", std::move(out), {x, w}, [b, k, n](BackwardContext& ctx) {
    const double* G = ctx.output_grad().raw();
    const double* X = ctx.input(0).raw();
    const double* W = ctx.input(1).raw();
    double* dX = ctx.needs(0) ? ctx.sink(0).data() : nullptr;
    double* dW = ctx.needs(1) ? ctx.sink(1).data() : nullptr;
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t p = 0; p < k; ++p) {
        const double* grow = G + r * n;
        const std::size_t off = (r * k + p) * n;
        if (dX) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * W[off + j];
          dX[r * k + p] += acc;
        }
        if (dW) {
          const double xv = X[r * k + p];
          for (std::size_t j = 0; j < n; ++j) dW[off + j] += xv * grow[j];
        }
      }
  });
}

}  // namespace hyperst::ops
