#include "msconv/ops.hpp"

// Eigen's coefficient-based small-product path and its reductions peel by
// pointer alignment, so the summation order could change between runs. The
// blocked GEMM kernel is alignment-independent; always use it.
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "msconv/parallel.hpp"

namespace msconv {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

using Buffer = std::vector<double>;

DType result_dtype(std::initializer_list<const Tensor*> ins) {
  for (const Tensor* t : ins) {
    if (!t->empty() && t->dtype() == DType::kF64) return DType::kF64;
  }
  return DType::kF32;
}

Tensor finish(Shape s, Buffer&& values, std::initializer_list<const Tensor*> ins, Tape::BackwardFn fn) {
  Tensor out(s, std::move(values), result_dtype(ins));
  Tape* tape = common_tape(ins);
  if (tape == nullptr) return out;
  return tape->record(std::move(out), ins, std::move(fn));
}

void require_same_shape(const Tensor& x, const Tensor& y, const char* op) {
  if (x.shape() != y.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + x.shape().str() + " vs " + y.shape().str());
  }
}

void require_even_spatial(const Tensor& x, const char* op) {
  const Shape& s = x.shape();
  if (s.h <= 0 || s.w <= 0) throw ShapeError(std::string(op) + ": empty spatial dims " + s.str());
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError(std::string(op) + ": odd spatial dims " + s.str() + " (pad explicitly)");
  }
}

std::size_t idx(const Shape& s, std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
  return static_cast<std::size_t>(((n * s.c + c) * s.h + h) * s.w + w);
}

struct ConvGeometry {
  std::int64_t cin, cout, k, h, w, hout, wout;
  ConvArgs args;
  std::int64_t rows() const { return cin * k * k; }
  std::int64_t cols() const { return hout * wout; }
  bool direct() const { return k == 1 && args.stride == 1 && args.padding == 0; }
};

// Column matrix (cin*k*k) x (hout*wout) for one sample.
void im2col(const double* x, const ConvGeometry& g, double* col) {
  const std::int64_t s = g.args.stride, d = g.args.dilation, p = g.args.padding;
  for (std::int64_t ci = 0; ci < g.cin; ++ci) {
    const double* plane = x + ci * g.h * g.w;
    for (std::int64_t ki = 0; ki < g.k; ++ki) {
      for (std::int64_t kj = 0; kj < g.k; ++kj) {
        double* row = col + ((ci * g.k + ki) * g.k + kj) * g.cols();
        for (std::int64_t oh = 0; oh < g.hout; ++oh) {
          const std::int64_t ih = oh * s - p + ki * d;
          double* dst = row + oh * g.wout;
          if (ih < 0 || ih >= g.h) {
            std::fill(dst, dst + g.wout, 0.0);
            continue;
          }
          const double* src = plane + ih * g.w;
          for (std::int64_t ow = 0; ow < g.wout; ++ow) {
            const std::int64_t iw = ow * s - p + kj * d;
            dst[ow] = (iw >= 0 && iw < g.w) ? src[iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* x) {
  const std::int64_t s = g.args.stride, d = g.args.dilation, p = g.args.padding;
  for (std::int64_t ci = 0; ci < g.cin; ++ci) {
    double* plane = x + ci * g.h * g.w;
    for (std::int64_t ki = 0; ki < g.k; ++ki) {
      for (std::int64_t kj = 0; kj < g.k; ++kj) {
        const double* row = col + ((ci * g.k + ki) * g.k + kj) * g.cols();
        for (std::int64_t oh = 0; oh < g.hout; ++oh) {
          const std::int64_t ih = oh * s - p + ki * d;
          if (ih < 0 || ih >= g.h) continue;
          const double* src = row + oh * g.wout;
          double* dst = plane + ih * g.w;
          for (std::int64_t ow = 0; ow < g.wout; ++ow) {
            const std::int64_t iw = ow * s - p + kj * d;
            if (iw >= 0 && iw < g.w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

std::int64_t conv_out_extent(std::int64_t in, int kernel, const ConvArgs& args) {
  const std::int64_t span = static_cast<std::int64_t>(args.dilation) * (kernel - 1) + 1;
  const std::int64_t padded = in + 2 * static_cast<std::int64_t>(args.padding);
  if (padded < span) return 0;
  return (padded - span) / args.stride + 1;
}


Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, const ConvArgs& args) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (args.stride < 1 || args.dilation < 1 || args.padding < 0) {
    throw ShapeError("conv2d: stride and dilation must be >= 1 and padding >= 0");
  }
  if (ws.h != ws.w) throw ShapeError("conv2d: kernel must be square, got " + ws.str());
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: weight expects " + std::to_string(ws.c) + " input channels, input has " +
                     std::to_string(xs.c));
  }
  if (bias && bias->numel() != ws.n) {
    throw ShapeError("conv2d: bias has " + std::to_string(bias->numel()) + " elements for " +
                     std::to_string(ws.n) + " output channels");
  }
  ConvGeometry g{xs.c, ws.n, ws.h, xs.h, xs.w, 0, 0, args};
  g.hout = conv_out_extent(xs.h, static_cast<int>(ws.h), args);
  g.wout = conv_out_extent(xs.w, static_cast<int>(ws.w), args);
  if (g.hout < 1 || g.wout < 1) {
    throw ShapeError("conv2d: non-positive output size for input " + xs.str() + " and kernel " + ws.str());
  }
  const Shape os{xs.n, g.cout, g.hout, g.wout};
  Buffer out(static_cast<std::size_t>(os.numel()));
  const double* xd = x.data().data();
  const double* bd = bias ? bias->data().data() : nullptr;
  const ConstMap wm(w.data().data(), g.cout, g.rows());
  const std::int64_t in_stride = xs.c * xs.h * xs.w;

  parallel_for(xs.n, [&](std::int64_t n) {
    const double* xn = xd + n * in_stride;
    MutMap om(out.data() + n * g.cout * g.cols(), g.cout, g.cols());
    if (g.direct()) {
      om.noalias() = wm * ConstMap(xn, g.rows(), g.cols());
    } else {
      Buffer col(static_cast<std::size_t>(g.rows() * g.cols()));
      im2col(xn, g, col.data());
      om.noalias() = wm * ConstMap(col.data(), g.rows(), g.cols());
    }
    if (bd != nullptr) {
      for (std::int64_t co = 0; co < g.cout; ++co) om.row(co).array() += bd[co];
    }
  });

  const Tensor b = bias ? *bias : Tensor();
  return finish(os, std::move(out), {&x, &w, &b}, [x, w, b, g, in_stride](std::span<const double> go, Tape& tape) {
    const std::int64_t samples = x.shape().n;
    const std::int64_t out_stride = g.cout * g.cols();
    const ConstMap wm(w.data().data(), g.cout, g.rows());
    if (b.requires_grad()) {
      Buffer gb(static_cast<std::size_t>(g.cout), 0.0);
      for (std::int64_t n = 0; n < samples; ++n) {
        const ConstMap gm(go.data() + n * out_stride, g.cout, g.cols());
        for (std::int64_t co = 0; co < g.cout; ++co) {
          double acc = 0.0;
          for (std::int64_t j = 0; j < g.cols(); ++j) acc += gm(co, j);
          gb[static_cast<std::size_t>(co)] += acc;
        }
      }
      tape.accumulate(b, gb);
    }
    const bool need_w = w.requires_grad();
    const bool need_x = x.requires_grad();
    if (!need_w && !need_x) return;

    // Per-sample weight partials are summed in sample order so the result
    // does not depend on the worker count.
    std::vector<Buffer> gw_parts(need_w ? static_cast<std::size_t>(samples) : 0);
    Buffer gx(need_x ? static_cast<std::size_t>(x.numel()) : 0, 0.0);
    const double* xd = x.data().data();
    parallel_for(samples, [&](std::int64_t n) {
      const ConstMap gm(go.data() + n * out_stride, g.cout, g.cols());
      const double* xn = xd + n * in_stride;
      Buffer col;
      const double* colp = xn;
      if (!g.direct()) {
        col.resize(static_cast<std::size_t>(g.rows() * g.cols()));
        im2col(xn, g, col.data());
        colp = col.data();
      }
      if (need_w) {
        auto& part = gw_parts[static_cast<std::size_t>(n)];
        part.resize(static_cast<std::size_t>(g.cout * g.rows()));
        MutMap(part.data(), g.cout, g.rows()).noalias() = gm * ConstMap(colp, g.rows(), g.cols()).transpose();
      }
      if (need_x) {
        double* gxn = gx.data() + n * in_stride;
        if (g.direct()) {
          MutMap(gxn, g.rows(), g.cols()).noalias() = wm.transpose() * gm;
        } else {
          Buffer gcol(static_cast<std::size_t>(g.rows() * g.cols()));
          MutMap(gcol.data(), g.rows(), g.cols()).noalias() = wm.transpose() * gm;
          col2im_add(gcol.data(), g, gxn);
        }
      }
    });
    if (need_w) {
      Buffer gw(static_cast<std::size_t>(g.cout * g.rows()), 0.0);
      for (const auto& part : gw_parts) {
        for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += part[i];
      }
      tape.accumulate(w, gw);
    }
    if (need_x) tape.accumulate(x, gx);
  });
}

Tensor avg_pool2(const Tensor& x) {
  require_even_spatial(x, "avg_pool2");
  const Shape& s = x.shape();
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Buffer out(static_cast<std::size_t>(os.numel()));
  const auto xd = x.data();
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t i = 0; i < os.h; ++i)
        for (std::int64_t j = 0; j < os.w; ++j) {
          const double sum4 = xd[idx(s, n, c, 2 * i, 2 * j)] + xd[idx(s, n, c, 2 * i, 2 * j + 1)] +
                              xd[idx(s, n, c, 2 * i + 1, 2 * j)] + xd[idx(s, n, c, 2 * i + 1, 2 * j + 1)];
          out[idx(os, n, c, i, j)] = 0.25 * sum4;
        }
  return finish(os, std::move(out), {&x}, [x, os](std::span<const double> go, Tape& tape) {
    const Shape& s = x.shape();
    Buffer gx(static_cast<std::size_t>(s.numel()));
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t c = 0; c < s.c; ++c)
        for (std::int64_t h = 0; h < s.h; ++h)
          for (std::int64_t w = 0; w < s.w; ++w) gx[idx(s, n, c, h, w)] = 0.25 * go[idx(os, n, c, h / 2, w / 2)];
    tape.accumulate(x, gx);
  });
}

Tensor max_pool2(const Tensor& x) {
  require_even_spatial(x, "max_pool2");
  const Shape& s = x.shape();
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Buffer out(static_cast<std::size_t>(os.numel()));
  std::vector<std::size_t> arg(out.size());
  const auto xd = x.data();
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t i = 0; i < os.h; ++i)
        for (std::int64_t j = 0; j < os.w; ++j) {
          std::size_t best = idx(s, n, c, 2 * i, 2 * j);
          for (const auto& [di, dj] : {std::pair{0, 1}, std::pair{1, 0}, std::pair{1, 1}}) {
            const std::size_t k = idx(s, n, c, 2 * i + di, 2 * j + dj);
            if (xd[k] > xd[best]) best = k;
          }
          out[idx(os, n, c, i, j)] = xd[best];
          arg[idx(os, n, c, i, j)] = best;
        }
  return finish(os, std::move(out), {&x}, [x, arg = std::move(arg)](std::span<const double> go, Tape& tape) {
    Buffer gx(static_cast<std::size_t>(x.numel()), 0.0);
    for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += go[o];
    tape.accumulate(x, gx);
  });
}

Tensor avg_pool2_stride1(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.h <= 0 || s.w <= 0) throw ShapeError("avg_pool2_stride1: empty spatial dims " + s.str());
  Buffer out(static_cast<std::size_t>(s.numel()));
  const auto xd = x.data();
  auto get = [&](std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return (h < s.h && w < s.w) ? xd[idx(s, n, c, h, w)] : 0.0;
  };
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t h = 0; h < s.h; ++h)
        for (std::int64_t w = 0; w < s.w; ++w)
          out[idx(s, n, c, h, w)] =
              0.25 * (get(n, c, h, w) + get(n, c, h, w + 1) + get(n, c, h + 1, w) + get(n, c, h + 1, w + 1));
  return finish(s, std::move(out), {&x}, [x](std::span<const double> go, Tape& tape) {
    const Shape& s = x.shape();
    Buffer gx(static_cast<std::size_t>(s.numel()), 0.0);
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t c = 0; c < s.c; ++c)
        for (std::int64_t h = 0; h < s.h; ++h)
          for (std::int64_t w = 0; w < s.w; ++w) {
            const double g = 0.25 * go[idx(s, n, c, h, w)];
            gx[idx(s, n, c, h, w)] += g;
            if (w + 1 < s.w) gx[idx(s, n, c, h, w + 1)] += g;
            if (h + 1 < s.h) gx[idx(s, n, c, h + 1, w)] += g;
            if (h + 1 < s.h && w + 1 < s.w) gx[idx(s, n, c, h + 1, w + 1)] += g;
          }
    tape.accumulate(x, gx);
  });
}

Tensor nearest_upsample2(const Tensor& x) {
  const Shape& s = x.shape();
  const Shape os{s.n, s.c, 2 * s.h, 2 * s.w};
  Buffer out(static_cast<std::size_t>(os.numel()));
  const auto xd = x.data();
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t h = 0; h < os.h; ++h)
        for (std::int64_t w = 0; w < os.w; ++w) out[idx(os, n, c, h, w)] = xd[idx(s, n, c, h / 2, w / 2)];
  return finish(os, std::move(out), {&x}, [x, os](std::span<const double> go, Tape& tape) {
    const Shape& s = x.shape();
    Buffer gx(static_cast<std::size_t>(s.numel()), 0.0);
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t c = 0; c < s.c; ++c)
        for (std::int64_t h = 0; h < os.h; ++h)
          for (std::int64_t w = 0; w < os.w; ++w) gx[idx(s, n, c, h / 2, w / 2)] += go[idx(os, n, c, h, w)];
    tape.accumulate(x, gx);
  });
}

Tensor nearest_subsample2(const Tensor& x) {
  require_even_spatial(x, "nearest_subsample2");
  const Shape& s = x.shape();
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Buffer out(static_cast<std::size_t>(os.numel()));
  const auto xd = x.data();
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t i = 0; i < os.h; ++i)
        for (std::int64_t j = 0; j < os.w; ++j) out[idx(os, n, c, i, j)] = xd[idx(s, n, c, 2 * i, 2 * j)];
  return finish(os, std::move(out), {&x}, [x, os](std::span<const double> go, Tape& tape) {
    const Shape& s = x.shape();
    Buffer gx(static_cast<std::size_t>(s.numel()), 0.0);
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t c = 0; c < s.c; ++c)
        for (std::int64_t i = 0; i < os.h; ++i)
          for (std::int64_t j = 0; j < os.w; ++j) gx[idx(s, n, c, 2 * i, 2 * j)] = go[idx(os, n, c, i, j)];
    tape.accumulate(x, gx);
  });
}

Tensor pixel_shuffle(const Tensor& x, int r) {
  const Shape& s = x.shape();
  if (r < 1) throw ShapeError("pixel_shuffle: factor must be >= 1");
  const std::int64_t rr = static_cast<std::int64_t>(r) * r;
  if (s.c % rr != 0) {
    throw ShapeError("pixel_shuffle: " + std::to_string(s.c) + " channels not divisible by " + std::to_string(rr));
  }
  const Shape os{s.n, s.c / rr, s.h * r, s.w * r};
  // Output index for every input element; the backward pass is the gather.
  std::vector<std::size_t> dst(static_cast<std::size_t>(s.numel()));
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c) {
      const std::int64_t oc = c / rr, dy = (c % rr) / r, dx = c % r;
      for (std::int64_t h = 0; h < s.h; ++h)
        for (std::int64_t w = 0; w < s.w; ++w) dst[idx(s, n, c, h, w)] = idx(os, n, oc, h * r + dy, w * r + dx);
    }
  Buffer out(static_cast<std::size_t>(os.numel()));
  const auto xd = x.data();
  for (std::size_t i = 0; i < dst.size(); ++i) out[dst[i]] = xd[i];
  return finish(os, std::move(out), {&x}, [x, dst = std::move(dst)](std::span<const double> go, Tape& tape) {
    Buffer gx(dst.size());
    for (std::size_t i = 0; i < dst.size(); ++i) gx[i] = go[dst[i]];
    tape.accumulate(x, gx);
  });
}

Tensor relu(const Tensor& x) {
  const auto xd = x.data();
  Buffer out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  return finish(x.shape(), std::move(out), {&x}, [x](std::span<const double> go, Tape& tape) {
    const auto xd = x.data();
    Buffer gx(xd.size());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = xd[i] > 0.0 ? go[i] : 0.0;
    tape.accumulate(x, gx);
  });
}

Tensor add(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "add");
  const auto xd = x.data(), yd = y.data();
  Buffer out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] + yd[i];
  return finish(x.shape(), std::move(out), {&x, &y}, [x, y](std::span<const double> go, Tape& tape) {
    tape.accumulate(x, go);
    tape.accumulate(y, go);
  });
}

Tensor sub(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "sub");
  const auto xd = x.data(), yd = y.data();
  Buffer out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] - yd[i];
  return finish(x.shape(), std::move(out), {&x, &y}, [x, y](std::span<const double> go, Tape& tape) {
    tape.accumulate(x, go);
    if (y.requires_grad()) {
      Buffer gy(go.begin(), go.end());
      for (double& v : gy) v = -v;
      tape.accumulate(y, gy);
    }
  });
}

Tensor mul(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "mul");
  const auto xd = x.data(), yd = y.data();
  Buffer out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * yd[i];
  return finish(x.shape(), std::move(out), {&x, &y}, [x, y](std::span<const double> go, Tape& tape) {
    const auto xd = x.data(), yd = y.data();
    if (x.requires_grad()) {
      Buffer gx(go.size());
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = go[i] * yd[i];
      tape.accumulate(x, gx);
    }
    if (y.requires_grad()) {
      Buffer gy(go.size());
      for (std::size_t i = 0; i < gy.size(); ++i) gy[i] = go[i] * xd[i];
      tape.accumulate(y, gy);
    }
  });
}

Tensor scale(const Tensor& x, double a) {
  const auto xd = x.data();
  Buffer out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * xd[i];
  return finish(x.shape(), std::move(out), {&x}, [x, a](std::span<const double> go, Tape& tape) {
    Buffer gx(go.size());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = a * go[i];
    tape.accumulate(x, gx);
  });
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = parts[0].shape();
  std::int64_t channels = 0;
  Tape* tape = nullptr;
  bool any_f64 = false;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw ShapeError("concat_channels: mismatched " + s.str() + " vs " + s0.str());
    }
    channels += s.c;
    Tape* t = common_tape({&p});
    if (t != nullptr) {
      if (tape != nullptr && tape != t) throw std::logic_error("inputs recorded on different tapes");
      tape = t;
    }
    any_f64 = any_f64 || p.dtype() == DType::kF64;
  }
  const Shape os{s0.n, channels, s0.h, s0.w};
  Buffer out(static_cast<std::size_t>(os.numel()));
  const std::int64_t plane = s0.plane();
  for (std::int64_t n = 0; n < s0.n; ++n) {
    std::int64_t offset = 0;
    for (const auto& p : parts) {
      const auto src = p.data().subspan(static_cast<std::size_t>(n * p.shape().c * plane),
                                        static_cast<std::size_t>(p.shape().c * plane));
      std::copy(src.begin(), src.end(), out.begin() + (n * channels + offset) * plane);
      offset += p.shape().c;
    }
  }
  Tensor result(os, std::move(out), any_f64 ? DType::kF64 : DType::kF32);
  if (tape == nullptr) return result;
  std::vector<Tensor> saved(parts.begin(), parts.end());
  return tape->record(std::move(result), {}, [saved, channels, plane](std::span<const double> go, Tape& tape) {
    const std::int64_t batch = saved[0].shape().n;
    std::int64_t offset = 0;
    for (const auto& p : saved) {
      const std::int64_t c = p.shape().c;
      if (p.requires_grad()) {
        Buffer gp(static_cast<std::size_t>(p.numel()));
        for (std::int64_t n = 0; n < batch; ++n) {
          const auto* src = go.data() + (n * channels + offset) * plane;
          std::copy(src, src + c * plane, gp.begin() + n * c * plane);
        }
        tape.accumulate(p, gp);
      }
      offset += c;
    }
  });
}

Tensor slice_channels(const Tensor& x, std::int64_t start, std::int64_t count) {
  const Shape& s = x.shape();
  if (start < 0 || count < 0 || start + count > s.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + std::to_string(s.c) + " channels");
  }
  const Shape os{s.n, count, s.h, s.w};
  const std::int64_t plane = s.plane();
  Buffer out(static_cast<std::size_t>(os.numel()));
  const auto xd = x.data();
  for (std::int64_t n = 0; n < s.n; ++n) {
    const auto* src = xd.data() + (n * s.c + start) * plane;
    std::copy(src, src + count * plane, out.begin() + n * count * plane);
  }
  return finish(os, std::move(out), {&x}, [x, start, count, plane](std::span<const double> go, Tape& tape) {
    const Shape& s = x.shape();
    Buffer gx(static_cast<std::size_t>(s.numel()), 0.0);
    for (std::int64_t n = 0; n < s.n; ++n) {
      const auto* src = go.data() + n * count * plane;
      std::copy(src, src + count * plane, gx.begin() + (n * s.c + start) * plane);
    }
    tape.accumulate(x, gx);
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return finish({1, 1, 1, 1}, Buffer{total}, {&x}, [x](std::span<const double> go, Tape& tape) {
    tape.accumulate(x, Buffer(static_cast<std::size_t>(x.numel()), go[0]));
  });
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "l1_loss");
  if (pred.numel() == 0) throw ShapeError("l1_loss: empty tensors");
  const auto pd = pred.data(), td = target.data();
  double total = 0.0;
  for (std::size_t i = 0; i < pd.size(); ++i) total += std::abs(pd[i] - td[i]);
  const double inv = 1.0 / static_cast<double>(pd.size());
  return finish({1, 1, 1, 1}, Buffer{total * inv}, {&pred, &target},
                [pred, target, inv](std::span<const double> go, Tape& tape) {
                  const auto pd = pred.data(), td = target.data();
                  Buffer g(pd.size());
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    const double d = pd[i] - td[i];
                    g[i] = d > 0.0 ? go[0] * inv : (d < 0.0 ? -go[0] * inv : 0.0);
                  }
                  tape.accumulate(pred, g);
                  if (target.requires_grad()) {
                    for (double& v : g) v = -v;
                    tape.accumulate(target, g);
                  }
                });
}

}  // namespace msconv
