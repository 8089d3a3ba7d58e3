#include "msconv/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <unordered_set>

#include "msconv/complexity.hpp"
#include "msconv/networks.hpp"
#include "msconv/pilot_equiv.hpp"
#include "msconv/resize.hpp"
#include "msconv/sr_pipeline.hpp"
#include "msconv/tensor_io.hpp"

namespace msconv {

namespace oracle {

namespace {

std::size_t idx(const Shape& s, std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
  return static_cast<std::size_t>(((n * s.c + c) * s.h + y) * s.w + x);
}

}  // namespace

Tensor conv2d_direct(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int dilation, int padding,
                     std::int64_t* mults) {
  const Shape xs = x.shape(), ws = w.shape();
  const std::int64_t k = ws.h;
  const std::int64_t oh = (xs.h + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
  const std::int64_t ow = (xs.w + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
  const Shape os{xs.n, ws.n, oh, ow};
  std::vector<double> out(static_cast<std::size_t>(os.numel()));
  std::int64_t count = 0;
  for (std::int64_t n = 0; n < xs.n; ++n)
    for (std::int64_t o = 0; o < ws.n; ++o)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          double acc = bias ? bias->data()[static_cast<std::size_t>(o)] : 0.0;
          for (std::int64_t c = 0; c < xs.c; ++c)
            for (std::int64_t i = 0; i < k; ++i)
              for (std::int64_t j = 0; j < k; ++j) {
                ++count;
                const std::int64_t sy = y * stride - padding + i * dilation;
                const std::int64_t sx = xx * stride - padding + j * dilation;
                if (sy < 0 || sy >= xs.h || sx < 0 || sx >= xs.w) continue;
                acc += w.data()[idx(ws, o, c, i, j)] * x.data()[idx(xs, n, c, sy, sx)];
              }
          out[idx(os, n, o, y, xx)] = acc;
        }
  if (mults) *mults = count;
  return Tensor(os, std::move(out));
}

namespace {

template <typename F>
Tensor per_block(const Tensor& x, F reduce) {
  const Shape s = x.shape();
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  std::vector<double> out(static_cast<std::size_t>(os.numel()));
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t y = 0; y < os.h; ++y)
        for (std::int64_t xx = 0; xx < os.w; ++xx) {
          const double v[4] = {x.data()[idx(s, n, c, 2 * y, 2 * xx)], x.data()[idx(s, n, c, 2 * y, 2 * xx + 1)],
                               x.data()[idx(s, n, c, 2 * y + 1, 2 * xx)], x.data()[idx(s, n, c, 2 * y + 1, 2 * xx + 1)]};
          out[idx(os, n, c, y, xx)] = reduce(v);
        }
  return Tensor(os, std::move(out));
}

}  // namespace

Tensor avg_pool2(const Tensor& x) {
  return per_block(x, [](const double* v) { return (v[0] + v[1] + v[2] + v[3]) / 4.0; });
}

Tensor max_pool2(const Tensor& x) {
  return per_block(x, [](const double* v) { return std::max({v[0], v[1], v[2], v[3]}); });
}

Tensor subsample2(const Tensor& x) {
  return per_block(x, [](const double* v) { return v[0]; });
}

Tensor upsample2(const Tensor& x) {
  const Shape s = x.shape();
  const Shape os{s.n, s.c, 2 * s.h, 2 * s.w};
  std::vector<double> out(static_cast<std::size_t>(os.numel()));
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t y = 0; y < os.h; ++y)
        for (std::int64_t xx = 0; xx < os.w; ++xx) out[idx(os, n, c, y, xx)] = x.data()[idx(s, n, c, y / 2, xx / 2)];
  return Tensor(os, std::move(out));
}

Tensor pixel_shuffle(const Tensor& x, int r) {
  const Shape s = x.shape();
  const Shape os{s.n, s.c / (r * r), s.h * r, s.w * r};
  std::vector<double> out(static_cast<std::size_t>(os.numel()));
  for (std::int64_t n = 0; n < os.n; ++n)
    for (std::int64_t c = 0; c < os.c; ++c)
      for (std::int64_t y = 0; y < os.h; ++y)
        for (std::int64_t xx = 0; xx < os.w; ++xx) {
          const std::int64_t src_c = c * r * r + (y % r) * r + (xx % r);
          out[idx(os, n, c, y, xx)] = x.data()[idx(s, n, src_c, y / r, xx / r)];
        }
  return Tensor(os, std::move(out));
}

double psnr_y(const Tensor& sr, const Tensor& hr, int border) {
  const Shape s = sr.shape();
  double total = 0.0;
  double count = 0.0;
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t y = border; y < s.h - border; ++y)
      for (std::int64_t xx = border; xx < s.w - border; ++xx) {
        double ya = (65.481 * sr.data()[idx(s, n, 0, y, xx)] + 128.553 * sr.data()[idx(s, n, 1, y, xx)] +
                     24.966 * sr.data()[idx(s, n, 2, y, xx)] + 16.0) / 255.0;
        double yb = (65.481 * hr.data()[idx(s, n, 0, y, xx)] + 128.553 * hr.data()[idx(s, n, 1, y, xx)] +
                     24.966 * hr.data()[idx(s, n, 2, y, xx)] + 16.0) / 255.0;
        ya = std::min(1.0, std::max(0.0, ya));
        yb = std::min(1.0, std::max(0.0, yb));
        total += (ya - yb) * (ya - yb);
        count += 1.0;
      }
  const double mse = total / count;
  return mse == 0.0 ? INFINITY : -10.0 * std::log10(mse);
}

namespace {

double keys_cubic(double t) {
  // Piecewise form of the a = -0.5 cubic written out independently.
  t = std::fabs(t);
  if (t < 1.0) return 1.5 * t * t * t - 2.5 * t * t + 1.0;
  if (t < 2.0) return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
  return 0.0;
}

// Weight of every source index (mirrored boundary folded in) for one output.
std::vector<double> column(std::int64_t in, double scale, std::int64_t o) {
  const double k = std::min(scale, 1.0);
  const double centre = (o + 0.5) / scale - 0.5;
  std::vector<double> wts(static_cast<std::size_t>(in), 0.0);
  double total = 0.0;
  for (std::int64_t i = -3 * in; i < 4 * in; ++i) {
    const double v = keys_cubic((centre - static_cast<double>(i)) * k);
    if (v == 0.0) continue;
    std::int64_t m = i;
    while (m < 0 || m >= in) m = m < 0 ? -m - 1 : 2 * in - m - 1;
    wts[static_cast<std::size_t>(m)] += v;
    total += v;
  }
  for (double& v : wts) v /= total;
  return wts;
}

}  // namespace

Tensor bicubic_resize(const Tensor& img, double scale) {
  const Shape s = img.shape();
  const Shape os{s.n, s.c, static_cast<std::int64_t>(std::llround(s.h * scale)),
                 static_cast<std::int64_t>(std::llround(s.w * scale))};
  std::vector<double> out(static_cast<std::size_t>(os.numel()));
  for (std::int64_t y = 0; y < os.h; ++y) {
    const auto wy = column(s.h, scale, y);
    for (std::int64_t xx = 0; xx < os.w; ++xx) {
      const auto wx = column(s.w, scale, xx);
      for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c) {
          double acc = 0.0;
          for (std::int64_t i = 0; i < s.h; ++i)
            for (std::int64_t j = 0; j < s.w; ++j) acc += wy[i] * wx[j] * img.data()[idx(s, n, c, i, j)];
          out[idx(os, n, c, y, xx)] = acc;
        }
    }
  }
  return Tensor(os, std::move(out));
}

}  // namespace oracle

Tensor random_tensor(Shape s, Rng& rng, double lo, double hi, DType dtype) {
  std::vector<double> v(static_cast<std::size_t>(s.numel()));
  for (double& e : v) e = rng.uniform(lo, hi);
  return Tensor(s, std::move(v), dtype);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

namespace {

double rel_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

Tensor with_element(const Tensor& t, std::size_t i, double v) {
  std::vector<double> d(t.data().begin(), t.data().end());
  d[i] = v;
  return Tensor(t.shape(), std::move(d), t.dtype());
}

}  // namespace

GradCheck grad_check(const MultiFn& fn, const std::vector<Tensor>& inputs, const std::vector<Parameter>& params,
                     std::uint64_t seed) {
  const auto unique = unique_parameters(params);
  std::vector<Tensor> probes;
  {
    Rng rng(seed);
    for (const Tensor& o : fn(inputs, nullptr)) probes.push_back(random_tensor(o.shape(), rng));
  }
  const auto objective = [&](const std::vector<Tensor>& in) {
    const auto outs = fn(in, nullptr);
    double total = 0.0;
    for (std::size_t k = 0; k < outs.size(); ++k) {
      for (std::size_t i = 0; i < outs[k].data().size(); ++i) total += outs[k].data()[i] * probes[k].data()[i];
    }
    return total;
  };

  for (const Parameter& p : unique) Parameter(p).zero_grad();
  Tape tape;
  std::vector<Tensor> watched;
  for (const Tensor& t : inputs) watched.push_back(tape.watch(t));
  const auto outs = fn(watched, &tape);
  Tensor loss;
  for (std::size_t k = 0; k < outs.size(); ++k) {
    const Tensor term = sum(mul(outs[k], probes[k]));
    loss = loss.empty() ? term : add(loss, term);
  }
  tape.backward(loss);

  GradCheck r;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const auto analytic = tape.grad_of(watched[t]);
    for (std::size_t i = 0; i < inputs[t].data().size(); ++i) {
      std::vector<Tensor> plus = inputs, minus = inputs;
      const double v = inputs[t].data()[i];
      plus[t] = with_element(inputs[t], i, v + kGradStep);
      minus[t] = with_element(inputs[t], i, v - kGradStep);
      const double numeric = (objective(plus) - objective(minus)) / (2.0 * kGradStep);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      r.max_rel_error = std::max(r.max_rel_error, rel_error(a, numeric));
      ++r.checked;
    }
  }
  for (const Parameter& p : unique) {
    Parameter q = p;
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    const Tensor original = p.value();
    for (std::size_t i = 0; i < original.data().size(); ++i) {
      const double v = original.data()[i];
      q.assign(with_element(original, i, v + kGradStep));
      const double up = objective(inputs);
      q.assign(with_element(original, i, v - kGradStep));
      const double down = objective(inputs);
      q.assign(original);
      r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic[i], (up - down) / (2.0 * kGradStep)));
      ++r.checked;
    }
  }
  return r;
}

GradCheck grad_check_layer(const ScaleLayer& layer, const ScaleFeatures& x, std::uint64_t seed) {
  std::vector<NamedParameter> named;
  layer.named_parameters("layer", named);
  std::vector<Parameter> params;
  for (const auto& np : named) params.push_back(np.param);
  return grad_check(
      [&](const std::vector<Tensor>& in, Tape* tape) { return layer.forward(ScaleFeatures(in), tape).groups; },
      x.groups, params, seed);
}

// ---- suites -----------------------------------------------------------------

namespace {

class Collector {
 public:
  explicit Collector(std::string suite) : suite_(std::move(suite)) {}

  void check(const std::string& name, bool ok, const std::string& detail = {}) {
    out_.push_back({suite_, name, ok, detail});
  }
  // Runs body and records any exception as a failure.
  template <typename F>
  void guarded(const std::string& name, F body) {
    try {
      body();
    } catch (const std::exception& e) {
      check(name, false, std::string("threw: ") + e.what());
    }
  }
  std::vector<CheckResult> take() { return std::move(out_); }

 private:
  std::string suite_;
  std::vector<CheckResult> out_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ScaleFeatures random_features(const std::vector<std::int64_t>& widths, std::int64_t n, std::int64_t h,
                              std::int64_t w, Rng& rng) {
  ScaleFeatures x;
  for (std::size_t i = 0; i < widths.size(); ++i) x.groups.push_back(random_tensor({n, widths[i], h >> i, w >> i}, rng));
  return x;
}

void core_suite(Collector& c) {
  Rng rng(11);
  c.guarded("conv2d matches nested-loop oracle over (k, s, d, p) grid", [&] {
    double worst = 0.0;
    int cases = 0;
    for (int k : {1, 3, 5})
      for (int s : {1, 2})
        for (int d : {1, 2})
          for (int p : {0, 1, 2}) {
            const Tensor x = random_tensor({2, 3, 9, 10}, rng);
            const Tensor w = random_tensor({4, 3, k, k}, rng);
            const Tensor b = random_tensor({1, 4, 1, 1}, rng);
            if (conv_out_extent(9, k, {s, d, p}) < 1) continue;
            worst = std::max(worst, max_abs_diff(conv2d(x, w, b, {s, d, p}), oracle::conv2d_direct(x, w, &b, s, d, p)));
            ++cases;
          }
    c.check("conv2d matches nested-loop oracle over (k, s, d, p) grid", worst <= 1e-12,
            std::to_string(cases) + " cases, max dev " + fmt("%.3g", worst));
  });
  c.guarded("conv2d is linear", [&] {
    const Tensor x = random_tensor({1, 2, 6, 6}, rng), y = random_tensor({1, 2, 6, 6}, rng);
    const Tensor w = random_tensor({3, 2, 3, 3}, rng);
    const Tensor lhs = conv2d(add(scale(x, 0.7), scale(y, -1.3)), w, std::nullopt, {1, 1, 1});
    const Tensor rhs = add(scale(conv2d(x, w, std::nullopt, {1, 1, 1}), 0.7), scale(conv2d(y, w, std::nullopt, {1, 1, 1}), -1.3));
    const double dev = max_abs_diff(lhs, rhs);
    c.check("conv2d is linear", dev <= 1e-12, "max dev " + fmt("%.3g", dev));
  });
  c.guarded("conv FLOPs equal oracle multiply-add count", [&] {
    bool ok = true;
    for (int k : {1, 3, 5}) {
      Rng r2(k);
      const Conv conv = Conv::init(3, 5, k, r2, DType::kF64);
      const Tensor x = random_tensor({1, 3, 7, 9}, rng);
      std::int64_t mults = 0;
      oracle::conv2d_direct(x, conv.weight.value(), nullptr, 1, 1, conv.padding(), &mults);
      ok = ok && conv.site("c", 0, 7, 9).flops() == mults;
    }
    c.check("conv FLOPs equal oracle multiply-add count", ok);
  });
  c.guarded("resampling operators match oracles", [&] {
    const Tensor x = random_tensor({2, 3, 6, 8}, rng);
    const Tensor ps = random_tensor({1, 8, 3, 3}, rng);
    const double dev = std::max({max_abs_diff(avg_pool2(x), oracle::avg_pool2(x)),
                                 max_abs_diff(max_pool2(x), oracle::max_pool2(x)),
                                 max_abs_diff(nearest_subsample2(x), oracle::subsample2(x)),
                                 max_abs_diff(nearest_upsample2(x), oracle::upsample2(x)),
                                 max_abs_diff(pixel_shuffle(ps, 2), oracle::pixel_shuffle(ps, 2)),
                                 max_abs_diff(nearest_subsample2(nearest_upsample2(x)), x)});
    c.check("resampling operators match oracles", dev == 0.0 || dev <= 1e-15, "max dev " + fmt("%.3g", dev));
  });
  c.guarded("parameter aliases observe mutation", [&] {
    Parameter p(Tensor::zeros({1, 1, 2, 2}));
    Parameter alias = p;
    alias.assign(Tensor::full({1, 1, 2, 2}, 3.0));
    c.check("parameter aliases observe mutation", p.value().data()[0] == 3.0 && p.share_id() == alias.share_id());
  });
  c.guarded("tensor dump round trip is bit-exact", [&] {
    const Tensor a = random_tensor({2, 3, 4, 5}, rng);
    const Tensor b = random_tensor({1, 2, 3, 3}, rng, -1, 1, DType::kF32);
    std::stringstream ss;
    write_tensor(ss, a);
    write_tensor(ss, b);
    const Tensor a2 = read_tensor(ss), b2 = read_tensor(ss);
    bool ok = a2.dtype() == DType::kF64 && b2.dtype() == DType::kF32;
    ok = ok && std::equal(a.data().begin(), a.data().end(), a2.data().begin());
    ok = ok && std::equal(b.data().begin(), b.data().end(), b2.data().begin());
    c.check("tensor dump round trip is bit-exact", ok);
  });
  c.guarded("unit output is the sum of independently evaluated entries", [&] {
    double worst = 0.0;
    for (Variant v : {Variant::kOctave, Variant::kMs2, Variant::kMs3, Variant::kMultigrid, Variant::kUnet}) {
      const int s = v == Variant::kMultigrid ? 3 : 2;
      const std::vector<std::int64_t> widths(static_cast<std::size_t>(s), 3);
      const MSConvUnit unit = build_variant(v, s, widths, rng, {3, DType::kF64});
      const ScaleFeatures x = random_features(widths, 2, 8, 8, rng);
      const ScaleFeatures y = unit.forward(x, nullptr);
      for (std::size_t i = 0; i < unit.scales(); ++i) {
        std::vector<double> acc(y[i].data().size(), 0.0);
        for (std::size_t j = 0; j < unit.scales(); ++j) {
          if (unit.spec().entries[i][j].kind == EntryKind::kZero) continue;
          const Tensor t = unit.apply_entry(i, j, x[j], nullptr);
          for (std::size_t e = 0; e < acc.size(); ++e) acc[e] += t.data()[e];
        }
        worst = std::max(worst, max_abs_diff(y[i], Tensor(y[i].shape(), acc)));
      }
    }
    c.check("unit output is the sum of independently evaluated entries", worst <= 1e-12, "max dev " + fmt("%.3g", worst));
  });
  c.guarded("FLOPs ratios are independent of input size", [&] {
    ModelConfig base;
    ModelConfig ms = base;
    ms.variant = "ms";
    ms.branches = 2;
    const Network a = build_network(base), b = build_network(ms);
    double lo = INFINITY, hi = -INFINITY;
    for (auto [h, w] : {std::pair{16, 16}, {24, 40}, {64, 32}}) {
      const double r = static_cast<double>(count_flops(b, h, w)) / static_cast<double>(count_flops(a, h, w));
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
    c.check("FLOPs ratios are independent of input size", (hi - lo) <= 1e-9 * hi, "ratio " + fmt("%.6f", lo));
  });
  c.guarded("weight sharing lowers params without changing diagonal FLOPs", [&] {
    const std::vector<std::int64_t> widths{32, 32};
    const MSConvUnit ms2 = build_variant(Variant::kMs2, 2, widths, rng);
    const MSConvUnit ms3 = build_variant(Variant::kMs3, 2, widths, rng);
    const MSConvUnit ms3l = build_variant(Variant::kMs3Large, 2, widths, rng);
    const auto diag_flops = [](const MSConvUnit& u) {
      std::vector<ConvSite> sites;
      u.conv_sites("u", 16, 16, sites);
      std::int64_t f = 0;
      for (const auto& s : sites) {
        if (s.name.ends_with("e00") || s.name.ends_with("e11")) f += s.flops();
      }
      return f;
    };
    const std::int64_t delta = 2 * 32 * 32 * (9 - 1);
    const bool ok = count_params(ms3) < count_params(ms2) && diag_flops(ms3) == diag_flops(ms2) &&
                    count_params(ms3l) - count_params(ms3) == delta && count_params(ms3) == 11360;
    c.check("weight sharing lowers params without changing diagonal FLOPs", ok);
  });
  c.guarded("psnr_y matches scalar oracle", [&] {
    const Tensor a = random_tensor({1, 3, 12, 12}, rng, 0, 1), b = random_tensor({1, 3, 12, 12}, rng, 0, 1);
    const double dev = std::abs(psnr_y(a, b, 2) - oracle::psnr_y(a, b, 2));
    c.check("psnr_y matches scalar oracle", dev <= 1e-9, "dev " + fmt("%.3g", dev));
  });
  c.guarded("bicubic matches kernel-sum oracle", [&] {
    const Tensor a = random_tensor({1, 2, 8, 10}, rng, 0, 1);
    const double dev = std::max({max_abs_diff(bicubic_resize(a, 0.5), oracle::bicubic_resize(a, 0.5)),
                                 max_abs_diff(bicubic_resize(a, 2.0), oracle::bicubic_resize(a, 2.0)),
                                 max_abs_diff(bicubic_resize(a, 0.25), oracle::bicubic_resize(a, 0.25))});
    c.check("bicubic matches kernel-sum oracle", dev <= 1e-12, "max dev " + fmt("%.3g", dev));
  });
}

void grad_suite(Collector& c) {
  Rng rng(23);
  const auto record = [&](const std::string& name, const GradCheck& g) {
    c.check(name, g.max_rel_error < kGradTolerance && g.checked > 0,
            std::to_string(g.checked) + " elements, max rel err " + fmt("%.3g", g.max_rel_error));
  };
  const auto op_case = [&](const std::string& name, const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           std::vector<Tensor> in) {
    c.guarded("grad " + name, [&] {
      record("grad " + name, grad_check([&](const std::vector<Tensor>& x, Tape*) { return std::vector<Tensor>{f(x)}; }, in, {}));
    });
  };
  const auto T = [&](Shape s) { return random_tensor(s, rng); };
  // Values bounded away from the ReLU kink and from max-pool ties.
  const auto spread = [&](Shape s) {
    std::vector<double> v(static_cast<std::size_t>(s.numel()));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (rng.coin() ? 1.0 : -1.0) * (0.1 + 0.05 * static_cast<double>(i % 17));
    std::shuffle(v.begin(), v.end(), std::mt19937_64(rng.next()));
    return Tensor(s, std::move(v));
  };

  for (auto [s, d, p] : {std::tuple{1, 1, 1}, {2, 1, 1}, {1, 2, 2}, {2, 2, 0}}) {
    op_case("conv2d s=" + std::to_string(s) + " d=" + std::to_string(d) + " p=" + std::to_string(p),
            [=](const std::vector<Tensor>& x) { return conv2d(x[0], x[1], x[2], {s, d, p}); },
            {T({2, 2, 7, 6}), T({3, 2, 3, 3}), T({1, 3, 1, 1})});
  }
  op_case("conv2d 1x1", [](const std::vector<Tensor>& x) { return conv2d(x[0], x[1], std::nullopt); },
          {T({2, 3, 4, 4}), T({2, 3, 1, 1})});
  op_case("avg_pool2", [](const std::vector<Tensor>& x) { return avg_pool2(x[0]); }, {T({2, 2, 4, 6})});
  op_case("max_pool2", [](const std::vector<Tensor>& x) { return max_pool2(x[0]); }, {spread({2, 2, 4, 6})});
  op_case("avg_pool2_stride1", [](const std::vector<Tensor>& x) { return avg_pool2_stride1(x[0]); }, {T({1, 2, 5, 4})});
  op_case("nearest_upsample2", [](const std::vector<Tensor>& x) { return nearest_upsample2(x[0]); }, {T({1, 2, 3, 4})});
  op_case("nearest_subsample2", [](const std::vector<Tensor>& x) { return nearest_subsample2(x[0]); }, {T({1, 2, 4, 6})});
  op_case("pixel_shuffle", [](const std::vector<Tensor>& x) { return pixel_shuffle(x[0], 2); }, {T({1, 8, 3, 2})});
  op_case("relu", [](const std::vector<Tensor>& x) { return relu(x[0]); }, {spread({1, 3, 4, 4})});
  op_case("add", [](const std::vector<Tensor>& x) { return add(x[0], x[1]); }, {T({1, 2, 3, 3}), T({1, 2, 3, 3})});
  op_case("sub", [](const std::vector<Tensor>& x) { return sub(x[0], x[1]); }, {T({1, 2, 3, 3}), T({1, 2, 3, 3})});
  op_case("mul", [](const std::vector<Tensor>& x) { return mul(x[0], x[1]); }, {T({1, 2, 3, 3}), T({1, 2, 3, 3})});
  op_case("scale", [](const std::vector<Tensor>& x) { return scale(x[0], -2.5); }, {T({1, 2, 3, 3})});
  op_case("concat_channels", [](const std::vector<Tensor>& x) { return concat_channels(x); },
          {T({2, 1, 3, 3}), T({2, 3, 3, 3})});
  op_case("slice_channels", [](const std::vector<Tensor>& x) { return slice_channels(x[0], 1, 2); }, {T({2, 4, 3, 3})});
  op_case("sum", [](const std::vector<Tensor>& x) { return sum(x[0]); }, {T({2, 2, 3, 3})});
  op_case("l1_loss", [](const std::vector<Tensor>& x) { return l1_loss(x[0], x[1]); },
          {spread({1, 2, 3, 3}), Tensor::zeros({1, 2, 3, 3})});

  const UnitOptions f64{3, DType::kF64};
  for (Variant v : all_variants()) {
    const int s = v == Variant::kStandard ? 1 : v == Variant::kMultigrid ? 3 : 2;
    c.guarded(std::string("grad unit ") + variant_name(v), [&] {
      const std::vector<std::int64_t> widths(static_cast<std::size_t>(s), 2);
      const MSConvUnit unit = build_variant(v, s, widths, rng, f64);
      record(std::string("grad unit ") + variant_name(v), grad_check_layer(unit, random_features(widths, 1, 8, 8, rng)));
    });
  }
  for (int s : {3, 4}) {
    c.guarded("grad multi-branch ms3 S=" + std::to_string(s), [&] {
      const MSConvUnit unit = build_multibranch_ms3(s, 2 * s, rng, f64);
      record("grad multi-branch ms3 S=" + std::to_string(s),
             grad_check_layer(unit, random_features(unit.spec().in_channels, 1, 8, 8, rng)));
    });
  }
  c.guarded("grad FirstConv/LastConv S=3", [&] {
    const std::vector<std::int64_t> widths{2, 2, 2};
    const FirstConv first(2, widths, rng, f64);
    const LastConv last(widths, 2, rng, f64);
    const GradCheck a = grad_check_layer(first, ScaleFeatures::single(T({1, 2, 8, 8})));
    const GradCheck b = grad_check_layer(last, random_features(widths, 1, 8, 8, rng));
    record("grad FirstConv/LastConv S=3", {std::max(a.max_rel_error, b.max_rel_error), a.checked + b.checked});
  });
  for (char id : {'a', 'b', 'c', 'd', 'e'}) {
    c.guarded(std::string("grad pilot case ") + id, [&] {
      const PilotUnit unit = build_pilot_case(id, 2, 2, rng, DType::kF64);
      record(std::string("grad pilot case ") + id, grad_check_layer(unit, ScaleFeatures::single(T({1, 2, 8, 8}))));
    });
  }
  c.guarded("shared weight grad equals sum of per-site gradients", [&] {
    const std::vector<std::int64_t> widths{2, 2};
    const MSConvUnit shared = build_variant(Variant::kMs3, 2, widths, rng, f64);
    // Same values, but each diagonal site gets its own copy.
    TransformSpec spec = shared.spec();
    std::vector<Parameter> sites;
    for (std::size_t i = 0; i < 2; ++i) {
      Conv& conv = spec.entries[i][i].conv;
      conv.weight = Parameter(conv.weight.value());
      conv.bias = Parameter(conv.bias.value());
      sites.push_back(conv.weight);
    }
    const MSConvUnit unshared(spec, false);
    const ScaleFeatures x = random_features(widths, 1, 8, 8, rng);
    const auto run = [&](const MSConvUnit& u) {
      return [&u](const std::vector<Tensor>& in, Tape* tape) { return u.forward(ScaleFeatures(in), tape).groups; };
    };
    // Analytic gradient of the shared weight.
    const Parameter w = shared.spec().entries[0][0].conv.weight;
    const GradCheck gs = grad_check(run(shared), x.groups, {w});
    const std::vector<double> g_shared(w.grad().begin(), w.grad().end());
    // Finite differences at each site of the unshared copy, summed.
    std::vector<double> fd_sum(g_shared.size(), 0.0);
    Rng probe_rng(7);
    std::vector<Tensor> probes;
    for (const Tensor& o : unshared.forward(x, nullptr).groups) probes.push_back(random_tensor(o.shape(), probe_rng));
    const auto objective = [&] {
      const auto outs = unshared.forward(x, nullptr).groups;
      double t = 0.0;
      for (std::size_t k = 0; k < outs.size(); ++k)
        for (std::size_t i = 0; i < outs[k].data().size(); ++i) t += outs[k].data()[i] * probes[k].data()[i];
      return t;
    };
    for (Parameter& p : sites) {
      const Tensor orig = p.value();
      for (std::size_t i = 0; i < fd_sum.size(); ++i) {
        p.assign(with_element(orig, i, orig.data()[i] + kGradStep));
        const double up = objective();
        p.assign(with_element(orig, i, orig.data()[i] - kGradStep));
        const double down = objective();
        p.assign(orig);
        fd_sum[i] += (up - down) / (2.0 * kGradStep);
      }
    }
    double worst = gs.max_rel_error;
    for (std::size_t i = 0; i < fd_sum.size(); ++i) worst = std::max(worst, rel_error(g_shared[i], fd_sum[i]));
    c.check("shared weight grad equals sum of per-site gradients", worst < kGradTolerance,
            "max rel err " + fmt("%.3g", worst));
  });
}

void equiv_suite(Collector& c) {
  Rng rng(31);
  c.guarded("unfold_standard reproduces conv2d", [&] {
    double worst = 0.0;
    int cases = 0;
    for (int t = 0; t < 24; ++t) {
      const std::int64_t cin = 1 + static_cast<std::int64_t>(rng.below(6));
      const std::int64_t cout = 1 + static_cast<std::int64_t>(rng.below(6));
      const int k = t % 3 == 0 ? 1 : t % 3 == 1 ? 3 : 5;
      const std::int64_t h = 3 + static_cast<std::int64_t>(rng.below(6)), w = 3 + static_cast<std::int64_t>(rng.below(6));
      const auto partition = [&](std::int64_t total) {
        std::vector<std::int64_t> p;
        std::int64_t left = total;
        const std::int64_t parts = 1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(total)));
        for (std::int64_t i = 0; i < parts - 1 && left > 1; ++i) {
          const std::int64_t take = 1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(left - 1)));
          p.push_back(take);
          left -= take;
        }
        p.push_back(left);
        return p;
      };
      auto pin = partition(cin), pout = partition(cout);
      const std::size_t groups = std::min(pin.size(), pout.size());
      // Equal group counts: merge the tail of the longer partition.
      const auto fold = [&](std::vector<std::int64_t>& p) {
        while (p.size() > groups) {
          p[groups - 1] += p.back();
          p.pop_back();
        }
      };
      fold(pin);
      fold(pout);
      const Parameter wt(random_tensor({cout, cin, k, k}, rng));
      const Parameter b(random_tensor({1, cout, 1, 1}, rng));
      const Tensor x = random_tensor({2, cin, h, w}, rng);
      const MSConvUnit unit = unfold_standard(wt, b, pin, pout);
      const Tensor got = concat_groups(unit.forward(split_channels(x, pin), nullptr));
      worst = std::max(worst, max_abs_diff(got, conv2d(x, wt.value(), b.value(), {1, 1, (k - 1) / 2})));
      ++cases;
    }
    c.check("unfold_standard reproduces conv2d", worst <= 1e-12,
            std::to_string(cases) + " cases, max dev " + fmt("%.3g", worst));
  });
  c.guarded("rearrangement identity D2-W_d1-U2 == W_d2-D2-U2", [&] {
    double worst = 0.0, worst_up = 0.0;
    int cases = 0;
    for (auto [h, w] : {std::pair<std::int64_t, std::int64_t>{8, 8}, {16, 16}, {8, 12}}) {
      for (int k : {1, 3, 5}) {
        for (std::int64_t ch : {1, 3}) {
          const Parameter wt(random_tensor({2, ch, k, k}, rng));
          const Tensor x = random_tensor({2, ch, h, w}, rng);
          worst = std::max(worst, check_rearrangement_identity(wt, x));
          worst_up = std::max(worst_up, check_rearrangement_identity_up(wt, x));
          ++cases;
        }
      }
    }
    c.check("rearrangement identity D2-W_d1-U2 == W_d2-D2-U2", worst <= 1e-12 && worst_up <= 1e-12,
            std::to_string(cases) + " cases, max dev " + fmt("%.3g", std::max(worst, worst_up)));
  });
  c.guarded("pilot case d equals D2-W_d1-U2", [&] {
    const PilotUnit d = build_pilot_case('d', 3, 3, rng, DType::kF64);
    Conv w1 = d.branches()[0].atoms[0].conv;
    w1.dilation = 1;
    const PipelineFn alt{{Atom::d2(), Atom::conv_atom(w1), Atom::u2()}};
    const Tensor x = random_tensor({1, 3, 12, 12}, rng);
    const double dev = max_abs_diff(d.forward(ScaleFeatures::single(x), nullptr)[0], alt.apply(x, nullptr));
    c.check("pilot case d equals D2-W_d1-U2", dev <= 1e-12, "max dev " + fmt("%.3g", dev));
  });
  c.guarded("ms2/octave match compositional oracle", [&] {
    double worst = 0.0;
    for (Variant v : {Variant::kMs2, Variant::kOctave}) {
      const std::vector<std::int64_t> widths{3, 2};
      const MSConvUnit unit = build_variant(v, 2, widths, rng, {3, DType::kF64});
      const auto& e = unit.spec().entries;
      const ScaleFeatures x = random_features(widths, 2, 8, 8, rng);
      const auto conv = [](const Conv& cv, const Tensor& t) {
        return oracle::conv2d_direct(t, cv.weight.value(), &cv.bias.value(), 1, 1, 1);
      };
      const Tensor yh = add(conv(e[0][0].conv, x[0]), oracle::upsample2(conv(e[0][1].conv, x[1])));
      const Tensor yl = add(conv(e[1][0].conv, oracle::avg_pool2(x[0])), conv(e[1][1].conv, x[1]));
      const ScaleFeatures y = unit.forward(x, nullptr);
      worst = std::max({worst, max_abs_diff(y[0], yh), max_abs_diff(y[1], yl)});
    }
    c.check("ms2/octave match compositional oracle", worst <= 1e-12, "max dev " + fmt("%.3g", worst));
  });
  c.guarded("ms2_no_hl low branch ignores the high input", [&] {
    const std::vector<std::int64_t> widths{2, 2};
    MSConvUnit unit = build_variant(Variant::kMs2NoHl, 2, widths, rng, {3, DType::kF64});
    const ScaleFeatures x = random_features(widths, 1, 8, 8, rng);
    ScaleFeatures x2 = x;
    x2.groups[0] = random_tensor(x[0].shape(), rng);
    const Tensor ll = unit.apply_entry(1, 1, x[1], nullptr);
    const double dev = std::max(max_abs_diff(unit.forward(x, nullptr)[1], ll), max_abs_diff(unit.forward(x2, nullptr)[1], ll));
    c.check("ms2_no_hl low branch ignores the high input", dev == 0.0, "max dev " + fmt("%.3g", dev));
  });
  c.guarded("unfolded baseline network matches the baseline", [&] {
    ModelConfig cfg;
    cfg.num_blocks = 2;
    cfg.width = 8;
    cfg.dtype = DType::kF64;
    cfg.image_residual = false;
    cfg.seed = 5;
    const Network net = build_network(cfg);
    const std::vector<std::int64_t> split{4, 4};
    const Network unfolded = net.map_body_units([&](const LayerPtr& u) -> LayerPtr {
      const auto& unit = dynamic_cast<const MSConvUnit&>(*u);
      const Conv& conv = unit.spec().entries[0][0].conv;
      struct Folded : ScaleLayer {
        MSConvUnit inner;
        std::vector<std::int64_t> split;
        ScaleFeatures forward(const ScaleFeatures& x, Tape* tape) const override {
          return ScaleFeatures::single(concat_groups(inner.forward(split_channels(x[0], split), tape)));
        }
        void conv_sites(const std::string& n, std::int64_t h, std::int64_t w, std::vector<ConvSite>& o) const override {
          inner.conv_sites(n, h, w, o);
        }
        void named_parameters(const std::string& p, std::vector<NamedParameter>& o) const override {
          inner.named_parameters(p, o);
        }
      };
      auto f = std::make_shared<Folded>();
      f->inner = unfold_standard(conv.weight, conv.bias, split);
      f->split = split;
      return f;
    });
    const Tensor x = random_tensor({1, 3, 6, 6}, rng, 0, 1);
    const double dev = max_abs_diff(net.forward_sr(x), unfolded.forward_sr(x));
    c.check("unfolded baseline network matches the baseline", dev <= 1e-10, "max dev " + fmt("%.3g", dev));
  });
}

}  // namespace

std::vector<CheckResult> run_verify_suite(std::string_view suite) {
  std::vector<CheckResult> all;
  const auto run = [&](const char* name, void (*fn)(Collector&)) {
    if (suite != "all" && suite != name) return;
    Collector c(name);
    fn(c);
    for (auto& r : c.take()) all.push_back(std::move(r));
  };
  if (suite != "all" && suite != "core" && suite != "grad" && suite != "equiv") {
    throw std::invalid_argument("unknown suite '" + std::string(suite) + "' (expected core|grad|equiv|all)");
  }
  run("core", core_suite);
  run("grad", grad_suite);
  run("equiv", equiv_suite);
  return all;
}

}  // namespace msconv
