#include "msconv/resize.hpp"

#include <cmath>
#include <vector>

#include "msconv/parallel.hpp"

namespace msconv {

double cubic_kernel(double x) {
  constexpr double a = -0.5;
  const double ax = std::abs(x);
  if (ax <= 1.0) return ((a + 2.0) * ax - (a + 3.0)) * ax * ax + 1.0;
  if (ax < 2.0) return (((ax - 5.0) * ax + 8.0) * ax - 4.0) * a;
  return 0.0;
}

namespace {

struct Tap {
  std::int64_t src;
  double weight;
};

std::int64_t mirror(std::int64_t i, std::int64_t n) {
  const std::int64_t period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

// taps[o] lists the normalized source weights for output index o.
std::vector<std::vector<Tap>> axis_taps(std::int64_t in, std::int64_t out, double scale) {
  const double stretch = scale < 1.0 ? scale : 1.0;
  const double support = 2.0 / stretch;
  std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(out));
  for (std::int64_t o = 0; o < out; ++o) {
    const double u = (static_cast<double>(o) + 0.5) / scale - 0.5;
    const auto lo = static_cast<std::int64_t>(std::floor(u - support));
    const auto hi = static_cast<std::int64_t>(std::ceil(u + support));
    double total = 0.0;
    auto& row = taps[static_cast<std::size_t>(o)];
    for (std::int64_t i = lo; i <= hi; ++i) {
      const double w = cubic_kernel((u - static_cast<double>(i)) * stretch);
      if (w == 0.0) continue;
      row.push_back({mirror(i, in), w});
      total += w;
    }
    for (Tap& t : row) t.weight /= total;
  }
  return taps;
}

}  // namespace

Tensor bicubic_resize(const Tensor& img, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ShapeError("resize scale must be positive");
  const Shape s = img.shape();
  const auto oh = static_cast<std::int64_t>(std::llround(static_cast<double>(s.h) * scale));
  const auto ow = static_cast<std::int64_t>(std::llround(static_cast<double>(s.w) * scale));
  if (oh < 1 || ow < 1 || s.h < 1 || s.w < 1) throw ShapeError("resize of " + s.str() + " is degenerate");
  const auto th = axis_taps(s.h, oh, scale);
  const auto tw = axis_taps(s.w, ow, scale);
  const auto src = img.data();
  std::vector<double> out(static_cast<std::size_t>(s.n * s.c * oh * ow));
  parallel_for(s.n * s.c, [&](std::int64_t p) {
    std::vector<double> mid(static_cast<std::size_t>(s.h * ow));
    const double* in = src.data() + p * s.h * s.w;
    for (std::int64_t y = 0; y < s.h; ++y) {
      for (std::int64_t x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (const Tap& t : tw[static_cast<std::size_t>(x)]) acc += t.weight * in[y * s.w + t.src];
        mid[static_cast<std::size_t>(y * ow + x)] = acc;
      }
    }
    double* dst = out.data() + p * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (const Tap& t : th[static_cast<std::size_t>(y)]) acc += t.weight * mid[static_cast<std::size_t>(t.src * ow + x)];
        dst[y * ow + x] = acc;
      }
    }
  });
  return Tensor({s.n, s.c, oh, ow}, std::move(out), img.dtype());
}

}  // namespace msconv
