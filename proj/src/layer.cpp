#include "msconv/layer.hpp"

#include <cmath>

#include "msconv/ops.hpp"

namespace msconv {

std::vector<std::int64_t> ScaleFeatures::channels() const {
  std::vector<std::int64_t> c;
  c.reserve(groups.size());
  for (const Tensor& g : groups) c.push_back(g.shape().c);
  return c;
}

std::int64_t extent_at_level(std::int64_t extent, int level) {
  const std::int64_t f = std::int64_t{1} << level;
  if (extent % f != 0) {
    throw ShapeError("extent " + std::to_string(extent) + " not divisible by " + std::to_string(f));
  }
  return extent / f;
}

Conv Conv::init(std::int64_t c_in, std::int64_t c_out, int kernel, Rng& rng, DType dtype,
                int dilation, bool with_bias) {
  if (c_in <= 0 || c_out <= 0 || kernel <= 0 || kernel % 2 == 0) {
    throw ShapeError("conv needs positive channels and an odd kernel");
  }
  const Shape ws{c_out, c_in, kernel, kernel};
  const double bound = 1.0 / std::sqrt(static_cast<double>(c_in * kernel * kernel));
  std::vector<double> v(static_cast<std::size_t>(ws.numel()));
  for (double& e : v) e = rng.uniform(-bound, bound);
  Conv c;
  c.weight = Parameter(Tensor(ws, std::move(v), dtype));
  if (with_bias) c.bias = Parameter(Tensor::zeros({1, c_out, 1, 1}, dtype));
  c.dilation = dilation;
  return c;
}

Conv Conv::zero_init(std::int64_t c_in, std::int64_t c_out, int kernel, DType dtype, bool with_bias) {
  Conv c;
  c.weight = Parameter(Tensor::zeros({c_out, c_in, kernel, kernel}, dtype));
  if (with_bias) c.bias = Parameter(Tensor::zeros({1, c_out, 1, 1}, dtype));
  return c;
}

Tensor Conv::operator()(const Tensor& x, Tape* tape) const {
  std::optional<Tensor> b;
  if (bias.defined()) b = use(bias, tape);
  return conv2d(x, use(weight, tape), b, {1, dilation, padding()});
}

ConvSite Conv::site(std::string name, int scale, std::int64_t h, std::int64_t w) const {
  return {std::move(name), scale, c_in(), c_out(), kernel(), h, w, weight, bias};
}

void Conv::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

}  // namespace msconv
