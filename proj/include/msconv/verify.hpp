#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "msconv/ops.hpp"
#include "msconv/random.hpp"
#include "msconv/unified_conv.hpp"

namespace msconv {

// Straightforward reference implementations, written without sharing code
// with the optimized operators.
namespace oracle {

// Nested-loop convolution. `mults`, when given, receives the number of
// multiply-adds performed, padded taps included.
Tensor conv2d_direct(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int dilation, int padding,
                     std::int64_t* mults = nullptr);
Tensor avg_pool2(const Tensor& x);
Tensor max_pool2(const Tensor& x);
Tensor upsample2(const Tensor& x);
Tensor subsample2(const Tensor& x);
Tensor pixel_shuffle(const Tensor& x, int r);
double psnr_y(const Tensor& sr, const Tensor& hr, int border);
// Separable bicubic via explicit kernel sums over every source pixel.
Tensor bicubic_resize(const Tensor& img, double scale);

}  // namespace oracle

Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0, DType dtype = DType::kF64);
double max_abs_diff(const Tensor& a, const Tensor& b);

struct GradCheck {
  double max_rel_error = 0.0;
  std::int64_t checked = 0;
};

// Relative error per element: |a - n| / max(|a|, |n|, 1e-6).
inline constexpr double kGradStep = 1e-5;
inline constexpr double kGradTolerance = 1e-4;

using MultiFn = std::function<std::vector<Tensor>(const std::vector<Tensor>& inputs, Tape* tape)>;

// Compares analytic gradients of L = sum_k sum(out_k * R_k), for fixed random
// R_k, against central differences on every element of every input tensor
// and parameter. Shared parameters are perturbed once, so they see all of
// their use sites.
GradCheck grad_check(const MultiFn& fn, const std::vector<Tensor>& inputs, const std::vector<Parameter>& params,
                     std::uint64_t seed = 7);

// All inputs and parameters of a layer.
GradCheck grad_check_layer(const ScaleLayer& layer, const ScaleFeatures& x, std::uint64_t seed = 7);

struct CheckResult {
  std::string suite;
  std::string name;
  bool ok = false;
  std::string detail;
};

// Suites: core, grad, equiv, all.
std::vector<CheckResult> run_verify_suite(std::string_view suite);

}  // namespace msconv
