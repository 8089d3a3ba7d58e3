#pragma once

#include "msconv/tensor.hpp"

namespace msconv {

// Cubic convolution kernel with a = -0.5.
double cubic_kernel(double x);

// Separable bicubic resize of every (n, c) plane. Output extents are
// round(extent * scale). Downscaling widens the kernel by 1/scale
// (antialiasing); borders mirror symmetrically. Not differentiable.
Tensor bicubic_resize(const Tensor& img, double scale);

}  // namespace msconv
