#pragma once

#include <optional>
#include <span>
#include <vector>

#include "msconv/autograd.hpp"
#include "msconv/tensor.hpp"

namespace msconv {

struct ConvArgs {
  int stride = 1;
  int dilation = 1;
  int padding = 0;
};

// Output extent of a convolution along one axis.
std::int64_t conv_out_extent(std::int64_t in, int kernel, const ConvArgs& args);

// Zero-padded cross-correlation. w is (C_out, C_in, k, k), bias is (1, C_out, 1, 1).
Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias,
              const ConvArgs& args = {});

Tensor avg_pool2(const Tensor& x);
// Ties go to the first element of the 2x2 block in row-major order.
Tensor max_pool2(const Tensor& x);
// 2x2 mean over a stride-1 sliding window; the bottom/right border reads zeros.
Tensor avg_pool2_stride1(const Tensor& x);
Tensor nearest_upsample2(const Tensor& x);
// Keeps element (2i, 2j) of every 2x2 block.
Tensor nearest_subsample2(const Tensor& x);
Tensor pixel_shuffle(const Tensor& x, int r);

Tensor relu(const Tensor& x);
Tensor add(const Tensor& x, const Tensor& y);
Tensor sub(const Tensor& x, const Tensor& y);
Tensor mul(const Tensor& x, const Tensor& y);
Tensor scale(const Tensor& x, double a);

Tensor concat_channels(std::span<const Tensor> parts);
Tensor slice_channels(const Tensor& x, std::int64_t start, std::int64_t count);

// Scalar reductions, shape (1, 1, 1, 1).
Tensor sum(const Tensor& x);
Tensor l1_loss(const Tensor& pred, const Tensor& target);

}  // namespace msconv
