#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msconv/layer.hpp"

namespace msconv {

// Counting convention: one FLOP per convolution multiply-add. Bias adds,
// activations, pooling and resampling cost nothing.
inline constexpr const char* kFlopConvention =
    "flops = conv multiply-adds per sample; bias, activation, pooling and resampling excluded";

struct ComplexityRow {
  std::string name;
  int scale = 0;
  std::int64_t flops = 0;
  // A shared parameter is charged to its first use; later uses report 0.
  std::int64_t params = 0;
};

struct ComplexityReport {
  std::int64_t input_h = 0;
  std::int64_t input_w = 0;
  std::vector<ComplexityRow> rows;
  std::int64_t total_flops = 0;
  std::int64_t total_params = 0;
};

ComplexityReport analyze(const ScaleLayer& net, std::int64_t h, std::int64_t w,
                         const std::string& name = "net");

std::int64_t count_params(const ScaleLayer& net);
std::int64_t count_flops(const ScaleLayer& net, std::int64_t h, std::int64_t w);

struct InputSize {
  std::int64_t h = 0;
  std::int64_t w = 0;
  bool operator==(const InputSize&) const = default;
};

// FLOPs are linear in pixel count, so the target fixes a pixel count P*.
// When P* is an integer the most square factorization h <= w with both
// extents multiples of `align` is returned; otherwise the nearest square-ish
// size. Throws when no positive size qualifies.
InputSize calibrate_input_size(const ScaleLayer& net, double target_flops, std::int64_t align = 1);

std::string format_text(const ComplexityReport& report);
std::string format_json(const ComplexityReport& report);

}  // namespace msconv
