#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msconv/autograd.hpp"
#include "msconv/random.hpp"
#include "msconv/tensor.hpp"

namespace msconv {

// Feature maps grouped by scale. Group i sits at spatial level levels[i],
// i.e. its extent is the level-0 extent divided by 2^levels[i].
struct ScaleFeatures {
  std::vector<Tensor> groups;

  ScaleFeatures() = default;
  explicit ScaleFeatures(std::vector<Tensor> g) : groups(std::move(g)) {}
  static ScaleFeatures single(Tensor t) { return ScaleFeatures({std::move(t)}); }

  std::size_t size() const { return groups.size(); }
  const Tensor& operator[](std::size_t i) const { return groups.at(i); }
  std::vector<std::int64_t> channels() const;
};

// One evaluation of a convolution inside a layer, at a concrete input size.
struct ConvSite {
  std::string name;
  int scale = 0;
  std::int64_t c_in = 0;
  std::int64_t c_out = 0;
  int kernel = 1;
  std::int64_t out_h = 0;
  std::int64_t out_w = 0;
  Parameter weight;
  Parameter bias;

  std::int64_t flops() const { return c_out * c_in * kernel * kernel * out_h * out_w; }
};

// Same-padded stride-1 convolution with its parameters.
struct Conv {
  Parameter weight;  // (c_out, c_in, k, k)
  Parameter bias;    // (1, c_out, 1, 1); may be undefined
  int dilation = 1;

  // Fan-in scaled uniform weights, zero bias.
  static Conv init(std::int64_t c_in, std::int64_t c_out, int kernel, Rng& rng,
                   DType dtype = DType::kF32, int dilation = 1, bool with_bias = true);
  static Conv zero_init(std::int64_t c_in, std::int64_t c_out, int kernel,
                        DType dtype = DType::kF32, bool with_bias = true);

  bool defined() const { return weight.defined(); }
  std::int64_t c_in() const { return weight.shape().c; }
  std::int64_t c_out() const { return weight.shape().n; }
  int kernel() const { return static_cast<int>(weight.shape().h); }
  int padding() const { return dilation * (kernel() - 1) / 2; }

  Tensor operator()(const Tensor& x, Tape* tape) const;
  ConvSite site(std::string name, int scale, std::int64_t h, std::int64_t w) const;
  void collect(const std::string& prefix, std::vector<NamedParameter>& out) const;
};

// A module mapping ScaleFeatures to ScaleFeatures.
class ScaleLayer {
 public:
  virtual ~ScaleLayer() = default;

  virtual ScaleFeatures forward(const ScaleFeatures& x, Tape* tape) const = 0;
  // Appends every conv evaluation for an input whose level-0 extent is h x w.
  virtual void conv_sites(const std::string& name, std::int64_t h, std::int64_t w,
                          std::vector<ConvSite>& out) const = 0;
  // Parameters in use order; shared parameters appear once per use.
  virtual void named_parameters(const std::string& prefix,
                                std::vector<NamedParameter>& out) const = 0;
};

// Extent at a level, rejecting sizes that do not divide.
std::int64_t extent_at_level(std::int64_t extent, int level);

}  // namespace msconv
