#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msconv/layer.hpp"

namespace msconv {

enum class EntryKind { kZero, kIdentity, kConv, kConvThenUp, kUpThenConv, kDownThenConv };
enum class DownKind { kAvg, kMax, kNearest };

const char* entry_kind_name(EntryKind kind);
const char* down_kind_name(DownKind kind);

// One cell of the transformation matrix. Resampling entries compose `steps`
// factor-2 stages with a single convolution.
struct TransformEntry {
  EntryKind kind = EntryKind::kZero;
  int steps = 0;
  DownKind down = DownKind::kAvg;
  Conv conv;

  static TransformEntry zero();
  static TransformEntry identity();
  static TransformEntry plain(Conv c);
  static TransformEntry conv_then_up(Conv c, int steps);
  static TransformEntry up_then_conv(Conv c, int steps);
  static TransformEntry down_then_conv(DownKind down, Conv c, int steps);

  bool has_conv() const { return conv.defined(); }
  Tensor apply(const Tensor& x, Tape* tape) const;
  std::string describe() const;
};

// entries[i][j] carries input scale j to output scale i.
struct TransformSpec {
  std::vector<std::vector<TransformEntry>> entries;
  std::vector<std::int64_t> in_channels;
  std::vector<std::int64_t> out_channels;
  // Spatial level of scale i (defaults to i). Inputs and outputs of the same
  // index share a level.
  std::vector<int> levels;

  std::size_t scales() const { return entries.size(); }
  int level(std::size_t i) const { return levels.empty() ? static_cast<int>(i) : levels[i]; }
  // Throws ShapeError when the matrix is not total or channels do not close.
  void validate() const;
};

class MSConvUnit : public ScaleLayer {
 public:
  MSConvUnit() = default;
  // With shared = true every diagonal conv must alias one Parameter.
  MSConvUnit(TransformSpec spec, bool shared);

  const TransformSpec& spec() const { return spec_; }
  bool shared() const { return shared_; }
  std::size_t scales() const { return spec_.scales(); }

  ScaleFeatures forward(const ScaleFeatures& x, Tape* tape) const override;
  void conv_sites(const std::string& name, std::int64_t h, std::int64_t w,
                  std::vector<ConvSite>& out) const override;
  void named_parameters(const std::string& prefix, std::vector<NamedParameter>& out) const override;

  // Entry (i, j) applied to an input group on its own.
  Tensor apply_entry(std::size_t i, std::size_t j, const Tensor& xj, Tape* tape) const;

 private:
  TransformSpec spec_;
  bool shared_ = false;
};

enum class Variant {
  kStandard,
  kUnet,
  kOctave,
  kMultigrid,
  kMs,
  kMs2,
  kMs2NoLh,
  kMs2NoHl,
  kMs3,
  kMs3Large,
};

Variant parse_variant(std::string_view name);
const char* variant_name(Variant v);
std::span<const Variant> all_variants();
// Variants whose diagonal is one shared Parameter.
bool variant_shares_diagonal(Variant v);

// Widths summing to `total` (or to S*floor(total/S) when `equal`), with any
// remainder on scale 0.
std::vector<std::int64_t> split_widths(std::int64_t total, int scales, bool equal);

struct UnitOptions {
  int kernel = 3;
  DType dtype = DType::kF32;
};

MSConvUnit build_variant(Variant v, int scales, std::span<const std::int64_t> in_widths,
                         std::span<const std::int64_t> out_widths, Rng& rng, UnitOptions opts = {});
MSConvUnit build_variant(Variant v, int scales, std::span<const std::int64_t> widths, Rng& rng,
                         UnitOptions opts = {});

// All-pairs MS3 unit over an equal split of total_channels, 1 <= S <= 4.
MSConvUnit build_multibranch_ms3(int scales, std::int64_t total_channels, Rng& rng,
                                 UnitOptions opts = {});

// A standard conv expressed as a full matrix over same-level channel groups.
// The bias is carried by the column-0 entries.
MSConvUnit unfold_standard(const Parameter& weight, const Parameter& bias,
                           std::span<const std::int64_t> in_split,
                           std::span<const std::int64_t> out_split);
MSConvUnit unfold_standard(const Parameter& weight, const Parameter& bias,
                           std::span<const std::int64_t> split);

ScaleFeatures split_channels(const Tensor& x, std::span<const std::int64_t> widths);
Tensor concat_groups(const ScaleFeatures& y);

// Full-resolution features to S scales: scale i average-pools i times, then
// applies its own conv.
class FirstConv : public ScaleLayer {
 public:
  FirstConv() = default;
  FirstConv(std::int64_t c_in, std::span<const std::int64_t> widths, Rng& rng,
            UnitOptions opts = {});

  std::size_t scales() const { return convs_.size(); }
  const std::vector<Conv>& convs() const { return convs_; }

  ScaleFeatures forward(const ScaleFeatures& x, Tape* tape) const override;
  void conv_sites(const std::string& name, std::int64_t h, std::int64_t w,
                  std::vector<ConvSite>& out) const override;
  void named_parameters(const std::string& prefix, std::vector<NamedParameter>& out) const override;

 private:
  std::vector<Conv> convs_;
};

// S scales back to one: per-scale conv to c_out, nearest-upsample i times,
// then sum.
class LastConv : public ScaleLayer {
 public:
  LastConv() = default;
  LastConv(std::span<const std::int64_t> widths, std::int64_t c_out, Rng& rng,
           UnitOptions opts = {});

  std::size_t scales() const { return convs_.size(); }
  const std::vector<Conv>& convs() const { return convs_; }

  ScaleFeatures forward(const ScaleFeatures& x, Tape* tape) const override;
  void conv_sites(const std::string& name, std::int64_t h, std::int64_t w,
                  std::vector<ConvSite>& out) const override;
  void named_parameters(const std::string& prefix, std::vector<NamedParameter>& out) const override;

 private:
  std::vector<Conv> convs_;
};

ScaleFeatures split_to_scales(const FirstConv& first, const Tensor& x, Tape* tape = nullptr);
Tensor aggregate_to_single(const LastConv& last, const ScaleFeatures& y, Tape* tape = nullptr);

}  // namespace msconv
