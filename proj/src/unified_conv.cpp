#include "msconv/unified_conv.hpp"

#include <array>
#include <numeric>

#include "msconv/ops.hpp"

namespace msconv {

namespace {

std::string cell(std::size_t i, std::size_t j) {
  return "e" + std::to_string(i) + std::to_string(j);
}

Tensor up_times(Tensor t, int steps) {
  for (int s = 0; s < steps; ++s) t = nearest_upsample2(t);
  return t;
}

Tensor down_once(const Tensor& t, DownKind kind) {
  switch (kind) {
    case DownKind::kAvg: return avg_pool2(t);
    case DownKind::kMax: return max_pool2(t);
    case DownKind::kNearest: return nearest_subsample2(t);
  }
  throw std::logic_error("bad down kind");
}

}  // namespace

const char* entry_kind_name(EntryKind kind) {
  switch (kind) {
    case EntryKind::kZero: return "zero";
    case EntryKind::kIdentity: return "identity";
    case EntryKind::kConv: return "conv";
    case EntryKind::kConvThenUp: return "conv_then_up";
    case EntryKind::kUpThenConv: return "up_then_conv";
    case EntryKind::kDownThenConv: return "down_then_conv";
  }
  return "?";
}

const char* down_kind_name(DownKind kind) {
  switch (kind) {
    case DownKind::kAvg: return "avg";
    case DownKind::kMax: return "max";
    case DownKind::kNearest: return "nearest";
  }
  return "?";
}

TransformEntry TransformEntry::zero() { return {}; }

TransformEntry TransformEntry::identity() {
  TransformEntry e;
  e.kind = EntryKind::kIdentity;
  return e;
}

TransformEntry TransformEntry::plain(Conv c) {
  TransformEntry e;
  e.kind = EntryKind::kConv;
  e.conv = std::move(c);
  return e;
}

TransformEntry TransformEntry::conv_then_up(Conv c, int steps) {
  TransformEntry e = plain(std::move(c));
  e.kind = EntryKind::kConvThenUp;
  e.steps = steps;
  return e;
}

TransformEntry TransformEntry::up_then_conv(Conv c, int steps) {
  TransformEntry e = plain(std::move(c));
  e.kind = EntryKind::kUpThenConv;
  e.steps = steps;
  return e;
}

TransformEntry TransformEntry::down_then_conv(DownKind down, Conv c, int steps) {
  TransformEntry e = plain(std::move(c));
  e.kind = EntryKind::kDownThenConv;
  e.down = down;
  e.steps = steps;
  return e;
}

Tensor TransformEntry::apply(const Tensor& x, Tape* tape) const {
  switch (kind) {
    case EntryKind::kZero: throw std::logic_error("zero entry has no value");
    case EntryKind::kIdentity: return x;
    case EntryKind::kConv: return conv(x, tape);
    case EntryKind::kConvThenUp: return up_times(conv(x, tape), steps);
    case EntryKind::kUpThenConv: return conv(up_times(x, steps), tape);
    case EntryKind::kDownThenConv: {
      Tensor t = x;
      for (int s = 0; s < steps; ++s) t = down_once(t, down);
      return conv(t, tape);
    }
  }
  throw std::logic_error("bad entry kind");
}

std::string TransformEntry::describe() const {
  std::string s = entry_kind_name(kind);
  if (has_conv()) s += "(k=" + std::to_string(conv.kernel()) + ")";
  if (kind == EntryKind::kDownThenConv) s += std::string("[") + down_kind_name(down) + "]";
  if (steps > 0) s += "x" + std::to_string(steps);
  return s;
}

void TransformSpec::validate() const {
  const std::size_t s = entries.size();
  if (s == 0) throw ShapeError("transform matrix is empty");
  if (in_channels.size() != s || out_channels.size() != s) {
    throw ShapeError("channel widths do not match the scale count");
  }
  if (!levels.empty() && levels.size() != s) throw ShapeError("levels do not match the scale count");
  for (std::size_t i = 0; i < s; ++i) {
    if (entries[i].size() != s) throw ShapeError("transform matrix is not square");
    for (std::size_t j = 0; j < s; ++j) {
      const TransformEntry& e = entries[i][j];
      const std::string where = " at entry (" + std::to_string(i) + "," + std::to_string(j) + ")";
      const int gap = level(i) - level(j);  // > 0: output is coarser
      if (e.kind == EntryKind::kZero) continue;
      if (e.kind == EntryKind::kIdentity) {
        if (gap != 0 || in_channels[j] != out_channels[i]) throw ShapeError("identity mismatch" + where);
        continue;
      }
      if (!e.has_conv()) throw ShapeError("missing conv" + where);
      if (e.conv.c_in() != in_channels[j] || e.conv.c_out() != out_channels[i]) {
        throw ShapeError("channel arithmetic does not close" + where);
      }
      const bool ok = e.kind == EntryKind::kConv
                          ? gap == 0
                          : (e.steps >= 1 && (e.kind == EntryKind::kDownThenConv ? gap : -gap) == e.steps);
      if (!ok) throw ShapeError("resampling steps do not match levels" + where);
    }
  }
}

MSConvUnit::MSConvUnit(TransformSpec spec, bool shared) : spec_(std::move(spec)), shared_(shared) {
  spec_.validate();
  if (!shared_) return;
  const Conv* first = nullptr;
  for (std::size_t i = 0; i < spec_.scales(); ++i) {
    const TransformEntry& e = spec_.entries[i][i];
    if (!e.has_conv()) throw ShapeError("shared unit needs a conv on every diagonal entry");
    if (first == nullptr) {
      first = &e.conv;
    } else if (e.conv.weight.share_id() != first->weight.share_id() ||
               e.conv.bias.defined() != first->bias.defined() ||
               (e.conv.bias.defined() && e.conv.bias.share_id() != first->bias.share_id()) ||
               e.conv.dilation != first->dilation) {
      throw ShapeError("shared unit diagonal entries do not alias one parameter");
    }
  }
}

Tensor MSConvUnit::apply_entry(std::size_t i, std::size_t j, const Tensor& xj, Tape* tape) const {
  return spec_.entries.at(i).at(j).apply(xj, tape);
}

ScaleFeatures MSConvUnit::forward(const ScaleFeatures& x, Tape* tape) const {
  const std::size_t s = spec_.scales();
  if (x.size() != s) {
    throw ShapeError("unit expects " + std::to_string(s) + " scales, got " + std::to_string(x.size()));
  }
  const Shape& ref = x[0].shape();
  const std::int64_t h0 = ref.h << spec_.level(0);
  const std::int64_t w0 = ref.w << spec_.level(0);
  for (std::size_t j = 0; j < s; ++j) {
    const Shape& sh = x[j].shape();
    if (sh.c != spec_.in_channels[j]) {
      throw ShapeError("scale " + std::to_string(j) + " has " + std::to_string(sh.c) +
                       " channels, expected " + std::to_string(spec_.in_channels[j]));
    }
    if (sh.n != ref.n || x[j].dtype() != x[0].dtype() ||
        (sh.h << spec_.level(j)) != h0 || (sh.w << spec_.level(j)) != w0) {
      throw ShapeError("scale " + std::to_string(j) + " extent " + sh.str() + " inconsistent with levels");
    }
  }
  ScaleFeatures y;
  y.groups.reserve(s);
  for (std::size_t i = 0; i < s; ++i) {
    Tensor acc;
    for (std::size_t j = 0; j < s; ++j) {
      if (spec_.entries[i][j].kind == EntryKind::kZero) continue;
      Tensor t = apply_entry(i, j, x[j], tape);
      acc = acc.empty() ? t : add(acc, t);
    }
    if (acc.empty()) {
      acc = Tensor::zeros({ref.n, spec_.out_channels[i], extent_at_level(h0, spec_.level(i)),
                           extent_at_level(w0, spec_.level(i))},
                          x[0].dtype());
    }
    y.groups.push_back(std::move(acc));
  }
  return y;
}

void MSConvUnit::conv_sites(const std::string& name, std::int64_t h, std::int64_t w,
                            std::vector<ConvSite>& out) const {
  for (std::size_t i = 0; i < spec_.scales(); ++i) {
    for (std::size_t j = 0; j < spec_.scales(); ++j) {
      const TransformEntry& e = spec_.entries[i][j];
      if (!e.has_conv()) continue;
      const int lvl = e.kind == EntryKind::kConvThenUp ? spec_.level(j) : spec_.level(i);
      out.push_back(e.conv.site(name + "." + cell(i, j), static_cast<int>(i), extent_at_level(h, lvl),
                                extent_at_level(w, lvl)));
    }
  }
}

void MSConvUnit::named_parameters(const std::string& prefix, std::vector<NamedParameter>& out) const {
  for (std::size_t i = 0; i < spec_.scales(); ++i) {
    for (std::size_t j = 0; j < spec_.scales(); ++j) {
      const TransformEntry& e = spec_.entries[i][j];
      if (e.has_conv()) e.conv.collect(prefix + "." + cell(i, j), out);
    }
  }
}

namespace {

constexpr std::array<Variant, 10> kVariants = {
    Variant::kStandard, Variant::kUnet,    Variant::kOctave,  Variant::kMultigrid, Variant::kMs,
    Variant::kMs2,      Variant::kMs2NoLh, Variant::kMs2NoHl, Variant::kMs3,       Variant::kMs3Large,
};

}  // namespace

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kStandard: return "standard";
    case Variant::kUnet: return "unet";
    case Variant::kOctave: return "octave";
    case Variant::kMultigrid: return "multigrid";
    case Variant::kMs: return "ms";
    case Variant::kMs2: return "ms2";
    case Variant::kMs2NoLh: return "ms2_no_lh";
    case Variant::kMs2NoHl: return "ms2_no_hl";
    case Variant::kMs3: return "ms3";
    case Variant::kMs3Large: return "ms3_large";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kVariants) {
    if (name == variant_name(v)) return v;
  }
  std::string known;
  for (Variant v : kVariants) known += std::string(known.empty() ? "" : "|") + variant_name(v);
  throw std::invalid_argument("unknown variant '" + std::string(name) + "' (expected " + known + ")");
}

std::span<const Variant> all_variants() { return kVariants; }

bool variant_shares_diagonal(Variant v) { return v == Variant::kMs3 || v == Variant::kMs3Large; }

std::vector<std::int64_t> split_widths(std::int64_t total, int scales, bool equal) {
  if (scales < 1 || total < scales) throw ShapeError("cannot split " + std::to_string(total) + " channels");
  std::vector<std::int64_t> w(static_cast<std::size_t>(scales), total / scales);
  if (!equal) w[0] += total % scales;
  return w;
}

MSConvUnit build_variant(Variant v, int scales, std::span<const std::int64_t> in_widths,
                         std::span<const std::int64_t> out_widths, Rng& rng, UnitOptions opts) {
  const auto s = static_cast<std::size_t>(scales);
  const auto fail = [&] {
    return std::invalid_argument(std::string("variant ") + variant_name(v) + " does not support S=" +
                                 std::to_string(scales));
  };
  if (scales < 1 || scales > 4) throw fail();
  if (in_widths.size() != s || out_widths.size() != s) throw ShapeError("width list does not match S");
  switch (v) {
    case Variant::kStandard: if (scales != 1) throw fail(); break;
    case Variant::kUnet:
    case Variant::kOctave: if (scales != 2) throw fail(); break;
    case Variant::kMultigrid: if (scales != 3) throw fail(); break;
    case Variant::kMs2NoLh:
    case Variant::kMs2NoHl: if (scales < 2) throw fail(); break;
    default: break;
  }

  TransformSpec spec;
  spec.in_channels.assign(in_widths.begin(), in_widths.end());
  spec.out_channels.assign(out_widths.begin(), out_widths.end());
  spec.entries.assign(s, std::vector<TransformEntry>(s));
  const int k = opts.kernel;
  auto conv = [&](std::size_t i, std::size_t j, int kernel) {
    return Conv::init(in_widths[j], out_widths[i], kernel, rng, opts.dtype);
  };

  const bool shared = variant_shares_diagonal(v);
  Conv diag_shared;
  if (shared) {
    for (std::size_t i = 1; i < s; ++i) {
      if (in_widths[i] != in_widths[0] || out_widths[i] != out_widths[0]) {
        throw ShapeError("shared diagonal needs equal widths on every scale");
      }
    }
    diag_shared = conv(0, 0, k);
  }

  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = 0; j < s; ++j) {
      TransformEntry& e = spec.entries[i][j];
      const int steps = static_cast<int>(i > j ? i - j : j - i);
      if (i == j) {
        if (v == Variant::kUnet && i == 0) {
          e = TransformEntry::identity();
        } else {
          e = TransformEntry::plain(shared ? diag_shared : conv(i, j, k));
        }
        continue;
      }
      switch (v) {
        case Variant::kOctave:
        case Variant::kMs2:
        case Variant::kMs2NoLh:
        case Variant::kMs2NoHl:
        case Variant::kMs3:
        case Variant::kMs3Large: {
          if ((v == Variant::kMs2NoLh && i < j) || (v == Variant::kMs2NoHl && i > j)) break;
          const int ck = v == Variant::kMs3 ? 1 : k;
          e = i < j ? TransformEntry::conv_then_up(conv(i, j, ck), steps)
                    : TransformEntry::down_then_conv(DownKind::kAvg, conv(i, j, ck), steps);
          break;
        }
        case Variant::kMultigrid:
          if (steps != 1) break;
          e = i < j ? TransformEntry::up_then_conv(conv(i, j, k), 1)
                    : TransformEntry::down_then_conv(DownKind::kMax, conv(i, j, k), 1);
          break;
        default: break;
      }
    }
  }
  return MSConvUnit(std::move(spec), shared);
}

MSConvUnit build_variant(Variant v, int scales, std::span<const std::int64_t> widths, Rng& rng,
                         UnitOptions opts) {
  return build_variant(v, scales, widths, widths, rng, opts);
}

MSConvUnit build_multibranch_ms3(int scales, std::int64_t total_channels, Rng& rng, UnitOptions opts) {
  if (scales < 1 || scales > 4) {
    throw std::invalid_argument("multi-branch ms3 supports 1 to 4 scales, got " + std::to_string(scales));
  }
  const auto widths = split_widths(total_channels, scales, true);
  return build_variant(Variant::kMs3, scales, widths, rng, opts);
}

MSConvUnit unfold_standard(const Parameter& weight, const Parameter& bias,
                           std::span<const std::int64_t> in_split,
                           std::span<const std::int64_t> out_split) {
  const Shape ws = weight.shape();
  if (in_split.size() != out_split.size() || in_split.empty()) {
    throw ShapeError("unfold needs input and output partitions of equal length");
  }
  const auto total = [](std::span<const std::int64_t> p) {
    for (std::int64_t v : p) {
      if (v <= 0) throw ShapeError("partition entries must be positive");
    }
    return std::accumulate(p.begin(), p.end(), std::int64_t{0});
  };
  if (total(in_split) != ws.c || total(out_split) != ws.n) {
    throw ShapeError("partition does not sum to the conv's channel counts " + ws.str());
  }
  if (bias.defined() && bias.numel() != ws.n) throw ShapeError("bias does not match the weight");

  const std::size_t s = in_split.size();
  const auto src = weight.value().data();
  const std::int64_t kk = ws.h * ws.w;
  TransformSpec spec;
  spec.in_channels.assign(in_split.begin(), in_split.end());
  spec.out_channels.assign(out_split.begin(), out_split.end());
  spec.levels.assign(s, 0);
  spec.entries.assign(s, std::vector<TransformEntry>(s));
  std::int64_t o0 = 0;
  for (std::size_t i = 0; i < s; ++i) {
    std::int64_t c0 = 0;
    for (std::size_t j = 0; j < s; ++j) {
      std::vector<double> block;
      block.reserve(static_cast<std::size_t>(out_split[i] * in_split[j] * kk));
      for (std::int64_t o = o0; o < o0 + out_split[i]; ++o) {
        for (std::int64_t c = c0; c < c0 + in_split[j]; ++c) {
          const auto base = src.begin() + (o * ws.c + c) * kk;
          block.insert(block.end(), base, base + kk);
        }
      }
      Conv conv;
      conv.weight =
          Parameter(Tensor({out_split[i], in_split[j], ws.h, ws.w}, std::move(block), weight.value().dtype()));
      if (j == 0 && bias.defined()) {
        const auto bv = bias.value().data().subspan(static_cast<std::size_t>(o0),
                                                    static_cast<std::size_t>(out_split[i]));
        conv.bias = Parameter(
            Tensor({1, out_split[i], 1, 1}, std::vector<double>(bv.begin(), bv.end()), bias.value().dtype()));
      }
      spec.entries[i][j] = TransformEntry::plain(std::move(conv));
      c0 += in_split[j];
    }
    o0 += out_split[i];
  }
  return MSConvUnit(std::move(spec), false);
}

MSConvUnit unfold_standard(const Parameter& weight, const Parameter& bias,
                           std::span<const std::int64_t> split) {
  return unfold_standard(weight, bias, split, split);
}

ScaleFeatures split_channels(const Tensor& x, std::span<const std::int64_t> widths) {
  ScaleFeatures out;
  std::int64_t start = 0;
  for (std::int64_t w : widths) {
    out.groups.push_back(slice_channels(x, start, w));
    start += w;
  }
  if (start != x.shape().c) throw ShapeError("split widths do not sum to the channel count");
  return out;
}

Tensor concat_groups(const ScaleFeatures& y) { return concat_channels(y.groups); }

FirstConv::FirstConv(std::int64_t c_in, std::span<const std::int64_t> widths, Rng& rng,
                     UnitOptions opts) {
  if (widths.empty()) throw ShapeError("FirstConv needs at least one scale");
  for (std::int64_t w : widths) convs_.push_back(Conv::init(c_in, w, opts.kernel, rng, opts.dtype));
}

ScaleFeatures FirstConv::forward(const ScaleFeatures& x, Tape* tape) const {
  if (x.size() != 1) throw ShapeError("FirstConv expects a single full-resolution group");
  ScaleFeatures y;
  Tensor t = x[0];
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    if (i > 0) t = avg_pool2(t);
    y.groups.push_back(convs_[i](t, tape));
  }
  return y;
}

void FirstConv::conv_sites(const std::string& name, std::int64_t h, std::int64_t w,
                           std::vector<ConvSite>& out) const {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const int lvl = static_cast<int>(i);
    out.push_back(convs_[i].site(name + ".s" + std::to_string(i), lvl, extent_at_level(h, lvl),
                                 extent_at_level(w, lvl)));
  }
}

void FirstConv::named_parameters(const std::string& prefix, std::vector<NamedParameter>& out) const {
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(prefix + ".s" + std::to_string(i), out);
}

LastConv::LastConv(std::span<const std::int64_t> widths, std::int64_t c_out, Rng& rng, UnitOptions opts) {
  if (widths.empty()) throw ShapeError("LastConv needs at least one scale");
  for (std::int64_t w : widths) convs_.push_back(Conv::init(w, c_out, opts.kernel, rng, opts.dtype));
}

ScaleFeatures LastConv::forward(const ScaleFeatures& x, Tape* tape) const {
  if (x.size() != convs_.size()) throw ShapeError("LastConv scale count mismatch");
  Tensor acc;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    Tensor t = up_times(convs_[i](x[i], tape), static_cast<int>(i));
    if (!acc.empty() && t.shape() != acc.shape()) {
      throw ShapeError("scale " + std::to_string(i) + " does not upsample to " + acc.shape().str());
    }
    acc = acc.empty() ? t : add(acc, t);
  }
  return ScaleFeatures::single(std::move(acc));
}

void LastConv::conv_sites(const std::string& name, std::int64_t h, std::int64_t w,
                          std::vector<ConvSite>& out) const {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const int lvl = static_cast<int>(i);
    out.push_back(convs_[i].site(name + ".s" + std::to_string(i), lvl, extent_at_level(h, lvl),
                                 extent_at_level(w, lvl)));
  }
}

void LastConv::named_parameters(const std::string& prefix, std::vector<NamedParameter>& out) const {
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(prefix + ".s" + std::to_string(i), out);
}

ScaleFeatures split_to_scales(const FirstConv& first, const Tensor& x, Tape* tape) {
  return first.forward(ScaleFeatures::single(x), tape);
}

Tensor aggregate_to_single(const LastConv& last, const ScaleFeatures& y, Tape* tape) {
  return last.forward(y, tape)[0];
}

}  // namespace msconv
