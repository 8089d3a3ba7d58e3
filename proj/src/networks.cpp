#include "msconv/networks.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "msconv/complexity.hpp"
#include "msconv/json_util.hpp"
#include "msconv/ops.hpp"
#include "msconv/resize.hpp"
#include "msconv/tensor_io.hpp"

namespace msconv {

const char* backbone_name(Backbone b) { return b == Backbone::kCarn ? "carn" : "srresnet"; }

Backbone parse_backbone(std::string_view name) {
  if (name == "srresnet") return Backbone::kSrresnet;
  if (name == "carn") return Backbone::kCarn;
  throw std::invalid_argument("unknown backbone '" + std::string(name) + "' (expected srresnet|carn)");
}

ModelConfig ModelConfig::normalized() const {
  ModelConfig c = *this;
  if (c.num_blocks < 0) c.num_blocks = c.backbone == Backbone::kCarn ? 3 : 16;
  if (c.is_baseline()) {
    c.branches = 1;
  } else {
    (void)parse_variant(c.variant);
  }
  if (c.branches < 1 || c.branches > 4) throw std::invalid_argument("branches must be in [1, 4]");
  if (c.width < c.branches) throw std::invalid_argument("width must be at least the branch count");
  if (c.upscale < 1 || c.upscale > 8 || !std::has_single_bit(static_cast<unsigned>(c.upscale))) {
    throw std::invalid_argument("upscale must be 1, 2, 4 or 8");
  }
  if (c.backbone == Backbone::kCarn && (c.groups < 1 || c.num_blocks < 1)) {
    throw std::invalid_argument("carn needs at least one group of one block");
  }
  return c;
}

Variant ModelConfig::unit_variant() const {
  return is_baseline() ? Variant::kStandard : parse_variant(variant);
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"backbone", backbone_name(cfg.backbone)},
          {"variant", cfg.variant},
          {"num_blocks", cfg.num_blocks},
          {"groups", cfg.groups},
          {"width", cfg.width},
          {"branches", cfg.branches},
          {"upscale", cfg.upscale},
          {"image_residual", cfg.image_residual},
          {"dtype", cfg.dtype == DType::kF64 ? "float64" : "float32"},
          {"seed", cfg.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  const std::string sec = "model";
  reject_unknown_keys(j, {"backbone", "variant", "num_blocks", "groups", "width", "branches", "upscale",
                          "image_residual", "dtype", "seed"},
                      sec);
  ModelConfig c;
  std::string backbone = backbone_name(c.backbone);
  std::string dtype = "float32";
  read_field(j, "backbone", sec, backbone);
  read_field(j, "variant", sec, c.variant);
  read_field(j, "num_blocks", sec, c.num_blocks);
  read_field(j, "groups", sec, c.groups);
  read_field(j, "width", sec, c.width);
  read_field(j, "branches", sec, c.branches);
  read_field(j, "upscale", sec, c.upscale);
  read_field(j, "image_residual", sec, c.image_residual);
  read_field(j, "dtype", sec, dtype);
  read_field(j, "seed", sec, c.seed);
  try {
    c.backbone = parse_backbone(backbone);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("model.backbone", e.what());
  }
  if (dtype == "float64") {
    c.dtype = DType::kF64;
  } else if (dtype != "float32") {
    throw ConfigError("model.dtype", "model.dtype must be float32 or float64");
  }
  try {
    return c.normalized();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("model", e.what());
  }
}

namespace {

ScaleFeatures relu_all(const ScaleFeatures& x) {
  ScaleFeatures y;
  for (const Tensor& t : x.groups) y.groups.push_back(relu(t));
  return y;
}

ScaleFeatures add_all(const ScaleFeatures& a, const ScaleFeatures& b) {
  ScaleFeatures y;
  for (std::size_t i = 0; i < a.size(); ++i) y.groups.push_back(add(a[i], b[i]));
  return y;
}

ScaleFeatures concat_all(const std::vector<ScaleFeatures>& parts) {
  ScaleFeatures y;
  for (std::size_t i = 0; i < parts.front().size(); ++i) {
    std::vector<Tensor> g;
    for (const auto& p : parts) g.push_back(p[i]);
    y.groups.push_back(concat_channels(g));
  }
  return y;
}

ScaleFeatures residual(const ResidualBlock& blk, const ScaleFeatures& x, Tape* tape) {
  return add_all(x, blk.b->forward(relu_all(blk.a->forward(x, tape)), tape));
}

std::vector<std::int64_t> times(const std::vector<std::int64_t>& w, std::int64_t k) {
  std::vector<std::int64_t> out = w;
  for (auto& v : out) v *= k;
  return out;
}

class UnitFactory {
 public:
  UnitFactory(const ModelConfig& cfg, Rng& rng) : cfg_(cfg), rng_(rng), variant_(cfg.unit_variant()) {}

  LayerPtr operator()(const std::vector<std::int64_t>& in, const std::vector<std::int64_t>& out, int kernel) {
    // An identity entry cannot change width, so unet degrades to ms there.
    const Variant v = variant_ == Variant::kUnet && in != out ? Variant::kMs : variant_;
    return std::make_shared<MSConvUnit>(build_variant(v, cfg_.branches, in, out, rng_, {kernel, cfg_.dtype}));
  }

 private:
  const ModelConfig& cfg_;
  Rng& rng_;
  Variant variant_;
};

std::vector<std::int64_t> widths_for(const ModelConfig& cfg) {
  return split_widths(cfg.width, cfg.branches, variant_shares_diagonal(cfg.unit_variant()));
}

int log2i(int v) { return std::countr_zero(static_cast<unsigned>(v)); }

// Upsampler stages, LastConv and the output conv shared by both backbones.
void build_tail(const ModelConfig& cfg, const std::vector<std::int64_t>& widths, Rng& rng, UnitFactory& unit,
                std::vector<LayerPtr>& upsampler, LastConv& last, Conv& tail) {
  for (int s = 0; s < log2i(cfg.upscale); ++s) upsampler.push_back(unit(widths, times(widths, 4), 3));
  last = LastConv(widths, cfg.width, rng, {3, cfg.dtype});
  tail = cfg.image_residual ? Conv::zero_init(cfg.width, 3, 3, cfg.dtype)
                            : Conv::init(cfg.width, 3, 3, rng, cfg.dtype);
}

}  // namespace

Network build_srresnet(const ModelConfig& in) {
  ModelConfig cfg = in.normalized();
  cfg.backbone = Backbone::kSrresnet;
  Network net;
  net.cfg_ = cfg;
  Rng rng(cfg.seed);
  UnitFactory unit(cfg, rng);
  const auto widths = widths_for(cfg);
  net.first_ = FirstConv(3, widths, rng, {3, cfg.dtype});
  for (int b = 0; b < cfg.num_blocks; ++b) {
    ResidualBlock blk;
    blk.a = unit(widths, widths, 3);
    blk.b = unit(widths, widths, 3);
    net.blocks_.push_back(std::move(blk));
  }
  net.mid_ = unit(widths, widths, 3);
  build_tail(cfg, widths, rng, unit, net.upsampler_, net.last_, net.tail_);
  return net;
}

Network build_carn(const ModelConfig& in) {
  ModelConfig cfg = in.normalized();
  cfg.backbone = Backbone::kCarn;
  Network net;
  net.cfg_ = cfg;
  Rng rng(cfg.seed);
  UnitFactory unit(cfg, rng);
  const auto widths = widths_for(cfg);
  net.first_ = FirstConv(3, widths, rng, {3, cfg.dtype});
  for (int g = 0; g < cfg.groups; ++g) {
    CascadeGroup group;
    for (int b = 0; b < cfg.num_blocks; ++b) {
      ResidualBlock blk;
      blk.a = unit(widths, widths, 3);
      blk.b = unit(widths, widths, 3);
      group.blocks.push_back(std::move(blk));
      group.fuses.push_back(unit(times(widths, b + 2), widths, 1));
    }
    net.groups_.push_back(std::move(group));
    net.group_fuses_.push_back(unit(times(widths, g + 2), widths, 1));
  }
  build_tail(cfg, widths, rng, unit, net.upsampler_, net.last_, net.tail_);
  return net;
}

Network build_network(const ModelConfig& cfg) {
  return cfg.backbone == Backbone::kCarn ? build_carn(cfg) : build_srresnet(cfg);
}

ScaleFeatures Network::body(const ScaleFeatures& x, Tape* tape) const {
  if (cfg_.backbone == Backbone::kSrresnet) {
    ScaleFeatures h = x;
    for (const auto& blk : blocks_) h = residual(blk, h, tape);
    return mid_->forward(h, tape);
  }
  std::vector<ScaleFeatures> outer{x};
  ScaleFeatures o = x;
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    std::vector<ScaleFeatures> inner{o};
    ScaleFeatures h = o;
    for (std::size_t b = 0; b < groups_[g].blocks.size(); ++b) {
      inner.push_back(relu_all(residual(groups_[g].blocks[b], h, tape)));
      h = relu_all(groups_[g].fuses[b]->forward(concat_all(inner), tape));
    }
    outer.push_back(h);
    o = relu_all(group_fuses_[g]->forward(concat_all(outer), tape));
  }
  return o;
}

Tensor Network::forward_sr(const Tensor& lr, Tape* tape) const {
  const Shape s = lr.shape();
  const std::int64_t m = input_multiple();
  if (s.c != 3) throw ShapeError("network expects 3-channel input, got " + s.str());
  if (s.h % m != 0 || s.w % m != 0) {
    throw ShapeError("input " + std::to_string(s.h) + "x" + std::to_string(s.w) + " must be a multiple of " +
                     std::to_string(m) + "; pad by " + std::to_string((m - s.h % m) % m) + " rows and " +
                     std::to_string((m - s.w % m) % m) + " columns");
  }
  const ScaleFeatures head = relu_all(first_.forward(ScaleFeatures::single(lr), tape));
  ScaleFeatures h = add_all(body(head, tape), head);
  for (const LayerPtr& stage : upsampler_) {
    ScaleFeatures y = stage->forward(h, tape);
    h.groups.clear();
    for (const Tensor& t : y.groups) h.groups.push_back(relu(pixel_shuffle(t, 2)));
  }
  const Tensor merged = relu(last_.forward(h, tape)[0]);
  Tensor out = tail_(merged, tape);
  if (cfg_.image_residual) out = add(out, bicubic_resize(lr.detach(), cfg_.upscale));
  return out;
}

ScaleFeatures Network::forward(const ScaleFeatures& x, Tape* tape) const {
  if (x.size() != 1) throw ShapeError("network expects a single input group");
  return ScaleFeatures::single(forward_sr(x[0], tape));
}

namespace {

template <typename Fn>
void visit_layers(const ModelConfig& cfg, const FirstConv& first, const std::vector<ResidualBlock>& blocks,
                  const LayerPtr& mid, const std::vector<CascadeGroup>& groups,
                  const std::vector<LayerPtr>& group_fuses, const std::vector<LayerPtr>& upsampler,
                  const LastConv& last, Fn&& fn) {
  fn("first", first, 0);
  if (cfg.backbone == Backbone::kSrresnet) {
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      fn("block" + std::to_string(b) + ".a", *blocks[b].a, 0);
      fn("block" + std::to_string(b) + ".b", *blocks[b].b, 0);
    }
    fn("mid", *mid, 0);
  } else {
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const std::string gp = "group" + std::to_string(g);
      for (std::size_t b = 0; b < groups[g].blocks.size(); ++b) {
        fn(gp + ".block" + std::to_string(b) + ".a", *groups[g].blocks[b].a, 0);
        fn(gp + ".block" + std::to_string(b) + ".b", *groups[g].blocks[b].b, 0);
        fn(gp + ".fuse" + std::to_string(b), *groups[g].fuses[b], 0);
      }
      fn("fuse" + std::to_string(g), *group_fuses[g], 0);
    }
  }
  for (std::size_t s = 0; s < upsampler.size(); ++s) fn("up" + std::to_string(s), *upsampler[s], static_cast<int>(s));
  fn("last", last, log2i(cfg.upscale));
}

}  // namespace

void Network::conv_sites(const std::string& name, std::int64_t h, std::int64_t w,
                         std::vector<ConvSite>& out) const {
  visit_layers(cfg_, first_, blocks_, mid_, groups_, group_fuses_, upsampler_, last_,
               [&](const std::string& n, const ScaleLayer& layer, int up) {
                 layer.conv_sites(name + "." + n, h << up, w << up, out);
               });
  out.push_back(tail_.site(name + ".tail", 0, h * cfg_.upscale, w * cfg_.upscale));
}

void Network::named_parameters(const std::string& prefix, std::vector<NamedParameter>& out) const {
  visit_layers(cfg_, first_, blocks_, mid_, groups_, group_fuses_, upsampler_, last_,
               [&](const std::string& n, const ScaleLayer& layer, int) {
                 layer.named_parameters(prefix.empty() ? n : prefix + "." + n, out);
               });
  tail_.collect(prefix.empty() ? "tail" : prefix + ".tail", out);
}

std::vector<NamedParameter> Network::parameters() const {
  std::vector<NamedParameter> all;
  named_parameters("", all);
  std::unordered_set<std::uint64_t> seen;
  std::vector<NamedParameter> out;
  for (auto& np : all) {
    if (seen.insert(np.param.share_id()).second) out.push_back(std::move(np));
  }
  return out;
}

std::vector<LayerPtr> Network::body_units() const {
  std::vector<LayerPtr> out;
  for (const auto& blk : blocks_) {
    out.push_back(blk.a);
    out.push_back(blk.b);
  }
  if (mid_) out.push_back(mid_);
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    for (std::size_t b = 0; b < groups_[g].blocks.size(); ++b) {
      out.push_back(groups_[g].blocks[b].a);
      out.push_back(groups_[g].blocks[b].b);
      out.push_back(groups_[g].fuses[b]);
    }
    out.push_back(group_fuses_[g]);
  }
  return out;
}

Network Network::map_body_units(const std::function<LayerPtr(const LayerPtr&)>& fn) const {
  Network n = *this;
  for (auto& blk : n.blocks_) {
    blk.a = fn(blk.a);
    blk.b = fn(blk.b);
  }
  if (n.mid_) n.mid_ = fn(n.mid_);
  for (std::size_t g = 0; g < n.groups_.size(); ++g) {
    for (std::size_t b = 0; b < n.groups_[g].blocks.size(); ++b) {
      n.groups_[g].blocks[b].a = fn(n.groups_[g].blocks[b].a);
      n.groups_[g].blocks[b].b = fn(n.groups_[g].blocks[b].b);
      n.groups_[g].fuses[b] = fn(n.groups_[g].fuses[b]);
    }
    n.group_fuses_[g] = fn(n.group_fuses_[g]);
  }
  return n;
}

ModelConfig deepen_to_target(const ModelConfig& cfg, std::int64_t target_flops, std::int64_t h, std::int64_t w) {
  ModelConfig c = cfg.normalized();
  const auto flops_at = [&](int blocks) {
    ModelConfig t = c;
    t.num_blocks = blocks;
    return count_flops(build_network(t), h, w);
  };
  const std::int64_t f0 = flops_at(c.num_blocks);
  if (f0 > target_flops) {
    throw std::invalid_argument("starting depth already needs " + std::to_string(f0) + " FLOPs, above target " +
                                std::to_string(target_flops));
  }
  const std::int64_t step = flops_at(c.num_blocks + 1) - f0;
  if (step <= 0) throw std::logic_error("FLOPs do not grow with depth");
  // FLOPs are affine in depth; the loops only guard the jump.
  int n = c.num_blocks + static_cast<int>((target_flops - f0) / step);
  while (n > c.num_blocks && flops_at(n) > target_flops) --n;
  while (flops_at(n + 1) <= target_flops) ++n;
  c.num_blocks = n;
  return c;
}

Tensor forward_sr(const Network& net, const Tensor& lr) { return net.forward_sr(lr, nullptr); }

namespace {

std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i %= period;
  return i < n ? i : period - i;
}

}  // namespace

Tensor forward_sr_padded(const Network& net, const Tensor& lr) {
  const Shape s = lr.shape();
  const std::int64_t m = net.input_multiple();
  const std::int64_t ph = (s.h + m - 1) / m * m;
  const std::int64_t pw = (s.w + m - 1) / m * m;
  if (ph == s.h && pw == s.w) return net.forward_sr(lr);
  const auto src = lr.data();
  std::vector<double> padded(static_cast<std::size_t>(s.n * s.c * ph * pw));
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    for (std::int64_t y = 0; y < ph; ++y) {
      for (std::int64_t x = 0; x < pw; ++x) {
        padded[static_cast<std::size_t>((p * ph + y) * pw + x)] =
            src[static_cast<std::size_t>((p * s.h + reflect_index(y, s.h)) * s.w + reflect_index(x, s.w))];
      }
    }
  }
  const Tensor out = net.forward_sr(Tensor({s.n, s.c, ph, pw}, std::move(padded), lr.dtype()));
  const std::int64_t r = net.config().upscale;
  const Shape os = out.shape();
  const Shape cs{s.n, os.c, s.h * r, s.w * r};
  const auto od = out.data();
  std::vector<double> crop(static_cast<std::size_t>(cs.numel()));
  for (std::int64_t p = 0; p < cs.n * cs.c; ++p) {
    for (std::int64_t y = 0; y < cs.h; ++y) {
      const auto row = od.begin() + (p * os.h + y) * os.w;
      std::copy(row, row + cs.w, crop.begin() + (p * cs.h + y) * cs.w);
    }
  }
  return Tensor(cs, std::move(crop), out.dtype());
}

void save_checkpoint(const std::filesystem::path& path, const Network& net, const nlohmann::json& state,
                     const std::map<std::string, Tensor>& extra) {
  std::map<std::string, Tensor> table;
  for (const auto& np : net.parameters()) table.emplace(np.name, np.param.value());
  for (const auto& [name, t] : extra) {
    if (!table.emplace(name, t).second) throw std::invalid_argument("checkpoint name collision: " + name);
  }
  const std::string blob = nlohmann::json{{"model", to_json(net.config())}, {"state", state}}.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os.write("MSCK", 4);
  detail::write_u32(os, kCheckpointVersion);
  detail::write_u32(os, static_cast<std::uint32_t>(blob.size()));
  os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  detail::write_u32(os, static_cast<std::uint32_t>(table.size()));
  for (const auto& [name, t] : table) {
    detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t);
  }
  if (!os) throw FormatError("failed writing checkpoint " + path.string());
}

namespace {

std::string read_string(std::istream& is, std::uint32_t n) {
  if (n > (1u << 26)) throw FormatError("implausible string length in checkpoint");
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw FormatError("truncated checkpoint");
  return s;
}

}  // namespace

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "MSCK", 4) != 0) throw FormatError("not a checkpoint: " + path.string());
  const std::uint32_t version = detail::read_u32(is);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_string(is, detail::read_u32(is)));
    ck.config = model_config_from_json(meta.at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }
  ck.state = meta.value("state", nlohmann::json::object());
  const std::uint32_t count = detail::read_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = read_string(is, detail::read_u32(is));
    ck.tensors.emplace(std::move(name), read_tensor(is));
  }
  return ck;
}

Network restore_network(const Checkpoint& ck) {
  Network net = build_network(ck.config);
  for (auto& np : net.parameters()) {
    auto it = ck.tensors.find(np.name);
    if (it == ck.tensors.end()) throw FormatError("checkpoint lacks parameter " + np.name);
    if (it->second.shape() != np.param.shape() || it->second.dtype() != np.param.value().dtype()) {
      throw FormatError("checkpoint tensor " + np.name + " does not match the configured network");
    }
    np.param.assign(it->second);
  }
  return net;
}

}  // namespace msconv
