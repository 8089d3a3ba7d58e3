#include "msconv/pilot_equiv.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "msconv/complexity.hpp"
#include "msconv/ops.hpp"

namespace msconv {

Tensor PipelineFn::apply(const Tensor& x, Tape* tape) const {
  Tensor t = x;
  for (const Atom& a : atoms) {
    switch (a.kind) {
      case AtomKind::kConv: t = a.conv(t, tape); break;
      case AtomKind::kD2: t = nearest_subsample2(t); break;
      case AtomKind::kU2: t = nearest_upsample2(t); break;
      case AtomKind::kPool: t = a.stride == 1 ? avg_pool2_stride1(t) : avg_pool2(t); break;
    }
  }
  return t;
}

std::string PipelineFn::describe() const {
  std::string s;
  for (const Atom& a : atoms) {
    if (!s.empty()) s += "-";
    switch (a.kind) {
      case AtomKind::kConv: s += "W_d" + std::to_string(a.conv.dilation); break;
      case AtomKind::kD2: s += "D2"; break;
      case AtomKind::kU2: s += "U2"; break;
      case AtomKind::kPool: s += "Pool_s" + std::to_string(a.stride); break;
    }
  }
  return s;
}

PilotUnit::PilotUnit(char id, std::vector<PipelineFn> branches) : id_(id), branches_(std::move(branches)) {
  if (branches_.empty()) throw std::invalid_argument("pilot unit needs a branch");
}

std::string PilotUnit::describe() const {
  std::string s;
  for (const auto& b : branches_) s += (s.empty() ? "" : " + ") + b.describe();
  return s;
}

ScaleFeatures PilotUnit::forward(const ScaleFeatures& x, Tape* tape) const {
  if (x.size() != 1) throw ShapeError("pilot units act on a single scale");
  Tensor acc;
  for (const auto& b : branches_) {
    Tensor t = b.apply(x[0], tape);
    acc = acc.empty() ? t : add(acc, t);
  }
  return ScaleFeatures::single(std::move(acc));
}

void PilotUnit::conv_sites(const std::string& name, std::int64_t h, std::int64_t w,
                           std::vector<ConvSite>& out) const {
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    int level = 0;
    for (std::size_t k = 0; k < branches_[b].atoms.size(); ++k) {
      const Atom& a = branches_[b].atoms[k];
      if (a.kind == AtomKind::kConv) {
        out.push_back(a.conv.site(name + ".b" + std::to_string(b) + ".c" + std::to_string(k), 0,
                                  extent_at_level(h, level), extent_at_level(w, level)));
      } else if (a.kind == AtomKind::kD2 || (a.kind == AtomKind::kPool && a.stride == 2)) {
        ++level;
      } else if (a.kind == AtomKind::kU2) {
        --level;
      }
    }
  }
}

void PilotUnit::named_parameters(const std::string& prefix, std::vector<NamedParameter>& out) const {
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    for (std::size_t k = 0; k < branches_[b].atoms.size(); ++k) {
      const Atom& a = branches_[b].atoms[k];
      if (a.kind == AtomKind::kConv) a.conv.collect(prefix + ".b" + std::to_string(b) + ".c" + std::to_string(k), out);
    }
  }
}

PilotUnit build_pilot_case(char id, std::int64_t c_in, std::int64_t c_out, Rng& rng, DType dtype, bool share) {
  const auto conv = [&](int dilation) { return Conv::init(c_in, c_out, 3, rng, dtype, dilation); };
  const auto one = [](std::vector<Atom> atoms) { return std::vector<PipelineFn>{PipelineFn{std::move(atoms)}}; };
  switch (id) {
    case 'a': return PilotUnit(id, one({Atom::conv_atom(conv(1))}));
    case 'b': return PilotUnit(id, one({Atom::conv_atom(conv(2))}));
    case 'c': {
      Conv d1 = conv(1);
      Conv d2 = share ? d1 : conv(1);
      d2.dilation = 2;
      return PilotUnit(id, {PipelineFn{{Atom::conv_atom(d1)}}, PipelineFn{{Atom::conv_atom(d2)}}});
    }
    case 'd': return PilotUnit(id, one({Atom::conv_atom(conv(2)), Atom::d2(), Atom::u2()}));
    case 'e': return PilotUnit(id, one({Atom::pool(1), Atom::conv_atom(conv(2)), Atom::d2(), Atom::u2()}));
    default: throw std::invalid_argument(std::string("unknown pilot case '") + id + "' (expected a-e)");
  }
}

std::size_t distinct_branch_weights(const PilotUnit& unit) {
  std::unordered_set<std::uint64_t> ids;
  for (const auto& b : unit.branches()) {
    for (const Atom& a : b.atoms) {
      if (a.kind == AtomKind::kConv) ids.insert(a.conv.weight.share_id());
    }
  }
  return ids.size();
}

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("identity sides differ in shape");
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

std::pair<Tensor, Tensor> identity_sides(const Parameter& w, const Tensor& x) {
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) throw ShapeError("rearrangement identity needs even extents, got " + s.str());
  const int k = static_cast<int>(w.shape().h);
  const Tensor& wv = w.value();
  const Tensor lhs = conv2d(nearest_subsample2(x), wv, std::nullopt, {1, 1, (k - 1) / 2});
  const Tensor rhs = nearest_subsample2(conv2d(x, wv, std::nullopt, {1, 2, k - 1}));
  return {lhs, rhs};
}

}  // namespace

double check_rearrangement_identity(const Parameter& w, const Tensor& x) {
  const auto [lhs, rhs] = identity_sides(w, x);
  return max_abs_diff(lhs, rhs);
}

double check_rearrangement_identity_up(const Parameter& w, const Tensor& x) {
  const auto [lhs, rhs] = identity_sides(w, x);
  return max_abs_diff(nearest_upsample2(lhs), nearest_upsample2(rhs));
}

PilotConfig::PilotConfig() {
  train.batch = 4;
  train.hr_patch = 48;
  train.lr = 5e-4;
  train.total_iters = 2000;
  train.halve_every = 1000;
  train.log_every = 0;
  train.smooth_window = 100;
}

Network build_pilot_network(char id, const PilotConfig& cfg) {
  ModelConfig m;
  m.num_blocks = cfg.num_blocks;
  m.width = cfg.width;
  m.upscale = cfg.upscale;
  m.dtype = cfg.dtype;
  m.seed = cfg.seed;
  const Network base = build_srresnet(m);
  Rng rng(splitmix64(cfg.seed) + static_cast<std::uint64_t>(id));
  return base.map_body_units([&](const LayerPtr&) -> LayerPtr {
    return std::make_shared<PilotUnit>(build_pilot_case(id, cfg.width, cfg.width, rng, cfg.dtype));
  });
}

std::vector<PilotCaseResult> run_pilot_suite(const PilotConfig& cfg, const std::function<void(const std::string&)>& log) {
  const SrData data = load_data(cfg.data, cfg.upscale, cfg.dtype);
  std::vector<PilotCaseResult> out;
  for (char id : {'a', 'b', 'c', 'd', 'e'}) {
    Network net = build_pilot_network(id, cfg);
    const auto& unit = dynamic_cast<const PilotUnit&>(*net.body_units().front());
    PilotCaseResult r;
    r.id = id;
    r.function = unit.describe();
    r.params = count_params(net);
    r.distinct_branch_weights = distinct_branch_weights(unit);
    try {
      const RunRecord rec = train_loop(net, data, cfg.train);
      r.loss_initial = rec.smoothed_initial(cfg.train.smooth_window);
      r.loss_final = rec.smoothed_final(cfg.train.smooth_window);
      const EvalResult ev = evaluate(net, data.eval);
      r.psnr = ev.mean_psnr;
      r.bicubic_psnr = ev.mean_bicubic_psnr;
    } catch (const NumericError&) {
      r.finite = false;
    }
    if (log) log(std::string("case ") + id + " " + r.function + " psnr " + std::to_string(r.psnr));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace msconv
