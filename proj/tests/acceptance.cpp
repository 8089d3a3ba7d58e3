// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "msconv/complexity.hpp"
#include "msconv/networks.hpp"
#include "msconv/pilot_equiv.hpp"
#include "msconv/sr_pipeline.hpp"
#include "msconv/verify.hpp"

using namespace msconv;

namespace {

// Tolerances are fixed here and nowhere else.
constexpr double kParamTol = 0.05;
constexpr double kCarnParamTol = 0.10;
constexpr double kRatioTol = 0.02;
constexpr double kIdentityTol = 1e-12;
constexpr int kMinUnfoldCases = 20;

struct Outcome {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond) ok = false;
    if (!detail.empty()) detail += "; ";
    detail += (cond ? "" : "!") + what;
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ModelConfig model(const std::string& variant, Backbone backbone = Backbone::kSrresnet) {
  ModelConfig c;
  c.backbone = backbone;
  c.variant = variant;
  c.branches = variant == "baseline" ? 1 : 2;
  return c;
}

double rel(double got, double want) { return std::abs(got - want) / want; }

Outcome params_reproduction() {
  Outcome o;
  struct Row {
    const char* variant;
    Backbone backbone;
    double target;
    double tol;
  };
  const Row rows[] = {
      {"baseline", Backbone::kSrresnet, 1.59e6, kParamTol}, {"ms", Backbone::kSrresnet, 0.82e6, kParamTol},
      {"ms2_no_hl", Backbone::kSrresnet, 1.21e6, kParamTol}, {"ms2", Backbone::kSrresnet, 1.59e6, kParamTol},
      {"ms3", Backbone::kSrresnet, 0.52e6, kParamTol},       {"baseline", Backbone::kCarn, 1.15e6, kCarnParamTol},
      {"ms3", Backbone::kCarn, 0.45e6, kParamTol},
  };
  for (const Row& r : rows) {
    const auto p = static_cast<double>(count_params(build_network(model(r.variant, r.backbone))));
    o.require(rel(p, r.target) <= r.tol,
              fmt("%s/%s %.3fM (%+.1f%%)", backbone_name(r.backbone), r.variant, p / 1e6, 100 * (p / r.target - 1)));
  }
  return o;
}

Outcome flops_ratios() {
  Outcome o;
  const Network base = build_network(model("baseline"));
  const std::pair<std::int64_t, std::int64_t> sizes[] = {{32, 32}, {48, 80}, {128, 128}};
  const auto ratio = [&](const ModelConfig& cfg, std::int64_t h, std::int64_t w) {
    return static_cast<double>(count_flops(build_network(cfg), h, w)) / static_cast<double>(count_flops(base, h, w));
  };
  for (auto [variant, want] : {std::pair<const char*, double>{"ms", 0.391}, {"ms2", 0.486}, {"ms3", 0.401}}) {
    double worst = 0.0, first = 0.0;
    for (auto [h, w] : sizes) {
      const double r = ratio(model(variant), h, w);
      if (first == 0.0) first = r;
      worst = std::max(worst, std::abs(r - want));
    }
    o.require(worst <= kRatioTol, fmt("%s %.4f", variant, first));
  }
  // MS3+: the ms3 network deepened until its FLOPs reach 0.678 of the baseline.
  const std::int64_t target = static_cast<std::int64_t>(0.678 * static_cast<double>(count_flops(base, 32, 32)));
  const ModelConfig plus = deepen_to_target(model("ms3"), target, 32, 32);
  const double pr = static_cast<double>(count_params(build_network(plus))) / static_cast<double>(count_params(base));
  double worst = 0.0;
  for (auto [h, w] : sizes) worst = std::max(worst, std::abs(ratio(plus, h, w) - 0.678));
  o.require(worst <= kRatioTol && std::abs(pr - 0.748) <= kRatioTol,
            fmt("ms3+ %d blocks flops %.4f params %.4f", plus.num_blocks, ratio(plus, 32, 32), pr));
  return o;
}

Outcome exact_identities() {
  Outcome o;
  Rng rng(2024);
  double worst = 0.0;
  int cases = 0;
  for (std::int64_t cin : {2, 5, 8, 11}) {
    for (std::int64_t cout : {3, 6}) {
      for (int k : {1, 3, 5}) {
        // Random partitions into 2 groups with random sizes.
        const auto part = [&](std::int64_t total) {
          const std::int64_t a = 1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(total - 1)));
          return std::vector<std::int64_t>{a, total - a};
        };
        const std::vector<std::int64_t> pin = part(cin), pout = part(cout);
        const Parameter w(random_tensor({cout, cin, k, k}, rng));
        const Parameter b(random_tensor({1, cout, 1, 1}, rng));
        const Tensor x = random_tensor({2, cin, 6 + cases % 3, 7}, rng);
        const MSConvUnit unit = unfold_standard(w, b, pin, pout);
        const Tensor got = concat_groups(unit.forward(split_channels(x, pin), nullptr));
        worst = std::max(worst, max_abs_diff(got, conv2d(x, w.value(), b.value(), {1, 1, (k - 1) / 2})));
        ++cases;
      }
    }
  }
  o.require(cases >= kMinUnfoldCases && worst <= kIdentityTol, fmt("unfold %d cases max %.2e", cases, worst));

  double worst_r = 0.0;
  int rcases = 0;
  for (auto [h, w] : {std::pair<std::int64_t, std::int64_t>{8, 8}, {16, 16}, {12, 20}, {32, 24}}) {
    for (int k : {1, 3, 5, 7}) {
      const Parameter wt(random_tensor({4, 3, k, k}, rng));
      const Tensor x = random_tensor({2, 3, h, w}, rng);
      worst_r = std::max({worst_r, check_rearrangement_identity(wt, x), check_rearrangement_identity_up(wt, x)});
      ++rcases;
    }
  }
  o.require(worst_r <= kIdentityTol, fmt("rearrangement %d cases max %.2e", rcases, worst_r));
  return o;
}

Outcome gradient_soundness() {
  Outcome o;
  int failed = 0, shared = 0;
  std::size_t total = 0;
  for (const CheckResult& r : run_verify_suite("grad")) {
    ++total;
    if (!r.ok) {
      ++failed;
      o.require(false, r.name + " " + r.detail);
    }
    if (r.name.find("shared weight") != std::string::npos && r.ok) ++shared;
  }
  o.require(failed == 0 && shared == 1 && total > 10, fmt("%zu grad checks, shared-weight check present", total));
  return o;
}

std::int64_t diagonal_flops(const Network& net) {
  std::int64_t f = 0;
  for (const auto& row : analyze(net, 16, 16).rows) {
    if (row.name.ends_with(".e00") || row.name.ends_with(".e11")) f += row.flops;
  }
  return f;
}

Outcome sharing_economics() {
  Outcome o;
  const Network ms2 = build_network(model("ms2"));
  const Network ms3 = build_network(model("ms3"));
  o.require(count_params(ms3) < count_params(ms2), fmt("params %lld -> %lld", static_cast<long long>(count_params(ms2)),
                                                       static_cast<long long>(count_params(ms3))));
  o.require(diagonal_flops(ms3) == diagonal_flops(ms2) && diagonal_flops(ms3) > 0, "diagonal flops equal");

  Rng rng(5);
  for (std::int64_t c : {8, 32}) {
    const std::vector<std::int64_t> widths{c, c};
    const MSConvUnit small = build_variant(Variant::kMs3, 2, widths, rng);
    const MSConvUnit large = build_variant(Variant::kMs3Large, 2, widths, rng);
    // Both cross kernels grow from 1x1 to 3x3.
    const std::int64_t closed = 2 * c * c * (9 - 1);
    const std::int64_t delta = count_params(large) - count_params(small);
    o.require(delta == closed, fmt("ms3_large delta %lld at width %lld", static_cast<long long>(delta),
                                   static_cast<long long>(2 * c)));
  }
  return o;
}

// Criterion 6 setup: small enough for a desk CPU, large enough to beat bicubic.
struct DeskRun {
  double loss_initial;
  double loss_final;
  double psnr;
  double bicubic;
  std::vector<double> losses;
};

DeskRun desk_train(const std::string& variant) {
  ModelConfig m = model(variant);
  m.width = 16;
  m.num_blocks = 4;
  m.upscale = 2;
  m.dtype = DType::kF64;
  m.seed = 1;
  TrainConfig t;
  t.batch = 4;
  t.hr_patch = 32;
  t.lr = 5e-4;
  t.total_iters = 2000;
  t.halve_every = 1000;
  t.seed = 3;
  t.log_every = 0;
  t.smooth_window = 100;
  DatasetSpec d;
  d.synthetic_train = 16;
  d.synthetic_eval = 4;
  d.synthetic_size = 96;
  d.seed = 7;
  const SrData data = load_data(d, m.upscale, m.dtype);
  Network net = build_network(m);
  RunRecord rec = train_loop(net, data, t);
  const EvalResult ev = evaluate(net, data.eval);
  return {rec.smoothed_initial(t.smooth_window), rec.smoothed_final(t.smooth_window), ev.mean_psnr,
          ev.mean_bicubic_psnr, std::move(rec.losses)};
}

const char* const kDeskVariants[] = {"baseline", "ms", "ms2", "ms3"};

Outcome desk_training(std::vector<DeskRun>& runs) {
  Outcome o;
  for (const char* v : kDeskVariants) {
    runs.push_back(desk_train(v));
    const DeskRun& r = runs.back();
    o.require(r.loss_final < r.loss_initial && r.psnr > r.bicubic,
              fmt("%s loss %.4f->%.4f psnr %.3f vs bicubic %.3f", v, r.loss_initial, r.loss_final, r.psnr, r.bicubic));
  }
  return o;
}

Outcome determinism(const std::vector<DeskRun>& first) {
  Outcome o;
  for (std::size_t i = 0; i < first.size(); ++i) {
    const DeskRun again = desk_train(kDeskVariants[i]);
    o.require(again.losses == first[i].losses && again.psnr == first[i].psnr,
              fmt("%s %zu losses bit-exact", kDeskVariants[i], again.losses.size()));
  }
  return o;
}

Outcome pilot_suite() {
  Outcome o;
  PilotConfig cfg;  // 4 blocks, 48x48 HR patches, 2000 iterations
  cfg.seed = 1;
  cfg.train.seed = 1;
  cfg.data.seed = 7;
  std::int64_t params_a = -1, params_d = -2;
  for (const PilotCaseResult& r : run_pilot_suite(cfg)) {
    // Divergence: non-finite values or a smoothed loss that ends above where it started.
    const bool stable = r.finite && std::isfinite(r.psnr) && r.loss_final <= r.loss_initial;
    o.require(stable, fmt("%c %s loss %.4f->%.4f psnr %.2f", r.id, r.function.c_str(), r.loss_initial, r.loss_final,
                          r.psnr));
    if (r.id == 'c') o.require(r.distinct_branch_weights == 1, "c shares one weight");
    if (r.id == 'a') params_a = r.params;
    if (r.id == 'd') params_d = r.params;
  }
  o.require(params_a == params_d, fmt("params a=%lld d=%lld", static_cast<long long>(params_a),
                                      static_cast<long long>(params_d)));
  return o;
}

}  // namespace

int main() {
  int failures = 0;
  const auto report = [&](int n, const char* title, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.ok = false;
      o.detail = std::string("threw: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.ok) ++failures;
    std::printf("%s criterion %d %s [%.1fs] %s\n", o.ok ? "PASS" : "FAIL", n, title, secs, o.detail.c_str());
    std::fflush(stdout);
  };

  std::vector<DeskRun> desk;
  report(1, "parameter counts", params_reproduction);
  report(2, "FLOPs ratios", flops_ratios);
  report(3, "exact identities", exact_identities);
  report(4, "gradient soundness", gradient_soundness);
  report(5, "sharing economics", sharing_economics);
  report(6, "desk training", [&] { return desk_training(desk); });
  report(7, "determinism", [&] { return determinism(desk); });
  report(8, "pilot suite", pilot_suite);
  return failures == 0 ? 0 : 1;
}
