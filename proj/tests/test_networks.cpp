#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "msconv/complexity.hpp"
#include "msconv/json_util.hpp"
#include "msconv/networks.hpp"
#include "msconv/verify.hpp"

using namespace msconv;

namespace {

ModelConfig small(const std::string& variant, int branches = 2) {
  ModelConfig c;
  c.variant = variant;
  c.branches = variant == "baseline" ? 1 : branches;
  c.num_blocks = 2;
  c.width = 8;
  c.dtype = DType::kF64;
  c.seed = 3;
  return c;
}

bool all_finite(const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("config normalization") {
  ModelConfig c;
  CHECK(c.normalized().num_blocks == 16);
  c.backbone = Backbone::kCarn;
  CHECK(c.normalized().num_blocks == 3);
  ModelConfig b;
  b.branches = 3;
  CHECK(b.normalized().branches == 1);
  ModelConfig bad;
  bad.upscale = 3;
  CHECK_THROWS(bad.normalized());
  ModelConfig unknown;
  unknown.variant = "pyramid";
  CHECK_THROWS(unknown.normalized());
}

TEST_CASE("config json round trip and unknown keys") {
  ModelConfig c = small("ms3");
  c.backbone = Backbone::kCarn;
  const ModelConfig back = model_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  nlohmann::json j = to_json(c);
  j["depth"] = 4;
  CHECK_THROWS_AS(model_config_from_json(j), ConfigError);
}

TEST_CASE("full-size parameter counts land near the reference values") {
  const auto params = [](const std::string& v, Backbone b = Backbone::kSrresnet) {
    ModelConfig c;
    c.backbone = b;
    c.variant = v;
    c.branches = v == "baseline" ? 1 : 2;
    return static_cast<double>(count_params(build_network(c)));
  };
  CHECK(params("baseline") == doctest::Approx(1.59e6).epsilon(0.05));
  CHECK(params("ms3") == doctest::Approx(0.52e6).epsilon(0.05));
  CHECK(params("baseline", Backbone::kCarn) == doctest::Approx(1.15e6).epsilon(0.10));
  CHECK(params("ms3", Backbone::kCarn) == doctest::Approx(0.45e6).epsilon(0.10));
}

TEST_CASE("degenerate depths still map LR to HR") {
  ModelConfig c = small("baseline");
  c.num_blocks = 0;
  Rng rng(1);
  const Tensor lr = random_tensor({1, 3, 6, 6}, rng, 0, 1);
  const Tensor hr = build_network(c).forward_sr(lr);
  CHECK(hr.shape() == Shape{1, 3, 24, 24});

  ModelConfig carn = small("baseline");
  carn.backbone = Backbone::kCarn;
  carn.num_blocks = 1;
  carn.groups = 1;
  const Tensor out = build_network(carn).forward_sr(lr);
  CHECK(out.shape() == Shape{1, 3, 24, 24});
  CHECK(all_finite(out));
}

TEST_CASE("shape law holds for every variant and upscale") {
  Rng rng(2);
  for (Variant v : all_variants()) {
    if (v == Variant::kStandard) continue;
    const int s = v == Variant::kMultigrid ? 3 : 2;
    for (int up : {1, 2, 4, 8}) {
      ModelConfig c = small(variant_name(v), s);
      c.upscale = up;
      c.num_blocks = 1;
      const Network net = build_network(c);
      const Tensor lr = random_tensor({2, 3, 8, 12}, rng, 0, 1);
      const Tensor hr = net.forward_sr(lr);
      CHECK(hr.shape() == Shape{2, 3, 8 * up, 12 * up});
      CHECK(all_finite(hr));
    }
  }
}

TEST_CASE("zero input through the zero-initialized tail gives zero output") {
  const Network net = build_network(small("ms2"));
  const Tensor out = net.forward_sr(Tensor::zeros({1, 3, 8, 8}, DType::kF64));
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("divisibility violations name the padding") {
  const Network net = build_network(small("ms", 3));
  try {
    net.forward_sr(Tensor::zeros({1, 3, 10, 8}, DType::kF64));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("pad") != std::string::npos);
  }
  Rng rng(3);
  const Tensor odd = random_tensor({1, 3, 10, 9}, rng, 0, 1);
  CHECK(forward_sr_padded(net, odd).shape() == Shape{1, 3, 40, 36});
}

TEST_CASE("ms3 network has one shared diagonal per body unit") {
  ModelConfig c = small("ms3");
  c.num_blocks = 3;
  const Network net = build_network(c);
  std::set<std::uint64_t> diag;
  for (const LayerPtr& u : net.body_units()) {
    const auto& unit = dynamic_cast<const MSConvUnit&>(*u);
    CHECK(unit.spec().entries[0][0].conv.weight.share_id() == unit.spec().entries[1][1].conv.weight.share_id());
    diag.insert(unit.spec().entries[0][0].conv.weight.share_id());
  }
  CHECK(diag.size() == static_cast<std::size_t>(2 * c.num_blocks + 1));
}

TEST_CASE("deepen_to_target") {
  ModelConfig c;
  c.variant = "ms3";
  c.branches = 2;
  c.num_blocks = 4;
  const std::int64_t f4 = count_flops(build_network(c), 16, 16);
  CHECK(deepen_to_target(c, f4, 16, 16).num_blocks == 4);

  ModelConfig base;
  const std::int64_t target = count_flops(build_network(base), 16, 16) * 678 / 1000;
  const ModelConfig deep = deepen_to_target(c, target, 16, 16);
  const std::int64_t got = count_flops(build_network(deep), 16, 16);
  ModelConfig next = deep;
  ++next.num_blocks;
  CHECK(got <= target);
  CHECK(count_flops(build_network(next), 16, 16) > target);

  std::int64_t prev = 0;
  for (int n = 0; n < 6; ++n) {
    ModelConfig t = c;
    t.num_blocks = n;
    const std::int64_t f = count_flops(build_network(t), 8, 8);
    CHECK(f >= prev);
    prev = f;
  }
  CHECK_THROWS(deepen_to_target(c, f4 / 2, 16, 16));
}

TEST_CASE("unfolded baseline network reproduces the baseline") {
  ModelConfig c = small("baseline");
  c.image_residual = false;
  const Network net = build_network(c);
  // Randomize the tail so the comparison is not trivially zero.
  Rng rng(4);
  for (const auto& np : net.parameters()) {
    if (np.name == "tail.weight") Parameter(np.param).assign(random_tensor(np.param.shape(), rng));
  }
  const std::vector<std::int64_t> split{3, 5};
  struct Unfolded : ScaleLayer {
    MSConvUnit unit;
    std::vector<std::int64_t> split;
    ScaleFeatures forward(const ScaleFeatures& x, Tape* tape) const override {
      return ScaleFeatures::single(concat_groups(unit.forward(split_channels(x[0], split), tape)));
    }
    void conv_sites(const std::string& n, std::int64_t h, std::int64_t w, std::vector<ConvSite>& o) const override {
      unit.conv_sites(n, h, w, o);
    }
    void named_parameters(const std::string& p, std::vector<NamedParameter>& o) const override {
      unit.named_parameters(p, o);
    }
  };
  const Network unfolded = net.map_body_units([&](const LayerPtr& u) -> LayerPtr {
    const Conv& conv = dynamic_cast<const MSConvUnit&>(*u).spec().entries[0][0].conv;
    auto out = std::make_shared<Unfolded>();
    out->unit = unfold_standard(conv.weight, conv.bias, split);
    out->split = split;
    return out;
  });
  const Tensor lr = random_tensor({1, 3, 7, 5}, rng, 0, 1);
  const Tensor a = net.forward_sr(lr);
  CHECK(max_abs_diff(a, unfolded.forward_sr(lr)) <= 1e-10);
  double mag = 0.0;
  for (double v : a.data()) mag = std::max(mag, std::abs(v));
  CHECK(mag > 0.0);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  ModelConfig c = small("ms3");
  const Network net = build_network(c);
  Rng rng(5);
  for (const auto& np : net.parameters()) Parameter(np.param).assign(random_tensor(np.param.shape(), rng, -0.1, 0.1));
  const auto path = std::filesystem::temp_directory_path() / "msconv_test_ck.msck";
  save_checkpoint(path, net, {{"iteration", 7}});
  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.state["iteration"] == 7);
  CHECK(to_json(ck.config) == to_json(net.config()));
  const Network back = restore_network(ck);
  const auto a = net.parameters(), b = back.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(max_abs_diff(a[i].param.value(), b[i].param.value()) == 0.0);
  }
  const Tensor lr = random_tensor({1, 3, 4, 4}, rng, 0, 1);
  CHECK(max_abs_diff(net.forward_sr(lr), back.forward_sr(lr)) == 0.0);

  std::filesystem::resize_file(path, 20);
  CHECK_THROWS(load_checkpoint(path));
  std::filesystem::remove(path);
}
