#include <doctest.h>

#include "msconv/complexity.hpp"
#include "msconv/ops.hpp"
#include "msconv/pilot_equiv.hpp"
#include "msconv/verify.hpp"

using namespace msconv;

TEST_CASE("case a is a plain conv") {
  Rng rng(1);
  const PilotUnit a = build_pilot_case('a', 2, 3, rng, DType::kF64);
  const Conv& c = a.branches()[0].atoms[0].conv;
  const Tensor x = random_tensor({1, 2, 6, 6}, rng);
  CHECK(max_abs_diff(a.forward(ScaleFeatures::single(x), nullptr)[0],
                     conv2d(x, c.weight.value(), c.bias.value(), {1, 1, 1})) == 0.0);
  CHECK(a.describe() == "W_d1");
}

TEST_CASE("case descriptions") {
  Rng rng(2);
  CHECK(build_pilot_case('b', 2, 2, rng).describe() == "W_d2");
  CHECK(build_pilot_case('c', 2, 2, rng).describe() == "W_d1 + W_d2");
  CHECK(build_pilot_case('d', 2, 2, rng).describe() == "W_d2-D2-U2");
  CHECK(build_pilot_case('e', 2, 2, rng).describe() == "Pool_s1-W_d2-D2-U2");
  CHECK_THROWS(build_pilot_case('f', 2, 2, rng));
}

TEST_CASE("case c shares one weight across both dilations") {
  Rng rng(3);
  const PilotUnit c = build_pilot_case('c', 4, 4, rng);
  CHECK(c.branches().size() == 2);
  CHECK(c.branches()[0].atoms[0].conv.weight.share_id() == c.branches()[1].atoms[0].conv.weight.share_id());
  CHECK(distinct_branch_weights(c) == 1);
  CHECK(distinct_branch_weights(build_pilot_case('c', 4, 4, rng, DType::kF32, false)) == 2);
  CHECK(distinct_branch_weights(build_pilot_case('b', 4, 4, rng)) == 1);
  // Same conv structure as the unshared twin, fewer parameters.
  const PilotUnit twin = build_pilot_case('c', 4, 4, rng, DType::kF32, false);
  CHECK(count_flops(c, 8, 8) == count_flops(twin, 8, 8));
  CHECK(count_params(c) < count_params(twin));
}

TEST_CASE("cases a and d have equal parameter counts") {
  Rng rng(4);
  CHECK(count_params(build_pilot_case('a', 16, 16, rng)) == count_params(build_pilot_case('d', 16, 16, rng)));
}

TEST_CASE("rearrangement identity") {
  Rng rng(5);
  for (auto [h, w] : {std::pair<std::int64_t, std::int64_t>{8, 8}, {16, 16}, {8, 12}}) {
    for (int k : {1, 3, 5, 7}) {
      const Parameter wt(random_tensor({3, 2, k, k}, rng));
      const Tensor x = random_tensor({2, 2, h, w}, rng);
      CHECK(check_rearrangement_identity(wt, x) <= 1e-12);
      CHECK(check_rearrangement_identity_up(wt, x) <= 1e-12);
    }
  }
  CHECK_THROWS_AS(check_rearrangement_identity(Parameter(Tensor::zeros({1, 1, 3, 3})), Tensor::zeros({1, 1, 7, 8})),
                  ShapeError);
}

TEST_CASE("constant input with a mean-zero kernel vanishes away from borders") {
  std::vector<double> k(9, 0.0);
  k[0] = 1.0;
  k[8] = -1.0;
  const Parameter wt(Tensor({1, 1, 3, 3}, k));
  const Tensor x = Tensor::full({1, 1, 16, 16}, 2.0);
  const Tensor lhs = conv2d(nearest_subsample2(x), wt.value(), std::nullopt, {1, 1, 1});
  // Interior of the 8x8 result is exactly zero; the identity holds everywhere.
  for (std::int64_t y = 1; y < 7; ++y) {
    for (std::int64_t xx = 1; xx < 7; ++xx) CHECK(lhs.at(0, 0, y, xx) == 0.0);
  }
  CHECK(check_rearrangement_identity(wt, x) == 0.0);
}

TEST_CASE("case d equals D2 then W_d1 then U2") {
  Rng rng(6);
  const PilotUnit d = build_pilot_case('d', 3, 3, rng, DType::kF64);
  Conv w1 = d.branches()[0].atoms[0].conv;
  w1.dilation = 1;
  const PipelineFn alt{{Atom::d2(), Atom::conv_atom(w1), Atom::u2()}};
  const Tensor x = random_tensor({2, 3, 8, 12}, rng);
  CHECK(max_abs_diff(d.forward(ScaleFeatures::single(x), nullptr)[0], alt.apply(x, nullptr)) <= 1e-12);
}

TEST_CASE("case e differs from d only by the stride-1 pre-pool") {
  Rng rng(7);
  const PilotUnit d = build_pilot_case('d', 1, 1, rng, DType::kF64);
  const PilotUnit e(d.id(), {PipelineFn{{Atom::pool(1), d.branches()[0].atoms[0], Atom::d2(), Atom::u2()}}});
  // Impulse at (4, 6); the 2x2 sliding mean spreads it over (3..4, 5..6).
  std::vector<double> v(16 * 16, 0.0);
  v[4 * 16 + 6] = 1.0;
  const Tensor impulse({1, 1, 16, 16}, v);
  const Tensor pooled = avg_pool2_stride1(impulse);
  for (std::int64_t y = 0; y < 16; ++y) {
    for (std::int64_t x = 0; x < 16; ++x) {
      const bool inside = (y == 3 || y == 4) && (x == 5 || x == 6);
      CHECK(pooled.at(0, 0, y, x) == (inside ? 0.25 : 0.0));
    }
  }
  const Tensor ye = e.forward(ScaleFeatures::single(impulse), nullptr)[0];
  const Tensor yd = d.forward(ScaleFeatures::single(pooled), nullptr)[0];
  CHECK(max_abs_diff(ye, yd) == 0.0);
}

TEST_CASE("pilot networks build with the expected structure") {
  PilotConfig cfg;
  cfg.num_blocks = 2;
  for (char id : {'a', 'b', 'c', 'd', 'e'}) {
    const Network net = build_pilot_network(id, cfg);
    CHECK(net.body_units().size() == 5);
    const Tensor out = net.forward_sr(Tensor::full({1, 3, 8, 8}, 0.5, DType::kF64));
    CHECK(out.shape() == Shape{1, 3, 32, 32});
  }
  CHECK(count_params(build_pilot_network('a', cfg)) == count_params(build_pilot_network('d', cfg)));
  CHECK(count_params(build_pilot_network('c', cfg)) == count_params(build_pilot_network('a', cfg)));
}
