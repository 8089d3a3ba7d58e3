#include <doctest.h>

#include <set>

#include "msconv/complexity.hpp"
#include "msconv/ops.hpp"
#include "msconv/sr_pipeline.hpp"
#include "msconv/unified_conv.hpp"
#include "msconv/verify.hpp"

using namespace msconv;

namespace {

const UnitOptions kF64{3, DType::kF64};

ScaleFeatures features(const std::vector<std::int64_t>& widths, std::int64_t h, Rng& rng, std::int64_t n = 1) {
  ScaleFeatures x;
  for (std::size_t i = 0; i < widths.size(); ++i) x.groups.push_back(random_tensor({n, widths[i], h >> i, h >> i}, rng));
  return x;
}

}  // namespace

TEST_CASE("identity matrix passes features through") {
  TransformSpec spec;
  spec.entries = {{TransformEntry::identity(), TransformEntry::zero()},
                  {TransformEntry::zero(), TransformEntry::identity()}};
  spec.in_channels = spec.out_channels = {2, 3};
  const MSConvUnit unit(spec, false);
  Rng rng(1);
  const ScaleFeatures x = features({2, 3}, 8, rng);
  const ScaleFeatures y = unit.forward(x, nullptr);
  CHECK(max_abs_diff(y[0], x[0]) == 0.0);
  CHECK(max_abs_diff(y[1], x[1]) == 0.0);
}

TEST_CASE("single-scale unit is a plain convolution") {
  Rng rng(2);
  const MSConvUnit unit = build_variant(Variant::kStandard, 1, std::vector<std::int64_t>{4}, rng, kF64);
  const Conv& c = unit.spec().entries[0][0].conv;
  const Tensor x = random_tensor({2, 4, 5, 7}, rng);
  const Tensor y = unit.forward(ScaleFeatures::single(x), nullptr)[0];
  CHECK(max_abs_diff(y, conv2d(x, c.weight.value(), c.bias.value(), {1, 1, 1})) == 0.0);
}

TEST_CASE("spec validation") {
  Rng rng(3);
  TransformSpec spec;
  spec.entries = {{TransformEntry::plain(Conv::init(2, 2, 3, rng))}};
  spec.in_channels = {2};
  spec.out_channels = {3};
  CHECK_THROWS_AS(spec.validate(), ShapeError);
  spec.out_channels = {2};
  CHECK_NOTHROW(spec.validate());

  TransformSpec steps;
  steps.entries = {{TransformEntry::plain(Conv::init(2, 2, 3, rng)), TransformEntry::conv_then_up(Conv::init(2, 2, 1, rng), 2)},
                   {TransformEntry::zero(), TransformEntry::plain(Conv::init(2, 2, 3, rng))}};
  steps.in_channels = steps.out_channels = {2, 2};
  CHECK_THROWS_AS(steps.validate(), ShapeError);

  TransformSpec ragged;
  ragged.entries = {{TransformEntry::identity(), TransformEntry::zero()}, {TransformEntry::identity()}};
  ragged.in_channels = ragged.out_channels = {2, 2};
  CHECK_THROWS_AS(ragged.validate(), ShapeError);

  const MSConvUnit unit = build_variant(Variant::kMs2, 2, std::vector<std::int64_t>{2, 2}, rng);
  CHECK_THROWS_AS(unit.forward(features({2, 3}, 8, rng), nullptr), ShapeError);
  CHECK_THROWS_AS(unit.forward(features({2}, 8, rng), nullptr), ShapeError);
}

TEST_CASE("variant matrices") {
  Rng rng(4);
  const std::vector<std::int64_t> w{32, 32};

  const MSConvUnit unet = build_variant(Variant::kUnet, 2, w, rng);
  CHECK(unet.spec().entries[0][0].kind == EntryKind::kIdentity);
  CHECK(unet.spec().entries[0][1].kind == EntryKind::kZero);
  CHECK(unet.spec().entries[1][0].kind == EntryKind::kZero);
  CHECK(unet.spec().entries[1][1].kind == EntryKind::kConv);
  CHECK(unet.spec().entries[1][1].conv.kernel() == 3);

  const MSConvUnit oct = build_variant(Variant::kOctave, 2, w, rng);
  CHECK(oct.spec().entries[0][1].kind == EntryKind::kConvThenUp);
  CHECK(oct.spec().entries[1][0].kind == EntryKind::kDownThenConv);
  CHECK(oct.spec().entries[1][0].down == DownKind::kAvg);

  const MSConvUnit ms = build_variant(Variant::kMs, 2, w, rng);
  CHECK(ms.spec().entries[0][1].kind == EntryKind::kZero);
  CHECK(ms.spec().entries[1][0].kind == EntryKind::kZero);
  CHECK(count_params(ms) == 2 * (32 * 32 * 9 + 32));

  CHECK(build_variant(Variant::kMs2NoLh, 2, w, rng).spec().entries[0][1].kind == EntryKind::kZero);
  CHECK(build_variant(Variant::kMs2NoLh, 2, w, rng).spec().entries[1][0].kind == EntryKind::kDownThenConv);
  CHECK(build_variant(Variant::kMs2NoHl, 2, w, rng).spec().entries[1][0].kind == EntryKind::kZero);
  CHECK(build_variant(Variant::kMs2NoHl, 2, w, rng).spec().entries[0][1].kind == EntryKind::kConvThenUp);

  const MSConvUnit ms3 = build_variant(Variant::kMs3, 2, w, rng);
  CHECK(ms3.shared());
  CHECK(ms3.spec().entries[0][0].conv.weight.share_id() == ms3.spec().entries[1][1].conv.weight.share_id());
  CHECK(ms3.spec().entries[0][1].conv.kernel() == 1);
  CHECK(ms3.spec().entries[1][0].conv.kernel() == 1);
  CHECK(ms3.spec().entries[0][1].conv.weight.share_id() != ms3.spec().entries[1][0].conv.weight.share_id());
  CHECK(count_params(ms3) == 9248 + 2 * 1056);

  const MSConvUnit large = build_variant(Variant::kMs3Large, 2, w, rng);
  CHECK(large.spec().entries[0][1].conv.kernel() == 3);

  const std::vector<std::int64_t> w3{8, 8, 8};
  const MSConvUnit mg = build_variant(Variant::kMultigrid, 3, w3, rng);
  CHECK(mg.spec().entries[0][2].kind == EntryKind::kZero);
  CHECK(mg.spec().entries[2][0].kind == EntryKind::kZero);
  CHECK(mg.spec().entries[0][1].kind == EntryKind::kUpThenConv);
  CHECK(mg.spec().entries[1][0].kind == EntryKind::kDownThenConv);
  CHECK(mg.spec().entries[1][0].down == DownKind::kMax);

  CHECK_THROWS(build_variant(Variant::kMultigrid, 2, w, rng));
  CHECK_THROWS(build_variant(Variant::kOctave, 3, w3, rng));
  CHECK_THROWS(parse_variant("tridiagonal"));
  for (Variant v : all_variants()) CHECK(parse_variant(variant_name(v)) == v);
}

TEST_CASE("multi-branch ms3") {
  Rng rng(5);
  const MSConvUnit one = build_multibranch_ms3(1, 8, rng);
  CHECK(one.scales() == 1);
  CHECK(one.spec().entries[0][0].conv.kernel() == 3);

  const MSConvUnit two = build_multibranch_ms3(2, 64, rng);
  const MSConvUnit ref = build_variant(Variant::kMs3, 2, std::vector<std::int64_t>{32, 32}, rng);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(two.spec().entries[i][j].kind == ref.spec().entries[i][j].kind);
      CHECK(two.spec().entries[i][j].conv.kernel() == ref.spec().entries[i][j].conv.kernel());
    }
  }
  CHECK_THROWS(build_multibranch_ms3(5, 64, rng));
  CHECK_THROWS(build_multibranch_ms3(0, 64, rng));

  // Entry (0, 2): 1x1 conv followed by two nearest upsampling steps.
  const MSConvUnit three = build_multibranch_ms3(3, 6, rng, kF64);
  const TransformEntry& e = three.spec().entries[0][2];
  CHECK(e.kind == EntryKind::kConvThenUp);
  CHECK(e.steps == 2);
  const Tensor x2 = random_tensor({1, 2, 2, 2}, rng);
  const Tensor expect = oracle::upsample2(oracle::upsample2(
      oracle::conv2d_direct(x2, e.conv.weight.value(), &e.conv.bias.value(), 1, 1, 0)));
  CHECK(max_abs_diff(three.apply_entry(0, 2, x2, nullptr), expect) <= 1e-14);
  const TransformEntry& down = three.spec().entries[2][0];
  CHECK(down.steps == 2);
  const Tensor x0 = random_tensor({1, 2, 8, 8}, rng);
  const Tensor expect_down = oracle::conv2d_direct(oracle::avg_pool2(oracle::avg_pool2(x0)), down.conv.weight.value(),
                                                   &down.conv.bias.value(), 1, 1, 0);
  CHECK(max_abs_diff(three.apply_entry(2, 0, x0, nullptr), expect_down) <= 1e-14);
}

TEST_CASE("unit output is the sum of its entries") {
  Rng rng(6);
  for (int s : {2, 3, 4}) {
    const MSConvUnit unit = build_multibranch_ms3(s, 2 * s, rng, kF64);
    const ScaleFeatures x = features(unit.spec().in_channels, 16, rng, 2);
    const ScaleFeatures y = unit.forward(x, nullptr);
    for (std::size_t i = 0; i < unit.scales(); ++i) {
      Tensor acc;
      for (std::size_t j = 0; j < unit.scales(); ++j) {
        const Tensor t = unit.apply_entry(i, j, x[j], nullptr);
        acc = acc.empty() ? t : add(acc, t);
      }
      CHECK(max_abs_diff(y[i], acc) <= 1e-12);
    }
  }
}

TEST_CASE("octave and ms2 shapes for even inputs") {
  Rng rng(7);
  for (Variant v : {Variant::kOctave, Variant::kMs2}) {
    const MSConvUnit unit = build_variant(v, 2, std::vector<std::int64_t>{3, 3}, rng);
    for (std::int64_t h : {2, 6, 10}) {
      ScaleFeatures x;
      x.groups = {random_tensor({1, 3, h, h + 2}, rng), random_tensor({1, 3, h / 2, h / 2 + 1}, rng)};
      const ScaleFeatures y = unit.forward(x, nullptr);
      CHECK(y[0].shape() == Shape{1, 3, h, h + 2});
      CHECK(y[1].shape() == Shape{1, 3, h / 2, h / 2 + 1});
    }
  }
}

TEST_CASE("unfold_standard") {
  Rng rng(8);
  const Parameter w(random_tensor({6, 6, 3, 3}, rng));
  const Parameter b(random_tensor({1, 6, 1, 1}, rng));
  const Tensor x = random_tensor({2, 6, 7, 5}, rng);
  const Tensor ref = conv2d(x, w.value(), b.value(), {1, 1, 1});

  const std::vector<std::int64_t> whole{6};
  const MSConvUnit single = unfold_standard(w, b, whole);
  CHECK(single.scales() == 1);
  CHECK(max_abs_diff(single.spec().entries[0][0].conv.weight.value(), w.value()) == 0.0);

  for (const std::vector<std::int64_t>& split :
       {std::vector<std::int64_t>{3, 3}, std::vector<std::int64_t>{1, 1, 1, 1, 1, 1}, std::vector<std::int64_t>{4, 2}}) {
    const MSConvUnit unit = unfold_standard(w, b, split);
    for (const auto& row : unit.spec().entries) {
      for (const auto& e : row) CHECK(e.kind == EntryKind::kConv);
    }
    CHECK(max_abs_diff(concat_groups(unit.forward(split_channels(x, split), nullptr)), ref) <= 1e-12);
  }
  CHECK_THROWS(unfold_standard(w, b, std::vector<std::int64_t>{3, 2}));
}

TEST_CASE("zero-path ablation: ms2_no_hl low output ignores the high input") {
  Rng rng(9);
  const MSConvUnit unit = build_variant(Variant::kMs2NoHl, 2, std::vector<std::int64_t>{3, 3}, rng, kF64);
  ScaleFeatures x = features({3, 3}, 8, rng);
  const Tensor ll = unit.apply_entry(1, 1, x[1], nullptr);
  CHECK(max_abs_diff(unit.forward(x, nullptr)[1], ll) == 0.0);
  x.groups[0] = random_tensor(x[0].shape(), rng, -100, 100);
  CHECK(max_abs_diff(unit.forward(x, nullptr)[1], ll) == 0.0);
  x.groups[1] = Tensor::zeros(x[1].shape());
  // Biases are zero at init, so a zero low input gives a zero low output.
  const ScaleFeatures y = unit.forward(x, nullptr);
  for (double v : y[1].data()) CHECK(v == 0.0);
}

TEST_CASE("ms3 diagonal stays shared across an optimizer step") {
  Rng rng(10);
  const MSConvUnit unit = build_variant(Variant::kMs3, 2, std::vector<std::int64_t>{2, 2}, rng, kF64);
  std::vector<NamedParameter> named;
  unit.named_parameters("u", named);
  std::vector<Parameter> params;
  for (const auto& np : named) params.push_back(np.param);
  std::set<std::uint64_t> diag{unit.spec().entries[0][0].conv.weight.share_id(),
                               unit.spec().entries[1][1].conv.weight.share_id()};
  CHECK(diag.size() == 1);

  Tape tape;
  const ScaleFeatures y = unit.forward(features({2, 2}, 8, rng), &tape);
  tape.backward(add(sum(y[0]), sum(y[1])));
  AdamState state;
  TrainConfig cfg;
  adam_step(params, state, 1e-2, cfg);
  CHECK(state.moments.size() == unique_parameters(params).size());
  CHECK(max_abs_diff(unit.spec().entries[0][0].conv.weight.value(), unit.spec().entries[1][1].conv.weight.value()) == 0.0);
}

TEST_CASE("split widths") {
  CHECK(split_widths(64, 2, false) == std::vector<std::int64_t>{32, 32});
  CHECK(split_widths(64, 3, false) == std::vector<std::int64_t>{22, 21, 21});
  CHECK(split_widths(64, 3, true) == std::vector<std::int64_t>{21, 21, 21});
  CHECK(split_widths(64, 4, false) == std::vector<std::int64_t>{16, 16, 16, 16});
}

TEST_CASE("FirstConv and LastConv") {
  Rng rng(11);
  const std::vector<std::int64_t> widths{4, 4};
  const FirstConv first(3, widths, rng, kF64);
  const Tensor img = random_tensor({1, 3, 8, 8}, rng);
  const ScaleFeatures s = split_to_scales(first, img);
  CHECK(s[0].shape() == Shape{1, 4, 8, 8});
  CHECK(s[1].shape() == Shape{1, 4, 4, 4});
  const Conv& c1 = first.convs()[1];
  CHECK(max_abs_diff(s[1], oracle::conv2d_direct(oracle::avg_pool2(img), c1.weight.value(), &c1.bias.value(), 1, 1, 1)) <=
        1e-12);

  const LastConv last(widths, 5, rng, kF64);
  const Tensor merged = aggregate_to_single(last, s);
  const Conv& l0 = last.convs()[0];
  const Conv& l1 = last.convs()[1];
  const Tensor expect = add(oracle::conv2d_direct(s[0], l0.weight.value(), &l0.bias.value(), 1, 1, 1),
                            oracle::upsample2(oracle::conv2d_direct(s[1], l1.weight.value(), &l1.bias.value(), 1, 1, 1)));
  CHECK(max_abs_diff(merged, expect) <= 1e-12);

  // S = 1 with identity-centred 3x3 kernels: split then aggregate returns the input.
  const auto identity_conv = [](std::int64_t c) {
    std::vector<double> v(static_cast<std::size_t>(c * c * 9), 0.0);
    for (std::int64_t i = 0; i < c; ++i) v[static_cast<std::size_t>((i * c + i) * 9 + 4)] = 1.0;
    return Tensor({c, c, 3, 3}, std::move(v));
  };
  const std::vector<std::int64_t> one{3};
  FirstConv f1(3, one, rng, kF64);
  LastConv l1c(one, 3, rng, kF64);
  Parameter(f1.convs()[0].weight).assign(identity_conv(3));
  Parameter(l1c.convs()[0].weight).assign(identity_conv(3));
  CHECK(max_abs_diff(aggregate_to_single(l1c, split_to_scales(f1, img)), img) == 0.0);
}
