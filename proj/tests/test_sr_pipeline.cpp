#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "msconv/json_util.hpp"
#include "msconv/ops.hpp"
#include "msconv/sr_pipeline.hpp"
#include "msconv/verify.hpp"

#ifndef MSCONV_FIXTURE_DIR
#error "MSCONV_FIXTURE_DIR must point at tests/fixtures"
#endif

using namespace msconv;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("msconv_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Scalar-loop PSNR written against the luma definition, independent of the library.
double reference_psnr(const Tensor& a, const Tensor& b, int border) {
  double se = 0.0;
  int count = 0;
  const Shape s = a.shape();
  for (std::int64_t y = border; y < s.h - border; ++y) {
    for (std::int64_t x = border; x < s.w - border; ++x) {
      double ya = 16.0 / 255.0 + (65.481 * a.at(0, 0, y, x) + 128.553 * a.at(0, 1, y, x) + 24.966 * a.at(0, 2, y, x)) / 255.0;
      double yb = 16.0 / 255.0 + (65.481 * b.at(0, 0, y, x) + 128.553 * b.at(0, 1, y, x) + 24.966 * b.at(0, 2, y, x)) / 255.0;
      ya = std::clamp(ya, 0.0, 1.0);
      yb = std::clamp(yb, 0.0, 1.0);
      se += (ya - yb) * (ya - yb);
      ++count;
    }
  }
  return 10.0 * std::log10(count / se);
}

ModelConfig tiny_model(std::uint64_t seed = 1) {
  ModelConfig m;
  m.variant = "ms3";
  m.branches = 2;
  m.num_blocks = 2;
  m.width = 8;
  m.upscale = 2;
  m.dtype = DType::kF64;
  m.seed = seed;
  return m;
}

SrData tiny_data(int train = 8) {
  DatasetSpec d;
  d.synthetic_train = train;
  d.synthetic_eval = 2;
  d.synthetic_size = 48;
  d.seed = 11;
  return load_data(d, 2, DType::kF64);
}

TrainConfig tiny_train(std::int64_t iters) {
  TrainConfig t;
  t.batch = 2;
  t.hr_patch = 16;
  t.lr = 1e-3;
  t.total_iters = iters;
  t.halve_every = iters;
  t.seed = 5;
  t.log_every = 0;
  t.smooth_window = 20;
  return t;
}

}  // namespace

TEST_CASE("PNM round trip") {
  const fs::path dir = scratch_dir("pnm");
  Rng rng(1);
  std::vector<double> v(3 * 5 * 4);
  for (double& e : v) e = static_cast<double>(rng.below(256)) / 255.0;
  const Tensor rgb({1, 3, 5, 4}, v);
  write_pnm(dir / "a.ppm", rgb);
  CHECK(max_abs_diff(read_pnm(dir / "a.ppm"), rgb) <= 1e-15);

  const Tensor gray({1, 1, 2, 3}, {0, 1, 0.5, 0.25, 1, 0});
  write_pnm(dir / "g.pgm", gray);
  const Tensor back = read_pnm(dir / "g.pgm");
  CHECK(back.shape() == gray.shape());
  CHECK(back.at(0, 0, 0, 2) == doctest::Approx(128.0 / 255.0));

  std::ofstream(dir / "bad.ppm") << "P3\n1 1\n255\n0 0 0\n";
  CHECK_THROWS_AS(read_pnm(dir / "bad.ppm"), FormatError);
  std::ofstream(dir / "deep.ppm") << "P6\n1 1\n65535\n";
  CHECK_THROWS_AS(read_pnm(dir / "deep.ppm"), FormatError);
  CHECK(list_images(dir).size() == 4);
  fs::remove_all(dir);
}

TEST_CASE("PSNR on the shipped fixture pair") {
  const Tensor a = read_pnm(fs::path(MSCONV_FIXTURE_DIR) / "psnr_a.ppm");
  const Tensor b = read_pnm(fs::path(MSCONV_FIXTURE_DIR) / "psnr_b.ppm");
  REQUIRE(a.shape() == Shape{1, 3, 16, 16});
  // Values computed with numpy from the same bytes.
  CHECK(std::abs(psnr_y(a, b, 0) - 35.79150835314339) <= 1e-9);
  CHECK(std::abs(psnr_y(a, b, 2) - 36.25489114926468) <= 1e-9);
  CHECK(std::abs(psnr_y(a, b, 4) - 36.099461025812055) <= 1e-9);
  for (int border : {0, 1, 3}) CHECK(std::abs(psnr_y(a, b, border) - reference_psnr(a, b, border)) <= 1e-9);
}

TEST_CASE("PSNR closed forms") {
  Rng rng(2);
  const Tensor x = random_tensor({1, 3, 8, 8}, rng, 0.2, 0.8);
  CHECK(psnr_y(x, x, 0) == kPsnrIdentical);
  // A shift of d on every channel moves Y by 219 d / 255.
  std::vector<double> shifted(x.data().begin(), x.data().end());
  for (double& v : shifted) v += 1.0 / 219.0;
  CHECK(psnr_y(Tensor(x.shape(), shifted), x, 0) == doctest::Approx(20.0 * std::log10(255.0)).epsilon(1e-9));
  CHECK_THROWS(psnr_y(x, random_tensor({1, 3, 8, 6}, rng), 0));
}

TEST_CASE("bicubic resize") {
  Rng rng(3);
  const Tensor x = random_tensor({2, 3, 7, 9}, rng);
  CHECK(max_abs_diff(bicubic_resize(x, 1.0), x) <= 1e-12);
  for (double s : {0.25, 0.5, 2.0, 3.0}) {
    const Tensor y = bicubic_resize(Tensor::full({1, 1, 8, 8}, 0.3), s);
    for (double v : y.data()) CHECK(v == doctest::Approx(0.3).epsilon(1e-12));
  }
  std::vector<double> ramp(64);
  for (int i = 0; i < 64; ++i) ramp[static_cast<std::size_t>(i)] = (i % 8) * 0.1 + (i / 8) * 0.05;
  const Tensor r({1, 1, 8, 8}, ramp);
  CHECK(bicubic_resize(r, 0.5).shape() == Shape{1, 1, 4, 4});
  CHECK(max_abs_diff(bicubic_resize(r, 0.5), oracle::bicubic_resize(r, 0.5)) <= 1e-12);
  CHECK(bicubic_resize(Tensor::zeros({1, 1, 5, 5}), 0.5).shape() == Shape{1, 1, 3, 3});
  CHECK_THROWS(bicubic_resize(x, 0.0));
  CHECK_THROWS(bicubic_resize(Tensor::zeros({1, 1, 1, 1}), 0.1));
  CHECK(cubic_kernel(0.0) == 1.0);
  CHECK(cubic_kernel(1.0) == 0.0);
  CHECK(cubic_kernel(2.5) == 0.0);
}

TEST_CASE("degradation round trip stays finite and positive") {
  const Tensor hr = synthetic_image(48, 48, 9);
  const Tensor back = bicubic_resize(bicubic_resize(hr, 0.25), 4.0);
  const double p = psnr_y(back, hr, 4);
  CHECK(std::isfinite(p));
  CHECK(p > 0.0);
}

TEST_CASE("patch sampling") {
  const Tensor hr = synthetic_image(40, 48, 4);
  Rng r1(7), r2(7);
  const PatchPair a = sample_patch(hr, 16, 4, false, r1);
  const PatchPair b = sample_patch(hr, 16, 4, false, r2);
  CHECK(max_abs_diff(a.hr, b.hr) == 0.0);
  CHECK(max_abs_diff(a.lr, b.lr) == 0.0);
  CHECK(a.lr.shape() == Shape{1, 3, 4, 4});
  CHECK(a.hr.shape() == Shape{1, 3, 16, 16});
  CHECK_THROWS(sample_patch(hr, 64, 4, false, r1));

  // Augmentation commutes with the degradation.
  for (int mask = 0; mask < 8; ++mask) {
    const Augment aug{(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0};
    const Tensor patch = crop(hr, 4, 8, 16, 24);
    const Tensor lhs = bicubic_resize(augment(patch, aug), 0.5);
    const Tensor rhs = augment(bicubic_resize(patch, 0.5), aug);
    CHECK(max_abs_diff(lhs, rhs) <= 1e-9);
  }

  TrainConfig cfg;
  cfg.batch = 3;
  cfg.hr_patch = 16;
  cfg.seed = 2;
  const std::vector<Tensor> images{hr, synthetic_image(32, 32, 5)};
  const PatchPair x = sample_batch(images, cfg, 2, 17);
  const PatchPair y = sample_batch(images, cfg, 2, 17);
  CHECK(x.hr.shape() == Shape{3, 3, 16, 16});
  CHECK(max_abs_diff(x.hr, y.hr) == 0.0);
  CHECK(max_abs_diff(x.hr, sample_batch(images, cfg, 2, 18).hr) > 0.0);
}

TEST_CASE("sub-image cropping covers the whole image") {
  const Tensor img = synthetic_image(100, 130, 3);
  const auto subs = crop_subimages(img, 48, 40);
  // Rows start at 0, 40, 52; columns at 0, 40, 80, 82.
  CHECK(subs.size() == 3 * 4);
  for (const Tensor& s : subs) CHECK(s.shape() == Shape{1, 3, 48, 48});
  CHECK(max_abs_diff(subs.back(), crop(img, 52, 82, 48, 48)) == 0.0);
  CHECK(crop_subimages(synthetic_image(30, 30, 1), 48, 24).size() == 1);
  CHECK(mod_crop(img, 8).shape() == Shape{1, 3, 96, 128});
}

TEST_CASE("loss, Adam and schedule") {
  TrainConfig cfg;
  CHECK(lr_at(0, cfg) == 2e-4);
  CHECK(lr_at(249999, cfg) == 2e-4);
  CHECK(lr_at(250000, cfg) == 1e-4);
  CHECK(lr_at(500000, cfg) == 5e-5);

  for (double g : {0.3, -2.0}) {
    Parameter p(Tensor::full({1, 1, 1, 1}, 1.0));
    p.accumulate_grad(std::vector<double>{g});
    AdamState state;
    const std::vector<Parameter> ps{p};
    adam_step(ps, state, 0.01, cfg);
    const double moved = p.value().item() - 1.0;
    CHECK(moved * g < 0.0);
    CHECK(std::abs(moved) == doctest::Approx(0.01).epsilon(1e-6));
  }

  // Step-1 direction is invariant to gradient scale.
  Rng rng(4);
  const Tensor grad = random_tensor({1, 2, 3, 3}, rng);
  std::vector<double> updates[2];
  for (int k = 0; k < 2; ++k) {
    Parameter p(Tensor::zeros({1, 2, 3, 3}));
    std::vector<double> g(grad.data().begin(), grad.data().end());
    for (double& e : g) e *= k == 0 ? 1.0 : 1000.0;
    p.accumulate_grad(g);
    AdamState state;
    const std::vector<Parameter> ps{p};
    adam_step(ps, state, 1e-3, cfg);
    updates[k].assign(p.value().data().begin(), p.value().data().end());
  }
  for (std::size_t i = 0; i < updates[0].size(); ++i) {
    CHECK(std::signbit(updates[0][i]) == std::signbit(updates[1][i]));
    // |g| / (|g| + eps) differs from 1 by at most eps / |g|.
    const double g = std::abs(grad.data()[i]);
    CHECK(std::abs(updates[0][i] / updates[1][i] - 1.0) <= 2.0 * cfg.eps / g);
  }
}

TEST_CASE("train config validation and json") {
  TrainConfig t;
  t.total_iters = 100;
  t.halve_every = 200;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t.halve_every = 50;
  CHECK_NOTHROW(t.validate());
  t.lr = -1.0;
  CHECK_THROWS_AS(t.validate(), ConfigError);

  TrainConfig d;
  CHECK(d.batch == 16);
  CHECK(d.hr_patch == 128);
  CHECK(d.lr == 2e-4);
  CHECK(d.beta1 == 0.9);
  CHECK(d.beta2 == 0.999);
  CHECK(d.eps == 1e-8);
  CHECK(d.halve_every == 250000);
  CHECK(d.total_iters == 1000000);
  CHECK(to_json(train_config_from_json(to_json(d))) == to_json(d));
  nlohmann::json j = to_json(d);
  j["momentum"] = 0.5;
  try {
    train_config_from_json(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "train.momentum");
  }
  DatasetSpec ds;
  CHECK(ds.subimage == 480);
  CHECK(ds.subimage_stride == 240);
  CHECK(to_json(dataset_spec_from_json(to_json(ds))) == to_json(ds));
}

TEST_CASE("short training reduces the loss") {
  Network net = build_network(tiny_model());
  const SrData data = tiny_data();
  const RunRecord rec = train_loop(net, data, tiny_train(200));
  CHECK(rec.losses.size() == 200);
  CHECK(rec.smoothed_final(20) < rec.smoothed_initial(20));
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  Network net = build_network(tiny_model());
  std::vector<Tensor> before;
  for (const auto& np : net.parameters()) before.push_back(np.param.value());
  TrainConfig t = tiny_train(5);
  t.lr = 0.0;
  train_loop(net, tiny_data(2), t);
  const auto after = net.parameters();
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(max_abs_diff(before[i], after[i].param.value()) == 0.0);
}

TEST_CASE("runs are deterministic and resume bit-exactly") {
  const SrData data = tiny_data(4);
  TrainConfig t = tiny_train(12);
  t.checkpoint_every = 5;
  const fs::path dir = scratch_dir("resume");

  Network a = build_network(tiny_model());
  TrainOptions opts;
  opts.out_dir = dir;
  const RunRecord full = train_loop(a, data, t, opts);

  Network b = build_network(tiny_model());
  const RunRecord again = train_loop(b, data, t);
  CHECK(again.losses == full.losses);

  Network c = build_network(tiny_model());
  TrainOptions resume;
  resume.resume = dir / "iter_5.msck";
  const RunRecord tail = train_loop(c, data, t, resume);
  CHECK(tail.start_iteration == 5);
  REQUIRE(tail.losses.size() == 7);
  for (std::size_t i = 0; i < tail.losses.size(); ++i) CHECK(tail.losses[i] == full.losses[5 + i]);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK_MESSAGE(max_abs_diff(pa[i].param.value(), pb[i].param.value()) == 0.0, pa[i].name);
    CHECK_MESSAGE(max_abs_diff(pa[i].param.value(), pc[i].param.value()) == 0.0, pa[i].name, " ", max_abs_diff(pa[i].param.value(), pc[i].param.value()));
  }

  CHECK(fs::exists(dir / "final.msck"));
  std::ifstream run(dir / "run.txt");
  std::string first;
  std::getline(run, first);
  CHECK(first.find("iter") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("evaluation reports the bicubic baseline") {
  Network net = build_network(tiny_model());
  const SrData data = tiny_data(2);
  const EvalResult r = evaluate(net, data.eval);
  REQUIRE(r.rows.size() == 2);
  // Untrained nets with a zero tail reproduce bicubic exactly.
  CHECK(r.mean_psnr == doctest::Approx(r.mean_bicubic_psnr).epsilon(1e-12));
}
