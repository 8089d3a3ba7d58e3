#include "msconv/sr_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "msconv/json_util.hpp"
#include "msconv/ops.hpp"

namespace msconv {

namespace fs = std::filesystem;

// ---- images ---------------------------------------------------------------

namespace {

std::string next_token(std::istream& is) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

std::int64_t header_int(std::istream& is, const fs::path& path) {
  const std::string tok = next_token(is);
  try {
    std::size_t used = 0;
    const long long v = std::stoll(tok, &used);
    if (used == tok.size() && v > 0) return v;
  } catch (const std::exception&) {
  }
  throw FormatError("bad header field '" + tok + "' in " + path.string());
}

}  // namespace

Tensor read_pnm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  const std::string magic = next_token(is);
  std::int64_t channels;
  if (magic == "P6") {
    channels = 3;
  } else if (magic == "P5") {
    channels = 1;
  } else {
    throw FormatError(path.string() + " is not a binary PPM/PGM");
  }
  const std::int64_t w = header_int(is, path);
  const std::int64_t h = header_int(is, path);
  const std::int64_t maxval = header_int(is, path);
  if (maxval > 255) throw FormatError("only 8-bit images are supported: " + path.string());
  std::vector<unsigned char> raw(static_cast<std::size_t>(w * h * channels));
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw FormatError("truncated pixel data in " + path.string());
  }
  std::vector<double> v(raw.size());
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t p = 0; p < h * w; ++p) {
      v[static_cast<std::size_t>(c * h * w + p)] =
          raw[static_cast<std::size_t>(p * channels + c)] / static_cast<double>(maxval);
    }
  }
  return Tensor({1, channels, h, w}, std::move(v));
}

void write_pnm(const fs::path& path, const Tensor& img) {
  const Shape s = img.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) throw ShapeError("can only write 1- or 3-channel single images");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os << (s.c == 3 ? "P6" : "P5") << "\n" << s.w << " " << s.h << "\n255\n";
  const auto d = img.data();
  std::vector<unsigned char> raw(static_cast<std::size_t>(s.numel()));
  for (std::int64_t c = 0; c < s.c; ++c) {
    for (std::int64_t p = 0; p < s.plane(); ++p) {
      const double v = std::clamp(d[static_cast<std::size_t>(c * s.plane() + p)], 0.0, 1.0);
      raw[static_cast<std::size_t>(p * s.c + c)] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw FormatError("failed writing " + path.string());
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".ppm" || ext == ".pgm")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Tensor crop(const Tensor& img, std::int64_t top, std::int64_t left, std::int64_t h, std::int64_t w) {
  const Shape s = img.shape();
  if (top < 0 || left < 0 || h < 1 || w < 1 || top + h > s.h || left + w > s.w) {
    throw ShapeError("crop window out of bounds for " + s.str());
  }
  const auto d = img.data();
  std::vector<double> out(static_cast<std::size_t>(s.n * s.c * h * w));
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    for (std::int64_t y = 0; y < h; ++y) {
      const auto row = d.begin() + (p * s.h + top + y) * s.w + left;
      std::copy(row, row + w, out.begin() + (p * h + y) * w);
    }
  }
  return Tensor({s.n, s.c, h, w}, std::move(out), img.dtype());
}

Tensor mod_crop(const Tensor& img, std::int64_t multiple) {
  const Shape s = img.shape();
  const std::int64_t h = s.h - s.h % multiple;
  const std::int64_t w = s.w - s.w % multiple;
  if (h == s.h && w == s.w) return img;
  return crop(img, 0, 0, h, w);
}

namespace {

std::vector<std::int64_t> window_starts(std::int64_t extent, std::int64_t size, std::int64_t stride) {
  std::vector<std::int64_t> starts;
  for (std::int64_t p = 0; p + size <= extent; p += stride) starts.push_back(p);
  if (!starts.empty() && starts.back() + size < extent) starts.push_back(extent - size);
  return starts;
}

}  // namespace

std::vector<Tensor> crop_subimages(const Tensor& img, std::int64_t size, std::int64_t stride) {
  if (size < 1 || stride < 1) throw std::invalid_argument("sub-image size and stride must be positive");
  const Shape s = img.shape();
  if (s.h < size || s.w < size) return {img};
  std::vector<Tensor> out;
  for (std::int64_t y : window_starts(s.h, size, stride)) {
    for (std::int64_t x : window_starts(s.w, size, stride)) out.push_back(crop(img, y, x, size, size));
  }
  return out;
}

// ---- data -----------------------------------------------------------------

Tensor augment(const Tensor& img, const Augment& a) {
  if (!a.hflip && !a.vflip && !a.transpose) return img;
  const Shape s = img.shape();
  const Shape os = a.transpose ? Shape{s.n, s.c, s.w, s.h} : s;
  const auto d = img.data();
  std::vector<double> out(static_cast<std::size_t>(s.numel()));
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    for (std::int64_t y = 0; y < os.h; ++y) {
      for (std::int64_t x = 0; x < os.w; ++x) {
        std::int64_t sy = a.transpose ? x : y;
        std::int64_t sx = a.transpose ? y : x;
        if (a.vflip) sy = s.h - 1 - sy;
        if (a.hflip) sx = s.w - 1 - sx;
        out[static_cast<std::size_t>((p * os.h + y) * os.w + x)] = d[static_cast<std::size_t>((p * s.h + sy) * s.w + sx)];
      }
    }
  }
  return Tensor(os, std::move(out), img.dtype());
}

void TrainConfig::validate() const {
  const auto bad = [](const char* key, const std::string& what) { return ConfigError(std::string("train.") + key, what); };
  if (batch < 1) throw bad("batch", "train.batch must be >= 1");
  if (hr_patch < 1) throw bad("hr_patch", "train.hr_patch must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw bad("lr", "train.lr must be finite and >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw bad("beta1", "train.beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw bad("beta2", "train.beta2 must be in [0, 1)");
  if (!(eps > 0.0) || !std::isfinite(eps)) throw bad("eps", "train.eps must be finite and > 0");
  if (total_iters < 0) throw bad("total_iters", "train.total_iters must be >= 0");
  if (halve_every < 1 || halve_every > std::max<std::int64_t>(total_iters, 1)) {
    throw bad("halve_every", "train.halve_every must be in [1, total_iters]");
  }
  if (checkpoint_every < 0 || eval_every < 0 || log_every < 0) {
    throw bad("checkpoint_every", "train intervals must be >= 0");
  }
  if (smooth_window < 1) throw bad("smooth_window", "train.smooth_window must be >= 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch", c.batch},
          {"hr_patch", c.hr_patch},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"halve_every", c.halve_every},
          {"total_iters", c.total_iters},
          {"seed", c.seed},
          {"augment", c.augment},
          {"checkpoint_every", c.checkpoint_every},
          {"eval_every", c.eval_every},
          {"log_every", c.log_every},
          {"smooth_window", c.smooth_window}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  const std::string sec = "train";
  reject_unknown_keys(j, {"batch", "hr_patch", "lr", "beta1", "beta2", "eps", "halve_every", "total_iters", "seed",
                          "augment", "checkpoint_every", "eval_every", "log_every", "smooth_window"},
                      sec);
  TrainConfig c;
  read_field(j, "batch", sec, c.batch);
  read_field(j, "hr_patch", sec, c.hr_patch);
  read_field(j, "lr", sec, c.lr);
  read_field(j, "beta1", sec, c.beta1);
  read_field(j, "beta2", sec, c.beta2);
  read_field(j, "eps", sec, c.eps);
  read_field(j, "halve_every", sec, c.halve_every);
  read_field(j, "total_iters", sec, c.total_iters);
  read_field(j, "seed", sec, c.seed);
  read_field(j, "augment", sec, c.augment);
  read_field(j, "checkpoint_every", sec, c.checkpoint_every);
  read_field(j, "eval_every", sec, c.eval_every);
  read_field(j, "log_every", sec, c.log_every);
  read_field(j, "smooth_window", sec, c.smooth_window);
  c.validate();
  return c;
}

nlohmann::json to_json(const DatasetSpec& d) {
  return {{"hr_dir", d.hr_dir},
          {"eval_dir", d.eval_dir},
          {"synthetic_train", d.synthetic_train},
          {"synthetic_eval", d.synthetic_eval},
          {"synthetic_size", d.synthetic_size},
          {"subimage", d.subimage},
          {"subimage_stride", d.subimage_stride},
          {"seed", d.seed}};
}

DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
  const std::string sec = "data";
  reject_unknown_keys(j, {"hr_dir", "eval_dir", "synthetic_train", "synthetic_eval", "synthetic_size", "subimage",
                          "subimage_stride", "seed"},
                      sec);
  DatasetSpec d;
  read_field(j, "hr_dir", sec, d.hr_dir);
  read_field(j, "eval_dir", sec, d.eval_dir);
  read_field(j, "synthetic_train", sec, d.synthetic_train);
  read_field(j, "synthetic_eval", sec, d.synthetic_eval);
  read_field(j, "synthetic_size", sec, d.synthetic_size);
  read_field(j, "subimage", sec, d.subimage);
  read_field(j, "subimage_stride", sec, d.subimage_stride);
  read_field(j, "seed", sec, d.seed);
  if (d.synthetic_train < 1 || d.synthetic_eval < 1) throw ConfigError("data", "synthetic image counts must be >= 1");
  if (d.synthetic_size < 8) throw ConfigError("data.synthetic_size", "data.synthetic_size must be >= 8");
  if (d.subimage < 1 || d.subimage_stride < 1) throw ConfigError("data.subimage", "sub-image size and stride must be >= 1");
  return d;
}

Tensor synthetic_image(std::int64_t h, std::int64_t w, std::uint64_t seed, DType dtype) {
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(3 * h * w));
  const auto px = [&](std::int64_t c, std::int64_t y, std::int64_t x) -> double& {
    return v[static_cast<std::size_t>((c * h + y) * w + x)];
  };
  for (std::int64_t c = 0; c < 3; ++c) {
    const double a = rng.uniform(0.2, 0.8), gy = rng.uniform(-0.3, 0.3), gx = rng.uniform(-0.3, 0.3);
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        px(c, y, x) = a + gy * (static_cast<double>(y) / h - 0.5) + gx * (static_cast<double>(x) / w - 0.5);
      }
    }
  }
  const int shapes = 6 + static_cast<int>(rng.below(6));
  for (int k = 0; k < shapes; ++k) {
    const double cy = rng.uniform(0, static_cast<double>(h)), cx = rng.uniform(0, static_cast<double>(w));
    const double ry = rng.uniform(3, static_cast<double>(h) / 3), rx = rng.uniform(3, static_cast<double>(w) / 3);
    const double color[3] = {rng.uniform(), rng.uniform(), rng.uniform()};
    const auto kind = rng.below(3);
    const double period = rng.uniform(8.0, 16.0), angle = rng.uniform(0.0, M_PI);
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const double dy = (static_cast<double>(y) - cy) / ry, dx = (static_cast<double>(x) - cx) / rx;
        bool inside = false;
        switch (kind) {
          case 0: inside = std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0; break;
          case 1: inside = dy * dy + dx * dx <= 1.0; break;
          default:
            inside = std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0 &&
                     std::sin(2.0 * M_PI * (y * std::cos(angle) + x * std::sin(angle)) / period) > 0.0;
        }
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) px(c, y, x) = color[c];
      }
    }
  }
  for (double& e : v) e = std::clamp(e, 0.0, 1.0);
  return Tensor({1, 3, h, w}, std::move(v), dtype);
}

EvalPair make_eval_pair(std::string name, const Tensor& hr, int upscale) {
  Tensor h = mod_crop(hr, upscale);
  return {std::move(name), bicubic_resize(h, 1.0 / upscale), h};
}

SrData load_data(const DatasetSpec& spec, int upscale, DType dtype) {
  SrData data;
  if (spec.hr_dir.empty()) {
    for (int i = 0; i < spec.synthetic_train; ++i) {
      data.train_hr.push_back(
          synthetic_image(spec.synthetic_size, spec.synthetic_size, splitmix64(spec.seed) + 2 * i, dtype));
    }
  } else {
    for (const auto& p : list_images(spec.hr_dir)) {
      for (Tensor& sub : crop_subimages(read_pnm(p).to(dtype), spec.subimage, spec.subimage_stride)) {
        data.train_hr.push_back(mod_crop(sub, upscale));
      }
    }
    if (data.train_hr.empty()) throw FormatError("no training images in " + spec.hr_dir);
  }
  if (spec.eval_dir.empty()) {
    for (int i = 0; i < spec.synthetic_eval; ++i) {
      // Odd seeds never coincide with the even training seeds.
      const Tensor hr = synthetic_image(spec.synthetic_size, spec.synthetic_size, splitmix64(spec.seed) + 2 * i + 1, dtype);
      data.eval.push_back(make_eval_pair("synthetic" + std::to_string(i), hr, upscale));
    }
  } else {
    for (const auto& p : list_images(spec.eval_dir)) {
      data.eval.push_back(make_eval_pair(p.filename().string(), read_pnm(p).to(dtype), upscale));
    }
    if (data.eval.empty()) throw FormatError("no evaluation images in " + spec.eval_dir);
  }
  return data;
}

PatchPair sample_patch(const Tensor& hr, int hr_patch, int upscale, bool do_augment, Rng& rng) {
  const Shape s = hr.shape();
  if (hr_patch % upscale != 0) throw ShapeError("patch size must be a multiple of the upscale factor");
  if (s.h < hr_patch || s.w < hr_patch) {
    throw ShapeError("image " + s.str() + " is smaller than the " + std::to_string(hr_patch) + " pixel patch");
  }
  const auto pick = [&](std::int64_t extent) {
    return upscale * static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>((extent - hr_patch) / upscale + 1)));
  };
  const std::int64_t top = pick(s.h);
  const std::int64_t left = pick(s.w);
  Tensor patch = crop(hr, top, left, hr_patch, hr_patch);
  if (do_augment) {
    Augment a;
    a.hflip = rng.coin();
    a.vflip = rng.coin();
    a.transpose = rng.coin();
    patch = augment(patch, a);
  }
  return {bicubic_resize(patch, 1.0 / upscale), patch};
}

namespace {

Tensor stack(const std::vector<Tensor>& items) {
  Shape s = items.front().shape();
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(s.numel() * static_cast<std::int64_t>(items.size())));
  for (const Tensor& t : items) v.insert(v.end(), t.data().begin(), t.data().end());
  s.n *= static_cast<std::int64_t>(items.size());
  return Tensor(s, std::move(v), items.front().dtype());
}

}  // namespace

PatchPair sample_batch(const std::vector<Tensor>& images, const TrainConfig& cfg, int upscale, std::int64_t iteration) {
  if (images.empty()) throw std::invalid_argument("no training images");
  Rng rng = derive_rng(cfg.seed, static_cast<std::uint64_t>(iteration));
  std::vector<Tensor> lrs, hrs;
  for (int b = 0; b < cfg.batch; ++b) {
    const Tensor& img = images[static_cast<std::size_t>(rng.below(images.size()))];
    PatchPair p = sample_patch(img, cfg.hr_patch, upscale, cfg.augment, rng);
    lrs.push_back(std::move(p.lr));
    hrs.push_back(std::move(p.hr));
  }
  return {stack(lrs), stack(hrs)};
}

// ---- optimization -----------------------------------------------------------

void adam_step(std::span<const Parameter> params, AdamState& state, double lr, const TrainConfig& cfg) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (const Parameter& p : unique_parameters(params)) {
    auto [it, fresh] = state.moments.try_emplace(p.share_id());
    AdamMoments& mo = it->second;
    const std::size_t n = static_cast<std::size_t>(p.numel());
    if (fresh) {
      mo.m.assign(n, 0.0);
      mo.v.assign(n, 0.0);
    }
    const auto g = p.grad();
    const auto cur = p.value().data();
    std::vector<double> next(n);
    for (std::size_t i = 0; i < n; ++i) {
      mo.m[i] = cfg.beta1 * mo.m[i] + (1.0 - cfg.beta1) * g[i];
      mo.v[i] = cfg.beta2 * mo.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      next[i] = cur[i] - lr * (mo.m[i] / c1) / (std::sqrt(mo.v[i] / c2) + cfg.eps);
    }
    Parameter(p).assign(Tensor(p.shape(), std::move(next), p.value().dtype()));
  }
}

double lr_at(std::int64_t iteration, const TrainConfig& cfg) {
  if (iteration < 0) throw std::invalid_argument("iteration must be >= 0");
  return cfg.lr * std::pow(0.5, static_cast<double>(iteration / cfg.halve_every));
}

// ---- evaluation -------------------------------------------------------------

double psnr_y(const Tensor& sr, const Tensor& hr, int border) {
  const Shape s = sr.shape();
  if (s != hr.shape()) throw ShapeError("psnr shapes differ: " + s.str() + " vs " + hr.shape().str());
  if (s.c != 3) throw ShapeError("psnr_y needs 3-channel images");
  if (border < 0 || 2 * border >= s.h || 2 * border >= s.w) throw ShapeError("border leaves no pixels");
  const auto a = sr.data();
  const auto b = hr.data();
  const auto luma = [&](std::span<const double> d, std::int64_t n, std::int64_t y, std::int64_t x) {
    const auto at = [&](std::int64_t c) { return d[static_cast<std::size_t>(((n * 3 + c) * s.h + y) * s.w + x)]; };
    const double v = 16.0 / 255.0 + (65.481 * at(0) + 128.553 * at(1) + 24.966 * at(2)) / 255.0;
    return std::clamp(v, 0.0, 1.0);
  };
  double sq = 0.0;
  std::int64_t count = 0;
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t y = border; y < s.h - border; ++y) {
      for (std::int64_t x = border; x < s.w - border; ++x) {
        const double d = luma(a, n, y, x) - luma(b, n, y, x);
        sq += d * d;
        ++count;
      }
    }
  }
  if (sq == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(static_cast<double>(count) / sq);
}

EvalResult evaluate(const Network& net, const std::vector<EvalPair>& pairs, int border) {
  const int up = net.config().upscale;
  if (border < 0) border = up;
  EvalResult r;
  for (const EvalPair& p : pairs) {
    const Tensor lr = p.lr.to(net.config().dtype);
    EvalRow row{p.name, psnr_y(forward_sr_padded(net, lr), p.hr, border),
                psnr_y(bicubic_resize(p.lr, up), p.hr, border)};
    r.mean_psnr += row.psnr;
    r.mean_bicubic_psnr += row.bicubic_psnr;
    r.rows.push_back(std::move(row));
  }
  if (!pairs.empty()) {
    r.mean_psnr /= static_cast<double>(pairs.size());
    r.mean_bicubic_psnr /= static_cast<double>(pairs.size());
  }
  return r;
}

// ---- training ---------------------------------------------------------------

double RunRecord::smoothed_initial(int window) const {
  const std::size_t n = std::min(losses.size(), static_cast<std::size_t>(window));
  if (n == 0) return std::nan("");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += losses[i];
  return s / static_cast<double>(n);
}

double RunRecord::smoothed_final(int window) const {
  const std::size_t n = std::min(losses.size(), static_cast<std::size_t>(window));
  if (n == 0) return std::nan("");
  double s = 0.0;
  for (std::size_t i = losses.size() - n; i < losses.size(); ++i) s += losses[i];
  return s / static_cast<double>(n);
}

namespace {

std::string moment_name(const char* which, const std::string& param) { return std::string("adam.") + which + "/" + param; }

}  // namespace

void save_training_checkpoint(const fs::path& path, const Network& net, const AdamState& adam,
                              std::int64_t iteration, const TrainConfig& cfg) {
  std::map<std::string, Tensor> extra;
  for (const auto& np : net.parameters()) {
    auto it = adam.moments.find(np.param.share_id());
    if (it == adam.moments.end()) continue;
    extra.emplace(moment_name("m", np.name), Tensor(np.param.shape(), it->second.m, DType::kF64));
    extra.emplace(moment_name("v", np.name), Tensor(np.param.shape(), it->second.v, DType::kF64));
  }
  const nlohmann::json state{{"iteration", iteration}, {"adam_step", adam.step}, {"train", to_json(cfg)}};
  save_checkpoint(path, net, state, extra);
}

RunRecord train_loop(Network& net, const SrData& data, const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  const auto named = net.parameters();
  std::vector<Parameter> params;
  for (const auto& np : named) params.push_back(np.param);
  const DType dtype = net.config().dtype;
  const int up = net.config().upscale;
  const auto say = [&](const std::string& line) {
    if (opts.log) opts.log(line);
  };

  AdamState adam;
  RunRecord record;
  if (opts.resume) {
    const Checkpoint ck = load_checkpoint(*opts.resume);
    if (to_json(ck.config) != to_json(net.config())) {
      throw std::invalid_argument("checkpoint model config differs from the network being trained");
    }
    for (const auto& np : named) {
      Parameter(np.param).assign(ck.tensors.at(np.name));
      const auto m = ck.tensors.find(moment_name("m", np.name));
      const auto v = ck.tensors.find(moment_name("v", np.name));
      if (m != ck.tensors.end() && v != ck.tensors.end()) {
        adam.moments[np.param.share_id()] = {{m->second.data().begin(), m->second.data().end()},
                                             {v->second.data().begin(), v->second.data().end()}};
      }
    }
    record.start_iteration = ck.state.at("iteration").get<std::int64_t>();
    adam.step = ck.state.at("adam_step").get<std::int64_t>();
    say("resumed at iteration " + std::to_string(record.start_iteration));
  }
  if (!opts.out_dir.empty()) fs::create_directories(opts.out_dir);

  for (std::int64_t it = record.start_iteration; it < cfg.total_iters; ++it) {
    const PatchPair batch = sample_batch(data.train_hr, cfg, up, it);
    for (Parameter& p : params) p.zero_grad();
    double loss_value;
    try {
      Tape tape;
      const Tensor out = net.forward_sr(batch.lr.to(dtype), &tape);
      const Tensor loss = l1_loss(out, batch.hr.to(dtype));
      tape.backward(loss);
      loss_value = loss.item();
    } catch (const NumericError& e) {
      throw NumericError("training diverged at iteration " + std::to_string(it) + ": " + e.what());
    }
    const double lr = lr_at(it, cfg);
    adam_step(params, adam, lr, cfg);
    record.losses.push_back(loss_value);

    const std::int64_t done = it + 1;
    if (cfg.log_every > 0 && done % cfg.log_every == 0) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "iter %lld lr %.3g loss %.6f", static_cast<long long>(done), lr, loss_value);
      say(buf);
    }
    if (cfg.eval_every > 0 && done % cfg.eval_every == 0 && !data.eval.empty()) {
      const double psnr = evaluate(net, data.eval).mean_psnr;
      record.eval_psnr.emplace_back(done, psnr);
      say("eval iter " + std::to_string(done) + " psnr " + std::to_string(psnr));
    }
    if (!opts.out_dir.empty() && cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) {
      save_training_checkpoint(opts.out_dir / ("iter_" + std::to_string(done) + ".msck"), net, adam, done, cfg);
    }
  }
  if (!opts.out_dir.empty()) {
    save_training_checkpoint(opts.out_dir / "final.msck", net, adam, cfg.total_iters, cfg);
    write_run_record(opts.out_dir / "run.txt", record, cfg);
  }
  return record;
}

void write_run_record(const fs::path& path, const RunRecord& record, const TrainConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  char buf[128];
  os << "# iter lr loss\n";
  for (std::size_t k = 0; k < record.losses.size(); ++k) {
    const std::int64_t it = record.start_iteration + static_cast<std::int64_t>(k);
    std::snprintf(buf, sizeof buf, "%lld %.17g %.17g\n", static_cast<long long>(it), lr_at(it, cfg), record.losses[k]);
    os << buf;
  }
  for (const auto& [it, psnr] : record.eval_psnr) {
    std::snprintf(buf, sizeof buf, "eval %lld %.17g\n", static_cast<long long>(it), psnr);
    os << buf;
  }
}

}  // namespace msconv
