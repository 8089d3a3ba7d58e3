#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "msconv/networks.hpp"
#include "msconv/random.hpp"
#include "msconv/resize.hpp"

namespace msconv {

// ---- images ---------------------------------------------------------------

// Binary PPM (P6) or PGM (P5) with maxval 255, as (1, C, H, W) in [0, 1].
Tensor read_pnm(const std::filesystem::path& path);
// Writes P6 for 3 channels and P5 for 1; values are clamped and rounded.
void write_pnm(const std::filesystem::path& path, const Tensor& img);

// Sorted *.ppm / *.pgm files of a directory.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

// Spatial crop of every plane.
Tensor crop(const Tensor& img, std::int64_t top, std::int64_t left, std::int64_t h, std::int64_t w);
// Crops bottom/right so both extents are multiples of `multiple`.
Tensor mod_crop(const Tensor& img, std::int64_t multiple);

// size x size windows at the given stride; a final window flush with the
// bottom/right edge is added when the stride leaves a remainder.
std::vector<Tensor> crop_subimages(const Tensor& img, std::int64_t size = 480, std::int64_t stride = 240);

// ---- data -----------------------------------------------------------------

struct Augment {
  bool hflip = false;
  bool vflip = false;
  bool transpose = false;  // with the flips this spans all 90-degree rotations
};
Tensor augment(const Tensor& img, const Augment& a);

struct TrainConfig {
  int batch = 16;
  int hr_patch = 128;
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t halve_every = 250000;
  std::int64_t total_iters = 1000000;
  std::uint64_t seed = 0;
  bool augment = true;
  std::int64_t checkpoint_every = 0;  // 0: only at the end when an output dir is set
  std::int64_t eval_every = 0;        // 0: never during training
  std::int64_t log_every = 100;
  int smooth_window = 100;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct DatasetSpec {
  std::string hr_dir;         // empty: synthetic images
  std::string eval_dir;       // empty: synthetic held-out images
  int synthetic_train = 16;
  int synthetic_eval = 4;
  int synthetic_size = 96;
  std::int64_t subimage = 480;
  std::int64_t subimage_stride = 240;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);

// Deterministic piecewise-smooth RGB image with sharp edges.
Tensor synthetic_image(std::int64_t h, std::int64_t w, std::uint64_t seed, DType dtype = DType::kF64);

struct EvalPair {
  std::string name;
  Tensor lr;
  Tensor hr;
};

struct SrData {
  std::vector<Tensor> train_hr;
  std::vector<EvalPair> eval;
};

// HR training images (sub-image cropped) and held-out pairs whose HR sides
// are mod-cropped to the upscale factor.
SrData load_data(const DatasetSpec& spec, int upscale, DType dtype);
EvalPair make_eval_pair(std::string name, const Tensor& hr, int upscale);

struct PatchPair {
  Tensor lr;
  Tensor hr;
};

// Random aligned crop of hr_patch pixels, optional augmentation, then
// bicubic degradation of the augmented HR patch.
PatchPair sample_patch(const Tensor& hr, int hr_patch, int upscale, bool do_augment, Rng& rng);
// Batch for one iteration, drawn from the stream for (seed, iteration).
PatchPair sample_batch(const std::vector<Tensor>& images, const TrainConfig& cfg, int upscale,
                       std::int64_t iteration);

// ---- optimization -----------------------------------------------------------

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

struct AdamState {
  std::int64_t step = 0;
  std::unordered_map<std::uint64_t, AdamMoments> moments;  // by share_id
};

// One bias-corrected Adam update from each parameter's accumulated grad.
// Shared parameters are updated once.
void adam_step(std::span<const Parameter> params, AdamState& state, double lr, const TrainConfig& cfg);

double lr_at(std::int64_t iteration, const TrainConfig& cfg);

// ---- evaluation -------------------------------------------------------------

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

// Y-channel PSNR with `border` pixels cropped from every side. Returns
// kPsnrIdentical when the cropped Y planes agree exactly.
double psnr_y(const Tensor& sr, const Tensor& hr, int border);

struct EvalRow {
  std::string name;
  double psnr = 0.0;
  double bicubic_psnr = 0.0;
};

struct EvalResult {
  std::vector<EvalRow> rows;
  double mean_psnr = 0.0;
  double mean_bicubic_psnr = 0.0;
};

// Border defaults to the upscale factor when negative.
EvalResult evaluate(const Network& net, const std::vector<EvalPair>& pairs, int border = -1);

// ---- training ---------------------------------------------------------------

struct RunRecord {
  std::vector<double> losses;  // losses[k] belongs to iteration start_iteration + k
  std::vector<std::pair<std::int64_t, double>> eval_psnr;
  std::int64_t start_iteration = 0;

  // Mean of the first / last `window` losses.
  double smoothed_initial(int window) const;
  double smoothed_final(int window) const;
};

struct TrainOptions {
  std::filesystem::path out_dir;                 // empty: no files written
  std::optional<std::filesystem::path> resume;   // checkpoint to continue from
  std::function<void(const std::string&)> log;   // progress lines
};

// Trains in place. Every iteration's batch and update depend only on
// (net init, cfg.seed, iteration), so resumed runs continue bit-exactly.
RunRecord train_loop(Network& net, const SrData& data, const TrainConfig& cfg, const TrainOptions& opts = {});

void save_training_checkpoint(const std::filesystem::path& path, const Network& net, const AdamState& adam,
                              std::int64_t iteration, const TrainConfig& cfg);

// "iter lr loss" lines, plus "eval iter psnr" lines.
void write_run_record(const std::filesystem::path& path, const RunRecord& record, const TrainConfig& cfg);

}  // namespace msconv
