#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msconv/layer.hpp"
#include "msconv/sr_pipeline.hpp"

namespace msconv {

enum class AtomKind { kConv, kD2, kU2, kPool };

struct Atom {
  AtomKind kind = AtomKind::kD2;
  Conv conv;       // kConv
  int stride = 2;  // kPool: 2 = 2x2 mean at stride 2, 1 = 2x2 sliding mean

  static Atom conv_atom(Conv c) { return {AtomKind::kConv, std::move(c), 0}; }
  static Atom d2() { return {AtomKind::kD2, {}, 0}; }
  static Atom u2() { return {AtomKind::kU2, {}, 0}; }
  static Atom pool(int stride) { return {AtomKind::kPool, {}, stride}; }
};

// Atoms applied left to right.
struct PipelineFn {
  std::vector<Atom> atoms;

  Tensor apply(const Tensor& x, Tape* tape) const;
  std::string describe() const;
};

// Sum of parallel pipelines over a single full-resolution group.
class PilotUnit : public ScaleLayer {
 public:
  PilotUnit(char id, std::vector<PipelineFn> branches);

  char id() const { return id_; }
  const std::vector<PipelineFn>& branches() const { return branches_; }
  std::string describe() const;

  ScaleFeatures forward(const ScaleFeatures& x, Tape* tape) const override;
  void conv_sites(const std::string& name, std::int64_t h, std::int64_t w,
                  std::vector<ConvSite>& out) const override;
  void named_parameters(const std::string& prefix, std::vector<NamedParameter>& out) const override;

 private:
  char id_;
  std::vector<PipelineFn> branches_;
};

// Cases a..e. With share = false, case c gets independent branch weights
// (the unshared counterpart with identical FLOPs).
PilotUnit build_pilot_case(char id, std::int64_t c_in, std::int64_t c_out, Rng& rng, DType dtype = DType::kF32,
                           bool share = true);

// Distinct conv weight Parameters across a unit's branches.
std::size_t distinct_branch_weights(const PilotUnit& unit);

// max |conv_{d=1}(D2 x) - D2(conv_{d=2} x)|, both zero-padded by d(k-1)/2.
double check_rearrangement_identity(const Parameter& w, const Tensor& x);
// Same with U2 appended to both sides.
double check_rearrangement_identity_up(const Parameter& w, const Tensor& x);

struct PilotConfig {
  int width = 16;
  int num_blocks = 4;
  int upscale = 4;
  DType dtype = DType::kF64;
  std::uint64_t seed = 0;
  TrainConfig train;
  DatasetSpec data;

  PilotConfig();
};

struct PilotCaseResult {
  char id = 'a';
  std::string function;
  std::int64_t params = 0;
  std::size_t distinct_branch_weights = 0;
  double psnr = 0.0;
  double bicubic_psnr = 0.0;
  double loss_initial = 0.0;  // smoothed over train.smooth_window
  double loss_final = 0.0;
  bool finite = true;
};

// The baseline SRResNet with every body unit replaced by the pilot case.
Network build_pilot_network(char id, const PilotConfig& cfg);

std::vector<PilotCaseResult> run_pilot_suite(const PilotConfig& cfg,
                                             const std::function<void(const std::string&)>& log = {});

}  // namespace msconv
