#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msconv/unified_conv.hpp"

namespace msconv {

enum class Backbone { kSrresnet, kCarn };

const char* backbone_name(Backbone b);
Backbone parse_backbone(std::string_view name);

struct ModelConfig {
  Backbone backbone = Backbone::kSrresnet;
  std::string variant = "baseline";  // "baseline" or a variant name
  int num_blocks = -1;               // -1: 16 for srresnet, 3 per group for carn
  int groups = 3;                    // carn only
  int width = 64;
  int branches = 1;
  int upscale = 4;
  // Adds a bicubic upsampling of the input to the output.
  bool image_residual = true;
  DType dtype = DType::kF32;
  std::uint64_t seed = 0;

  // Resolves defaults and checks ranges; throws std::invalid_argument.
  ModelConfig normalized() const;
  bool is_baseline() const { return variant == "baseline"; }
  Variant unit_variant() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
// Rejects unknown keys; errors name the offending key.
ModelConfig model_config_from_json(const nlohmann::json& j);

using LayerPtr = std::shared_ptr<const ScaleLayer>;

// Residual unit pair: x + b(relu(a(x))).
struct ResidualBlock {
  LayerPtr a;
  LayerPtr b;
};

// One CARN cascading stage: residual blocks, each followed by a fuse over
// the concatenation of everything produced so far.
struct CascadeGroup {
  std::vector<ResidualBlock> blocks;
  std::vector<LayerPtr> fuses;
};

class Network : public ScaleLayer {
 public:
  const ModelConfig& config() const { return cfg_; }
  // Input extents must be multiples of this.
  std::int64_t input_multiple() const { return std::int64_t{1} << (cfg_.branches - 1); }

  // LR image (N, 3, h, w) to HR image (N, 3, upscale*h, upscale*w).
  Tensor forward_sr(const Tensor& lr, Tape* tape = nullptr) const;

  ScaleFeatures forward(const ScaleFeatures& x, Tape* tape) const override;
  // h, w are LR extents.
  void conv_sites(const std::string& name, std::int64_t h, std::int64_t w,
                  std::vector<ConvSite>& out) const override;
  void named_parameters(const std::string& prefix, std::vector<NamedParameter>& out) const override;

  // Distinct parameters, each under the name of its first use.
  std::vector<NamedParameter> parameters() const;
  // Units between FirstConv and the upsampler, in execution order.
  std::vector<LayerPtr> body_units() const;
  // Copy whose body units are replaced by fn(unit).
  Network map_body_units(const std::function<LayerPtr(const LayerPtr&)>& fn) const;

 private:
  friend Network build_srresnet(const ModelConfig& cfg);
  friend Network build_carn(const ModelConfig& cfg);

  ScaleFeatures body(const ScaleFeatures& x, Tape* tape) const;

  ModelConfig cfg_;
  FirstConv first_;
  std::vector<ResidualBlock> blocks_;  // srresnet
  LayerPtr mid_;                       // srresnet
  std::vector<CascadeGroup> groups_;   // carn
  std::vector<LayerPtr> group_fuses_;  // carn
  std::vector<LayerPtr> upsampler_;
  LastConv last_;
  Conv tail_;
};

Network build_srresnet(const ModelConfig& cfg);
Network build_carn(const ModelConfig& cfg);
Network build_network(const ModelConfig& cfg);

// Same config with the largest num_blocks whose FLOPs at (h, w) stay within
// target. Throws when the starting depth already exceeds it.
ModelConfig deepen_to_target(const ModelConfig& cfg, std::int64_t target_flops, std::int64_t h,
                             std::int64_t w);

// Convenience wrapper around Network::forward_sr with the divisibility check
// spelled out in the error.
Tensor forward_sr(const Network& net, const Tensor& lr);

// Reflect-pads to the input multiple, runs the net, crops the HR output back.
Tensor forward_sr_padded(const Network& net, const Tensor& lr);

struct Checkpoint {
  ModelConfig config;
  nlohmann::json state;
  std::map<std::string, Tensor> tensors;
};

// Parameters are stored under their Network::parameters() names; `extra`
// tensors (e.g. optimizer moments) must use names that do not collide.
void save_checkpoint(const std::filesystem::path& path, const Network& net, const nlohmann::json& state,
                     const std::map<std::string, Tensor>& extra = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Builds the configured net and assigns every stored parameter.
Network restore_network(const Checkpoint& ck);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace msconv
