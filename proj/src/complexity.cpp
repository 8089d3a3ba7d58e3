#include "msconv/complexity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace msconv {

ComplexityReport analyze(const ScaleLayer& net, std::int64_t h, std::int64_t w, const std::string& name) {
  if (h <= 0 || w <= 0) throw ShapeError("input size must be positive");
  std::vector<ConvSite> sites;
  net.conv_sites(name, h, w, sites);
  ComplexityReport r;
  r.input_h = h;
  r.input_w = w;
  std::unordered_set<std::uint64_t> seen;
  for (const ConvSite& s : sites) {
    ComplexityRow row{s.name, s.scale, s.flops(), 0};
    for (const Parameter* p : {&s.weight, &s.bias}) {
      if (p->defined() && seen.insert(p->share_id()).second) row.params += p->numel();
    }
    r.total_flops += row.flops;
    r.total_params += row.params;
    r.rows.push_back(std::move(row));
  }
  return r;
}

std::int64_t count_params(const ScaleLayer& net) {
  std::vector<NamedParameter> all;
  net.named_parameters("net", all);
  std::unordered_set<std::uint64_t> seen;
  std::int64_t total = 0;
  for (const NamedParameter& np : all) {
    if (seen.insert(np.param.share_id()).second) total += np.param.numel();
  }
  return total;
}

std::int64_t count_flops(const ScaleLayer& net, std::int64_t h, std::int64_t w) {
  std::vector<ConvSite> sites;
  net.conv_sites("net", h, w, sites);
  std::int64_t total = 0;
  for (const ConvSite& s : sites) total += s.flops();
  return total;
}

InputSize calibrate_input_size(const ScaleLayer& net, double target_flops, std::int64_t align) {
  if (!(target_flops > 0.0) || !std::isfinite(target_flops)) {
    throw std::invalid_argument("calibration target must be positive");
  }
  if (align < 1) throw std::invalid_argument("alignment must be positive");
  const double per_pixel = static_cast<double>(count_flops(net, align, align)) / static_cast<double>(align * align);
  if (per_pixel <= 0.0) throw std::invalid_argument("network has no convolutions to calibrate");
  const double pixels = target_flops / per_pixel;
  const double rounded = std::round(pixels);
  const std::int64_t a2 = align * align;
  if (std::abs(pixels - rounded) <= 1e-9 * pixels && rounded >= static_cast<double>(a2)) {
    const auto p = static_cast<std::int64_t>(rounded);
    if (p % a2 == 0) {
      const std::int64_t q = p / a2;
      for (auto h = static_cast<std::int64_t>(std::sqrt(static_cast<double>(q))) + 1; h >= 1; --h) {
        if (h * h <= q && q % h == 0) return {h * align, q / h * align};
      }
    }
  }
  const double side = std::sqrt(pixels) / static_cast<double>(align);
  const std::int64_t h = std::max<std::int64_t>(1, std::llround(side)) * align;
  const std::int64_t w = std::llround(pixels / static_cast<double>(h) / static_cast<double>(align)) * align;
  if (w < 1) throw std::invalid_argument("calibration target is below one aligned input block");
  return {h, w};
}

std::string format_text(const ComplexityReport& r) {
  std::size_t name_w = 5;
  for (const auto& row : r.rows) name_w = std::max(name_w, row.name.size());
  std::string out = std::string("# ") + kFlopConvention + "\n";
  out += "# input " + std::to_string(r.input_h) + "x" + std::to_string(r.input_w) + "\n";
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-*s %5s %16s %12s\n", static_cast<int>(name_w), "layer", "scale", "flops",
                "params");
  out += buf;
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%-*s %5d %16lld %12lld\n", static_cast<int>(name_w), row.name.c_str(),
                  row.scale, static_cast<long long>(row.flops), static_cast<long long>(row.params));
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%-*s %5s %16lld %12lld\n", static_cast<int>(name_w), "total", "",
                static_cast<long long>(r.total_flops), static_cast<long long>(r.total_params));
  out += buf;
  return out;
}

std::string format_json(const ComplexityReport& r) {
  nlohmann::json j;
  j["convention"] = kFlopConvention;
  j["input"] = {{"h", r.input_h}, {"w", r.input_w}};
  j["rows"] = nlohmann::json::array();
  for (const auto& row : r.rows) {
    j["rows"].push_back({{"name", row.name}, {"scale", row.scale}, {"flops", row.flops}, {"params", row.params}});
  }
  j["totals"] = {{"flops", r.total_flops}, {"params", r.total_params}};
  return j.dump(2);
}

}  // namespace msconv
