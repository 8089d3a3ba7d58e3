#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace msconv::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

// Runs one subcommand. argv[0] is the program name.
int dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

struct ParetoRow {
  std::string variant;
  int depth = 0;
  std::int64_t flops = 0;
  std::int64_t params = 0;
  double psnr = 0.0;  // NaN when not measured
};

// Tab-separated with a header line; rows grouped by variant (first-seen
// order) and sorted by FLOPs within each group.
void emit_pareto(std::vector<ParetoRow> rows, std::ostream& out);
std::vector<ParetoRow> read_pareto(std::istream& in);

}  // namespace msconv::cli
