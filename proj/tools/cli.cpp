#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "msconv/complexity.hpp"
#include "msconv/networks.hpp"
#include "msconv/pilot_equiv.hpp"
#include "msconv/run_config.hpp"
#include "msconv/sr_pipeline.hpp"
#include "msconv/verify.hpp"

namespace msconv::cli {

namespace {

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Domain failure reported with exit code 1.
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Whole-string integer; std::stoll would accept trailing garbage.
bool parse_extent(std::string_view s, std::int64_t& v) {
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && end == s.data() + s.size();
}

InputSize parse_size(const std::string& s) {
  const auto x = s.find_first_of("xX");
  InputSize size;
  const bool ok = x == std::string::npos
                      ? parse_extent(s, size.h) && parse_extent(s, size.w)
                      : parse_extent(std::string_view(s).substr(0, x), size.h) &&
                            parse_extent(std::string_view(s).substr(x + 1), size.w);
  if (!ok) throw CLI::ValidationError("--input-size", "expected HxW, got '" + s + "'");
  if (size.h < 1 || size.w < 1) throw CLI::ValidationError("--input-size", "extents must be positive");
  return size;
}

std::pair<int, int> parse_range(const std::string& s) {
  const auto colon = s.find(':');
  try {
    const int lo = std::stoi(s.substr(0, colon));
    const int hi = colon == std::string::npos ? lo : std::stoi(s.substr(colon + 1));
    if (lo < 0 || hi < lo) throw std::invalid_argument("order");
    return {lo, hi};
  } catch (const std::exception&) {
    throw CLI::ValidationError("--sweep-depth", "expected MIN:MAX with 0 <= MIN <= MAX, got '" + s + "'");
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Branch count a variant is built with when swept alongside `base`.
int branches_for(const std::string& variant, const ModelConfig& base) {
  if (variant == "baseline" || variant == "standard") return 1;
  const Variant v = parse_variant(variant);
  if (v == Variant::kMultigrid) return 3;
  if (v == Variant::kUnet || v == Variant::kOctave) return 2;
  return base.branches > 1 ? base.branches : 2;
}

void print_header(std::ostream& out, const std::string& command, std::uint64_t seed, const std::string& extra = {}) {
  out << "# msconv " << command << "  seed=" << seed;
  if (!extra.empty()) out << "  " << extra;
  out << "\n";
}

// ---- analyze ----------------------------------------------------------------

struct AnalyzeArgs {
  std::string config;
  std::string input_size;
  double calibrate_to = 0.0;
  std::int64_t align = 8;
  std::string format = "text";
  std::string sweep;
  std::string variants = "baseline,ms,ms2,ms3,ms3_large";
  std::string pareto_out;
};

int run_analyze(const AnalyzeArgs& a, std::ostream& out) {
  const RunConfig cfg = load_run_config(a.config);
  const Network net = build_network(cfg.model);
  InputSize size{32, 32};
  std::string note;
  if (a.calibrate_to > 0.0) {
    size = calibrate_input_size(net, a.calibrate_to, std::max(a.align, net.input_multiple()));
    note = fmt("calibrated to %.6g flops", a.calibrate_to);
  } else if (!a.input_size.empty()) {
    size = parse_size(a.input_size);
  }
  print_header(out, "analyze", cfg.model.seed,
               "model=" + std::string(backbone_name(cfg.model.backbone)) + "/" + cfg.model.variant +
                   fmt("  input=%lldx%lld", static_cast<long long>(size.h), static_cast<long long>(size.w)));
  if (!note.empty()) out << "# " << note << "\n";

  if (a.sweep.empty()) {
    const ComplexityReport report = analyze(net, size.h, size.w, "net");
    out << (a.format == "json" ? format_json(report) + "\n" : format_text(report));
    return kExitOk;
  }

  const auto [lo, hi] = parse_range(a.sweep);
  std::vector<ParetoRow> rows;
  for (const std::string& variant : split_list(a.variants)) {
    for (int depth = lo; depth <= hi; ++depth) {
      ModelConfig m = cfg.model;
      m.variant = variant == "standard" ? "baseline" : variant;
      m.branches = branches_for(variant, cfg.model);
      m.num_blocks = depth;
      const Network swept = build_network(m);
      if (size.h % swept.input_multiple() != 0 || size.w % swept.input_multiple() != 0) {
        throw DomainError(fmt("input %lldx%lld is not a multiple of %lld required by %s",
                              static_cast<long long>(size.h), static_cast<long long>(size.w),
                              static_cast<long long>(swept.input_multiple()), variant.c_str()));
      }
      rows.push_back({m.variant, depth, count_flops(swept, size.h, size.w), count_params(swept), std::nan("")});
    }
  }
  emit_pareto(rows, out);
  if (!a.pareto_out.empty()) {
    std::ofstream f(a.pareto_out);
    if (!f) throw DomainError("cannot write " + a.pareto_out);
    emit_pareto(rows, f);
  }
  return kExitOk;
}

// ---- verify -----------------------------------------------------------------

int run_verify(const std::string& suite, std::ostream& out) {
  print_header(out, "verify", 0, "suite=" + suite);
  const auto results = run_verify_suite(suite);
  int failed = 0;
  for (const CheckResult& r : results) {
    out << (r.ok ? "PASS " : "FAIL ") << r.suite << ": " << r.name;
    if (!r.detail.empty()) out << " (" << r.detail << ")";
    out << "\n";
    failed += r.ok ? 0 : 1;
  }
  out << results.size() << " checks, " << failed << " failed\n";
  return failed == 0 ? kExitOk : kExitDomain;
}

// ---- pilot ------------------------------------------------------------------

struct PilotArgs {
  std::int64_t iters = 0;
  std::uint64_t seed = 0;
  int upscale = 0;
  int patch = 0;
  std::string out;
};

int run_pilot(const PilotArgs& a, std::ostream& out) {
  PilotConfig cfg;
  cfg.seed = a.seed;
  cfg.train.seed = a.seed;
  cfg.data.seed = a.seed;
  if (a.iters > 0) {
    cfg.train.total_iters = a.iters;
    cfg.train.halve_every = std::max<std::int64_t>(1, a.iters / 2);
  }
  if (a.upscale > 0) cfg.upscale = a.upscale;
  if (a.patch > 0) cfg.train.hr_patch = a.patch;
  print_header(out, "pilot", a.seed,
               fmt("blocks=%d width=%d x%d iters=%lld patch=%d", cfg.num_blocks, cfg.width, cfg.upscale,
                   static_cast<long long>(cfg.train.total_iters), cfg.train.hr_patch));
  const auto results = run_pilot_suite(cfg, [&](const std::string& line) { out << "# " << line << "\n" << std::flush; });
  std::ostringstream table;
  table << "case\tfunction\tparams\tbranch_weights\tloss_initial\tloss_final\tpsnr\tbicubic_psnr\n";
  bool finite = true;
  for (const PilotCaseResult& r : results) {
    table << r.id << "\t" << r.function << "\t" << r.params << "\t" << r.distinct_branch_weights << "\t"
          << fmt("%.6f\t%.6f\t%.3f\t%.3f", r.loss_initial, r.loss_final, r.psnr, r.bicubic_psnr) << "\n";
    finite = finite && r.finite;
  }
  out << table.str();
  if (!a.out.empty()) {
    std::ofstream f(a.out);
    if (!f) throw DomainError("cannot write " + a.out);
    f << table.str();
  }
  if (!finite) {
    out << "training diverged for at least one case\n";
    return kExitDomain;
  }
  return kExitOk;
}

// ---- train / eval / infer ---------------------------------------------------

struct TrainArgs {
  std::string config;
  std::int64_t iters = 0;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string resume;
};

int run_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = load_run_config(a.config);
  if (a.iters > 0) {
    cfg.train.total_iters = a.iters;
    cfg.train.halve_every = std::min(cfg.train.halve_every, a.iters);
  }
  if (a.seed) {
    cfg.model.seed = *a.seed;
    cfg.train.seed = *a.seed;
    cfg.data.seed = *a.seed;
  }
  cfg.train.validate();
  print_header(out, "train", cfg.train.seed,
               fmt("model_seed=%llu data_seed=%llu iters=%lld", static_cast<unsigned long long>(cfg.model.seed),
                   static_cast<unsigned long long>(cfg.data.seed), static_cast<long long>(cfg.train.total_iters)));
  out << "# config " << to_json(cfg).dump() << "\n";
  Network net = build_network(cfg.model);
  const SrData data = load_data(cfg.data, cfg.model.upscale, cfg.model.dtype);
  TrainOptions opts;
  opts.out_dir = a.out_dir;
  if (!a.resume.empty()) opts.resume = a.resume;
  opts.log = [&](const std::string& line) { out << line << "\n" << std::flush; };
  const RunRecord rec = train_loop(net, data, cfg.train, opts);
  const EvalResult ev = evaluate(net, data.eval);
  out << fmt("loss %.6f -> %.6f (window %d)\n", rec.smoothed_initial(cfg.train.smooth_window),
             rec.smoothed_final(cfg.train.smooth_window), cfg.train.smooth_window);
  out << fmt("eval psnr %.3f dB, bicubic %.3f dB\n", ev.mean_psnr, ev.mean_bicubic_psnr);
  return kExitOk;
}

int run_eval(const std::string& checkpoint, const std::string& dir, int border, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Network net = restore_network(ck);
  const int up = net.config().upscale;
  print_header(out, "eval", net.config().seed, fmt("upscale=%d border=%d", up, border < 0 ? up : border));
  std::vector<EvalPair> pairs;
  for (const auto& path : list_images(dir)) pairs.push_back(make_eval_pair(path.filename().string(), read_pnm(path), up));
  if (pairs.empty()) throw DomainError("no .ppm/.pgm images in " + dir);
  const EvalResult ev = evaluate(net, pairs, border);
  out << "image\tpsnr\tbicubic_psnr\n";
  for (const EvalRow& r : ev.rows) out << r.name << fmt("\t%.3f\t%.3f\n", r.psnr, r.bicubic_psnr);
  out << fmt("mean\t%.3f\t%.3f\n", ev.mean_psnr, ev.mean_bicubic_psnr);
  return kExitOk;
}

int run_infer(const std::string& checkpoint, const std::string& in, const std::string& dst, bool pad,
              std::ostream& out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Network net = restore_network(ck);
  const Tensor lr = read_pnm(in).to(net.config().dtype);
  if (lr.shape().c != 3) throw DomainError(in + " is not an RGB image");
  const Tensor sr = pad ? forward_sr_padded(net, lr) : forward_sr(net, lr);
  write_pnm(dst, sr);
  print_header(out, "infer", net.config().seed);
  out << in << " " << lr.shape().h << "x" << lr.shape().w << " -> " << dst << " " << sr.shape().h << "x"
      << sr.shape().w << "\n";
  return kExitOk;
}

}  // namespace

void emit_pareto(std::vector<ParetoRow> rows, std::ostream& out) {
  std::map<std::string, std::size_t> first_seen;
  for (const ParetoRow& r : rows) first_seen.emplace(r.variant, first_seen.size());
  std::stable_sort(rows.begin(), rows.end(), [&](const ParetoRow& a, const ParetoRow& b) {
    const auto ga = first_seen[a.variant], gb = first_seen[b.variant];
    return ga != gb ? ga < gb : a.flops < b.flops;
  });
  out << "variant\tdepth\tflops\tparams\tpsnr\n";
  for (const ParetoRow& r : rows) {
    out << r.variant << "\t" << r.depth << "\t" << r.flops << "\t" << r.params << "\t"
        << (std::isnan(r.psnr) ? std::string("nan") : fmt("%.17g", r.psnr)) << "\n";
  }
}

std::vector<ParetoRow> read_pareto(std::istream& in) {
  std::vector<ParetoRow> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    ParetoRow r;
    std::string psnr;
    if (!(ss >> r.variant >> r.depth >> r.flops >> r.params >> psnr)) {
      throw std::runtime_error("malformed pareto row: " + line);
    }
    r.psnr = std::strtod(psnr.c_str(), nullptr);
    rows.push_back(std::move(r));
  }
  return rows;
}

int dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-scale convolution toolkit for single-image super-resolution", "msconv"};
  app.require_subcommand(1);

  AnalyzeArgs analyze_args;
  auto* analyze_cmd = app.add_subcommand("analyze", "FLOPs and parameter report for a configured network");
  analyze_cmd->add_option("config", analyze_args.config, "JSON config file")->required();
  auto* size_opt = analyze_cmd->add_option("--input-size", analyze_args.input_size, "LR input extent HxW (default 32x32)");
  analyze_cmd->add_option("--calibrate-to", analyze_args.calibrate_to, "pick the input size whose FLOPs hit this target")
      ->excludes(size_opt);
  analyze_cmd->add_option("--align", analyze_args.align, "calibrated extents are multiples of this (default 8)")
      ->check(CLI::PositiveNumber);
  analyze_cmd->add_option("--format", analyze_args.format, "text or json")->check(CLI::IsMember({"text", "json"}));
  analyze_cmd->add_option("--sweep-depth", analyze_args.sweep, "depth range MIN:MAX; emits Pareto rows per variant");
  analyze_cmd->add_option("--variants", analyze_args.variants, "comma-separated variants for --sweep-depth");
  analyze_cmd->add_option("--pareto-out", analyze_args.pareto_out, "also write the sweep rows to this file");

  std::string suite = "all";
  auto* verify_cmd = app.add_subcommand("verify", "run the invariant suites");
  verify_cmd->add_option("--suite", suite, "core, grad, equiv or all")
      ->check(CLI::IsMember({"core", "grad", "equiv", "all"}));

  PilotArgs pilot_args;
  auto* pilot_cmd = app.add_subcommand("pilot", "train the five pilot cases and report a table");
  pilot_cmd->add_option("--iters", pilot_args.iters, "iterations per case (default 2000)")->check(CLI::PositiveNumber);
  pilot_cmd->add_option("--seed", pilot_args.seed, "seed for weights, data and batches");
  pilot_cmd->add_option("--upscale", pilot_args.upscale, "upscale factor (default 4)")->check(CLI::IsMember({2, 4, 8}));
  pilot_cmd->add_option("--patch", pilot_args.patch, "HR patch size (default 48)")->check(CLI::PositiveNumber);
  pilot_cmd->add_option("--out", pilot_args.out, "write the table to this file");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a network from a config file");
  train_cmd->add_option("config", train_args.config, "JSON config file")->required();
  train_cmd->add_option("--iters", train_args.iters, "override train.total_iters")->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", train_args.seed, "override model, train and data seeds");
  train_cmd->add_option("--out", train_args.out_dir, "directory for checkpoints and run.txt");
  train_cmd->add_option("--resume", train_args.resume, "checkpoint to continue from");

  std::string eval_ck, eval_dir;
  int border = -1;
  auto* eval_cmd = app.add_subcommand("eval", "PSNR of a checkpoint over HR images");
  eval_cmd->add_option("checkpoint", eval_ck)->required();
  eval_cmd->add_option("image-dir", eval_dir, "directory of HR .ppm/.pgm images")->required();
  eval_cmd->add_option("--border", border, "pixels cropped per side (default: upscale)")->check(CLI::NonNegativeNumber);

  std::string infer_ck, infer_in, infer_out;
  bool no_pad = false;
  auto* infer_cmd = app.add_subcommand("infer", "super-resolve one image");
  infer_cmd->add_option("checkpoint", infer_ck)->required();
  infer_cmd->add_option("input", infer_in, "LR .ppm")->required();
  infer_cmd->add_option("output", infer_out, "HR .ppm")->required();
  infer_cmd->add_flag("--no-pad", no_pad, "fail instead of reflect-padding inputs of the wrong size");

  std::vector<const char*> raw;
  for (const std::string& s : argv) raw.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(raw.size()), raw.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << "error: " << e.what() << "\n\n" << sub->help();
    return kExitUsage;
  }

  try {
    if (analyze_cmd->parsed()) return run_analyze(analyze_args, out);
    if (verify_cmd->parsed()) return run_verify(suite, out);
    if (pilot_cmd->parsed()) return run_pilot(pilot_args, out);
    if (train_cmd->parsed()) return run_train(train_args, out);
    if (eval_cmd->parsed()) return run_eval(eval_ck, eval_dir, border, out);
    if (infer_cmd->parsed()) return run_infer(infer_ck, infer_in, infer_out, !no_pad, out);
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomain;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace msconv::cli
