#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "d2gv/codec.hpp"
#include "d2gv/frame_io.hpp"
#include "d2gv/metrics.hpp"
#include "d2gv/parallel.hpp"
#include "d2gv/pruning.hpp"
#include "d2gv/trainer.hpp"

namespace fs = std::filesystem;
using namespace d2gv;

namespace {

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

/// "a:b:step", inclusive of b up to rounding.
std::vector<double> parse_range(const std::string& s) {
  double a = 0, b = 0, step = 0;
  char c1 = 0, c2 = 0;
  std::istringstream in(s);
  if (!(in >> a >> c1 >> b >> c2 >> step) || c1 != ':' || c2 != ':' || !(step > 0) || b < a) {
    throw std::invalid_argument("expected start:stop:step, got '" + s + "'");
  }
  std::vector<double> out;
  for (int i = 0;; ++i) {
    const double v = a + i * step;
    if (v > b + 1e-9) break;
    out.push_back(std::round(v * 1e9) / 1e9);
  }
  return out;
}

struct TimeRef {
  int gop = 0;
  double local = 0;  // normalized time inside the GoP
  bool clamped = false;
};

/// Integer strings address frames; anything with a '.' is a fractional
/// frame position and is interpolated by the deformation field.
TimeRef resolve_time(const std::string& text, const ContainerHeader& h, const std::vector<int>& frames_per_gop) {
  const double f = std::stod(text);
  if (f < 0) throw std::invalid_argument("--t must be non-negative");
  const int total = std::accumulate(frames_per_gop.begin(), frames_per_gop.end(), 0);
  if (f > total - 1) throw std::invalid_argument("--t beyond the last frame (" + std::to_string(total - 1) + ")");
  TimeRef ref;
  ref.gop = std::min(static_cast<int>(f) / h.gop_size, h.gop_count() - 1);
  const int n = frames_per_gop[static_cast<std::size_t>(ref.gop)];
  double k = f - static_cast<double>(ref.gop) * h.gop_size;
  if (k > n - 1) {
    // between two GoPs there is no shared field; hold the last frame
    k = n - 1;
    ref.clamped = true;
  }
  ref.local = n > 1 ? k / (n - 1) : 0.0;
  return ref;
}

std::vector<int> frames_per_gop(const fs::path& model) {
  const auto h = read_header(model);
  std::vector<int> out;
  for (int g = 0; g < h.gop_count(); ++g) out.push_back(load_prefix(model, g, 0).model.frame_count);
  return out;
}

std::map<std::string, std::vector<double>> read_csv_columns(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::vector<std::string> names;
  std::map<std::string, std::vector<double>> cols;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (names.empty()) {
      names = cells;
      continue;
    }
    for (std::size_t i = 0; i < cells.size() && i < names.size(); ++i) cols[names[i]].push_back(std::stod(cells[i]));
  }
  return cols;
}

RdCurve curve_from_csv(const fs::path& path, const std::string& rate_col, const std::string& quality_col) {
  auto cols = read_csv_columns(path);
  if (!cols.count(rate_col) || !cols.count(quality_col)) {
    throw std::runtime_error(path.string() + ": missing column '" + rate_col + "' or '" + quality_col + "'");
  }
  std::vector<RdPoint> pts;
  for (std::size_t i = 0; i < cols[rate_col].size(); ++i) pts.push_back({cols[rate_col][i], cols[quality_col][i]});
  return RdCurve(std::move(pts));
}

struct EncodeArgs {
  std::string input, out, scales = "1,2,4,8", weights, log;
  int gop = 10, prims = 2000, coarse = 5000, fine = 20000;
  std::uint64_t seed = 0;
  bool quantize = false, no_grouping = false;
  Ablations abl;
  bool l2_only = false, ssim_only = false;
};

int run_encode(const EncodeArgs& a) {
  const auto frames = load_frames(a.input);
  TrainConfig cfg;
  cfg.gop_size = a.gop;
  cfg.primitive_count = a.prims;
  cfg.coarse_iters = a.coarse;
  cfg.fine_iters = a.fine;
  cfg.seed = a.seed;
  cfg.grouping = !a.no_grouping;
  cfg.train_scales = parse_list(a.scales);
  if (a.weights.empty()) {
    cfg.scale_weights.clear();
    for (double r : cfg.train_scales) cfg.scale_weights.push_back(r == 1.0 ? 8.0 : 1.0);
  } else {
    cfg.scale_weights = parse_list(a.weights);
  }
  cfg.ablations = a.abl;
  if (a.l2_only && a.ssim_only) throw std::invalid_argument("--loss-l2-only and --loss-ssim-only are exclusive");
  if (a.l2_only) cfg.ablations.loss = LossKind::l2_only;
  if (a.ssim_only) cfg.ablations.loss = LossKind::ssim_only;
  std::ofstream log;
  if (!a.log.empty()) {
    log.open(a.log);
    if (!log) throw std::runtime_error("cannot write " + a.log);
    log << "stage,gop,iter,frame,scale,loss,psnr\n";
    cfg.log = &log;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto models = fit_video(frames, cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto bytes = save(models, cfg.gop_size, a.out, a.quantize);
  std::cout << "wrote " << a.out << ": " << models.size() << " GoP(s), " << bytes << " bytes, "
            << std::setprecision(4) << bpp(bytes, frames[0].width, frames[0].height, static_cast<int>(frames.size()))
            << " bpp, " << param_count(models) << " parameters, trained in " << std::setprecision(3) << secs
            << " s\n";
  return 0;
}

int run_render(const std::string& model, double scale, double keep_ratio, int budget, const std::string& t,
               const std::string& out, double epsilon) {
  const auto h = read_header(model);
  const auto fpg = frames_per_gop(model);
  const TimeRef ref = resolve_time(t, h, fpg);
  if (ref.clamped) std::cerr << "warning: --t " << t << " lies between GoPs; rendering the GoP's last frame\n";
  PrefixModel pm;
  if (budget >= 0) {
    pm = load_prefix(model, ref.gop, budget);
  } else if (keep_ratio >= 0) {
    pm = load_prefix_ratio(model, ref.gop, keep_ratio);
  } else {
    pm = load_prefix(model, ref.gop, std::numeric_limits<int>::max());
    pm.clamped = false;
  }
  if (pm.clamped) std::cerr << "warning: budget above the " << pm.stored << " stored primitives; using all\n";
  const double beta = nyquist_beta(epsilon);
  const auto group = pm.model.group(scale, beta);
  if (group.warning == GroupWarning::empty_group) std::cerr << "warning: no primitive survives at scale " << scale << "\n";
  const ImageD img = pm.model.render_subset(ref.local, scale, group.members);
  save_png(out, img);
  std::cout << "rendered GoP " << ref.gop << " t=" << ref.local << " at scale " << scale << " with "
            << group.members.size() << " primitives -> " << out << " (" << img.width << "x" << img.height << ")\n";
  return 0;
}

int run_prune_curve(const std::string& model, const std::string& ref_path, const std::string& ratios,
                    const std::string& out, double scale, const std::string& order, double epsilon) {
  const auto frames = load_frames(ref_path);
  const auto h = read_header(model);
  const auto full = load(model);
  int total_frames = 0;
  for (const auto& g : full.gops) total_frames += g.frame_count;
  if (total_frames != static_cast<int>(frames.size())) {
    throw std::runtime_error("reference has " + std::to_string(frames.size()) + " frames, model encodes " +
                             std::to_string(total_frames));
  }
  if (order != "dopt" && order != "color") throw std::invalid_argument("--order must be dopt or color");
  const double beta = nyquist_beta(epsilon);
  std::vector<ImageD> targets;
  for (const auto& f : frames) targets.push_back(scale == 1.0 ? f : area_downsample(f, scale));

  std::ofstream csv(out);
  if (!csv) throw std::runtime_error("cannot write " + out);
  csv << "keep_ratio,primitives,bytes,bpp,psnr,ms_ssim\n";
  csv << std::setprecision(10);
  const std::size_t header_bytes = kHeaderBytes + 8 * static_cast<std::size_t>(h.gop_count());
  double prev_bytes = -1;
  for (double q : parse_range(ratios)) {
    std::size_t bytes = header_bytes;
    int prims = 0;
    double psnr_sum = 0, ms_sum = 0;
    int frame = 0;
    for (int g = 0; g < h.gop_count(); ++g) {
      const GopModel& m = full.gops[static_cast<std::size_t>(g)];
      const int k = static_cast<int>(std::lround(q * static_cast<double>(m.canonical.size())));
      GopModel kept = m;
      kept.canonical.clear();
      if (order == "dopt") {
        kept.canonical.assign(m.canonical.begin(), m.canonical.begin() + k);
      } else {
        const auto rank = rank_by_color_magnitude(m.canonical);
        std::vector<int> top(rank.order.begin(), rank.order.begin() + k);
        std::sort(top.begin(), top.end());
        for (int i : top) kept.canonical.push_back(m.canonical[static_cast<std::size_t>(i)]);
      }
      prims += k;
      bytes += record_bytes(kept, h.quantized());
      const auto group = kept.group(scale, beta);
      for (int f = 0; f < m.frame_count; ++f, ++frame) {
        const ImageD img = kept.render_subset(kept.timestamp(f), scale, group.members);
        psnr_sum += psnr(img, targets[static_cast<std::size_t>(frame)]);
        ms_sum += ms_ssim(img, targets[static_cast<std::size_t>(frame)]);
      }
    }
    if (static_cast<double>(bytes) <= prev_bytes) continue;  // equal-rate rows add nothing to a curve
    prev_bytes = static_cast<double>(bytes);
    csv << q << ',' << prims << ',' << bytes << ','
        << bpp(bytes, h.width, h.height, total_frames) << ',' << psnr_sum / total_frames << ','
        << ms_sum / total_frames << '\n';
  }
  std::cout << "wrote " << out << "\n";
  return 0;
}

int run_metrics(const std::string& ref, const std::string& test, const std::string& out, bool srgb8) {
  auto a = load_frames(ref);
  auto b = load_frames(test);
  if (a.size() != b.size()) {
    throw std::runtime_error("frame count mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  std::ofstream csv(out);
  if (!csv) throw std::runtime_error("cannot write " + out);
  csv << "frame,psnr,ssim,ms_ssim\n" << std::setprecision(10);
  double sp = 0, ss = 0, sm = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ImageD x = srgb8 ? to_srgb8_normalized(a[k]) : a[k];
    ImageD y = srgb8 ? to_srgb8_normalized(b[k]) : b[k];
    require_same_shape(x, y, ("frame " + std::to_string(k)).c_str());
    const double p = psnr(x, y), s = ssim(x, y), m = ms_ssim(x, y);
    csv << k << ',' << p << ',' << s << ',' << m << '\n';
    sp += p;
    ss += s;
    sm += m;
  }
  const double n = static_cast<double>(a.size());
  csv << "mean," << sp / n << ',' << ss / n << ',' << sm / n << '\n';
  std::cout << std::fixed << std::setprecision(4) << "PSNR " << sp / n << " dB, SSIM " << ss / n << ", MS-SSIM "
            << sm / n << " over " << a.size() << " frames\n";
  return 0;
}

int run_bd(const std::string& test, const std::string& anchor, const std::string& rate_col,
           const std::string& quality_col) {
  const auto r = bd_metrics(curve_from_csv(test, rate_col, quality_col), curve_from_csv(anchor, rate_col, quality_col));
  std::cout << std::fixed << std::setprecision(4) << "BD-rate " << r.bd_rate << " %\nBD-PSNR " << r.bd_psnr
            << " dB\n";
  return 0;
}

int run_info(const std::string& model) {
  const auto c = load(model);
  const auto& h = c.header;
  int frames = 0;
  for (const auto& g : c.gops) frames += g.frame_count;
  const auto bytes = fs::file_size(model);
  std::cout << "D2GV v" << h.version << "  " << h.width << "x" << h.height << "  GoP size " << h.gop_size << "  "
            << h.gop_count() << " GoP(s)  " << (h.quantized() ? "quantized" : "f32") << "\n";
  for (int g = 0; g < h.gop_count(); ++g) {
    const auto& m = c.gops[static_cast<std::size_t>(g)];
    const auto& cfg = m.net.config;
    std::cout << "  GoP " << g << ": " << m.frame_count << " frames, " << m.canonical.size() << " primitives, MLP "
              << m.net.param_count() << " params (latent " << cfg.latent_dim << ", hidden " << cfg.hidden << ", "
              << (cfg.dynamics == Dynamics::direct ? "direct"
                  : cfg.dynamics == Dynamics::ode ? "ode"
                                                  : "ode+state")
              << (cfg.integrator == Integrator::rk4 ? " rk4" : " euler") << "), offset " << h.offsets[g] << "\n";
  }
  std::cout << "param_count " << param_count(c.gops) << "\nbytes " << bytes << "\nbpp "
            << bpp(bytes, h.width, h.height, frames) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deformable 2D Gaussian video codec"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (0: all available CPUs)");

  EncodeArgs enc;
  auto* encode = app.add_subcommand("encode", "Train a model for a video and write a .d2gv container");
  encode->add_option("--input", enc.input, "Directory of PNG frames or a .y4m file")->required();
  encode->add_option("--out", enc.out, "Output container")->required();
  encode->add_option("--gop", enc.gop, "Frames per GoP")->capture_default_str();
  encode->add_option("--prims", enc.prims, "Primitives per GoP")->capture_default_str();
  encode->add_option("--scales", enc.scales, "Training scales, comma separated")->capture_default_str();
  encode->add_option("--scale-weights", enc.weights, "Per-scale loss weights (default 8 for scale 1, else 1)");
  encode->add_option("--seed", enc.seed, "RNG seed")->capture_default_str();
  encode->add_option("--coarse-iters", enc.coarse, "Coarse-stage iterations")->capture_default_str();
  encode->add_option("--fine-iters", enc.fine, "Fine-stage iterations")->capture_default_str();
  encode->add_option("--log", enc.log, "Training log CSV");
  encode->add_flag("--quantize", enc.quantize, "16-bit attribute quantization");
  encode->add_flag("--no-grouping", enc.no_grouping, "Render every primitive at every scale");
  encode->add_flag("--no-coarse", enc.abl.no_coarse, "Skip the coarse stage");
  encode->add_flag("--loss-l2-only", enc.l2_only, "Train with the L2 term only");
  encode->add_flag("--loss-ssim-only", enc.ssim_only, "Train with the SSIM term only");
  encode->add_flag("--no-ode", enc.abl.no_ode, "Per-timestamp offsets instead of an integrated state");
  encode->add_flag("--no-dc", enc.abl.no_dc, "Disable color offsets");
  encode->add_flag("--no-dc-no-gate", enc.abl.no_dc_no_gate, "Disable color offsets and the opacity gate");
  encode->add_flag("--euler", enc.abl.euler_integrator, "Euler instead of RK4");
  encode->add_flag("--state-conditioned", enc.abl.state_conditioned_ode, "Feed the latent state to the dynamics");

  std::string model, out, t = "0", ref, test, ratios = "0.1:1.0:0.1", order = "dopt";
  std::string rate_col = "bpp", quality_col = "psnr";
  double scale = 1.0, keep_ratio = -1, epsilon = kDefaultEpsilon;
  int budget = -1;
  bool srgb8 = false;

  auto* render_cmd = app.add_subcommand("render", "Render one frame");
  render_cmd->add_option("--model", model, "Container")->required();
  render_cmd->add_option("--scale", scale, "Downsample factor >= 1")->capture_default_str();
  auto* kr = render_cmd->add_option("--keep-ratio", keep_ratio, "Fraction of stored primitives to decode");
  auto* kb = render_cmd->add_option("--budget", budget, "Number of stored primitives to decode");
  kr->excludes(kb);
  render_cmd->add_option("--t", t, "Frame index, or fractional frame position to interpolate")->capture_default_str();
  render_cmd->add_option("--epsilon", epsilon, "Aliasing tolerance for scale grouping")->capture_default_str();
  render_cmd->add_option("--out", out, "Output PNG")->required();

  auto* curve = app.add_subcommand("prune-curve", "Rate-distortion curve over keep ratios");
  curve->add_option("--model", model, "Container")->required();
  curve->add_option("--ref", ref, "Reference frames (directory or .y4m)")->required();
  curve->add_option("--ratios", ratios, "start:stop:step")->capture_default_str();
  curve->add_option("--scale", scale, "Evaluation scale")->capture_default_str();
  curve->add_option("--order", order, "dopt (stored ranking) or color (|c| anchor)")->capture_default_str();
  curve->add_option("--epsilon", epsilon, "Aliasing tolerance for scale grouping")->capture_default_str();
  curve->add_option("--out", out, "Output CSV")->required();

  auto* met = app.add_subcommand("metrics", "PSNR / SSIM / MS-SSIM between two frame sets");
  met->add_option("--ref", ref, "Reference frames")->required();
  met->add_option("--test", test, "Test frames")->required();
  met->add_option("--out", out, "Output CSV")->required();
  met->add_flag("--srgb8", srgb8, "Compare 8-bit sRGB codes instead of linear floats");

  auto* bd = app.add_subcommand("bd", "Bjontegaard delta between two RD CSVs");
  bd->add_option("--test", test, "Test curve CSV")->required();
  bd->add_option("--anchor", ref, "Anchor curve CSV")->required();
  bd->add_option("--rate-col", rate_col, "Rate column")->capture_default_str();
  bd->add_option("--quality-col", quality_col, "Quality column")->capture_default_str();

  auto* info = app.add_subcommand("info", "Container summary");
  info->add_option("--model", model, "Container")->required();

  CLI11_PARSE(app, argc, argv);
  set_num_threads(threads);
  try {
    if (*encode) return run_encode(enc);
    if (*render_cmd) return run_render(model, scale, keep_ratio, budget, t, out, epsilon);
    if (*curve) return run_prune_curve(model, ref, ratios, out, scale, order, epsilon);
    if (*met) return run_metrics(ref, test, out, srgb8);
    if (*bd) return run_bd(test, ref, rate_col, quality_col);
    if (*info) return run_info(model);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
