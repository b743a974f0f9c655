// ctrlgs command-line entry point: gen, flow, segment, train, render, eval.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctrlgs/checkpoint.hpp"
#include "ctrlgs/config.hpp"
#include "ctrlgs/dataset.hpp"
#include "ctrlgs/error.hpp"
#include "ctrlgs/metrics.hpp"
#include "ctrlgs/synthetic.hpp"
#include "ctrlgs/trainer.hpp"
#include "ctrlgs/windows.hpp"

namespace fs = std::filesystem;
using namespace ctrlgs;

namespace {

void print_line(const char* fmt, auto... args) {
  std::printf(fmt, args...);
  std::printf("\n");
}

std::vector<Image> dataset_frames(const Dataset& ds) {
  std::vector<Image> frames;
  for (const auto& f : ds.frames) frames.push_back(read_image(f.image_path));
  return frames;
}

std::vector<Image> directory_frames(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorKind::kIngestion, dir.string() + " is not a directory");
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (ext == ".pfm" || ext == ".ppm" || ext == ".pf") paths.push_back(e.path());
  }
  std::sort(paths.begin(), paths.end());
  std::vector<Image> frames;
  for (const auto& p : paths) frames.push_back(read_image(p));
  return frames;
}

WindowSet build_windows(WindowMethod method, int n, const FlowSeries* flow) {
  require(n >= 1, ErrorKind::kUsage, "window count N must be >= 1");
  if (method == WindowMethod::kEqual) return equal_windows(n);
  require(flow != nullptr, ErrorKind::kUsage,
          std::string("method ") + window_method_name(method) + " needs a flow file (--flow)");
  if (method == WindowMethod::kNHighest) return n_highest_windows(*flow, n);
  bool fell_back = false;
  WindowSet w = greedy_threshold_windows(*flow, n, &fell_back);
  if (fell_back) std::fprintf(stderr, "warning: total flow is zero, using equal windows\n");
  return w;
}

void write_metrics_header(std::ofstream& os) { os << "iter,loss,psnr,ssim\n"; }

int cmd_gen(const fs::path& out, SyntheticSceneSpec spec) {
  const auto start = std::chrono::steady_clock::now();
  const GeneratedDataset g = generate_synthetic(spec, out);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  print_line("generated %d frames (%dx%d, %d Gaussians, motion %s) in %.2f s", spec.frame_count, spec.width,
             spec.height, spec.gaussian_count, motion_preset_name(spec.motion), secs);
  print_line("manifest   %s", g.manifest.string().c_str());
  print_line("points     %s", g.points.string().c_str());
  print_line("trajectory %s", g.trajectory.string().c_str());
  return 0;
}

int cmd_flow(const fs::path& manifest, const fs::path& frames_dir, const fs::path& out, fs::path csv, int block,
             int radius) {
  require(manifest.empty() != frames_dir.empty(), ErrorKind::kUsage, "pass exactly one of --manifest or --frames");
  const std::vector<Image> frames =
      manifest.empty() ? directory_frames(frames_dir) : dataset_frames(load_dataset(manifest, {.check_images = false}));
  const FlowSeries flow = estimate_flow_proxy(frames, block, radius);
  write_flow_file(out, flow);
  if (csv.empty()) csv = fs::path(out).replace_extension(".csv");
  {
    std::ofstream os(csv);
    require(bool(os), ErrorKind::kIo, "cannot open " + csv.string() + " for writing");
    os << "pair,t,flow\n";
    for (std::size_t k = 0; k < flow.magnitudes.size(); ++k)
      os << k << ',' << format_shortest(0.5 * (flow.timestamps[k] + flow.timestamps[k + 1])) << ','
         << format_shortest(flow.magnitudes[k]) << '\n';
  }
  const auto& m = flow.magnitudes;
  const double mean = flow.total() / double(m.size());
  const double top = *std::max_element(m.begin(), m.end());
  print_line("frames %d  pairs %zu  mean %.4f  max %.4f", flow.frame_count(), m.size(), mean, top);
  std::string peaks;
  for (int p : flow_peaks(flow)) peaks += (peaks.empty() ? "" : " ") + std::to_string(p);
  print_line("peaks (pair index) %s", peaks.empty() ? "none" : peaks.c_str());
  print_line("wrote %s and %s", out.string().c_str(), csv.string().c_str());
  return 0;
}

int cmd_segment(const fs::path& flow_path, const std::string& method_name, int n, const fs::path& out) {
  const WindowMethod method = parse_window_method(method_name);
  FlowSeries flow;
  if (!flow_path.empty()) flow = read_flow_file(flow_path);
  const WindowSet w = build_windows(method, n, flow_path.empty() ? nullptr : &flow);
  write_windows_file(out, w);
  const std::vector<double> sums = flow_path.empty() ? std::vector<double>(w.count(), 0.0) : window_flow_sums(flow, w);
  print_line("%-6s %-12s %-12s %s", "window", "start", "end", "flow_sum");
  for (int k = 0; k < w.count(); ++k)
    print_line("%-6d %-12.6g %-12.6g %.6g", k, w.start(k), w.end(k), sums[k]);
  print_line("wrote %s", out.string().c_str());
  return 0;
}

struct TrainArgs {
  fs::path manifest, out, config, windows, flow, resume;
  std::vector<std::string> overrides;
  bool auto_split = false;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  fs::create_directories(a.out);
  const Dataset ds = load_dataset(a.manifest, {.auto_split = a.auto_split});
  TrainState state;
  if (!a.resume.empty()) {
    state = load_checkpoint(a.resume);
    state.config = apply_overrides(state.config, a.overrides);
    state.config.validate();
  } else {
    const TrainConfig config = resolve_config(a.config, a.overrides);
    WindowSet windows;
    if (!a.windows.empty()) {
      windows = read_windows_file(a.windows);
    } else if (!a.flow.empty()) {
      const FlowSeries flow = read_flow_file(a.flow);
      windows = build_windows(config.window_method, config.window_count, &flow);
    } else {
      require(!config.segment_heads || config.window_method == WindowMethod::kEqual, ErrorKind::kUsage,
              "segment heads with window_method " + std::string(window_method_name(config.window_method)) +
                  " need --windows or --flow");
      windows = equal_windows(config.window_count);
    }
    state = init_state(config, ds, windows);
  }
  write_config(a.out / "config.json", state.config);
  write_windows_file(a.out / "windows.txt", state.quantizer.windows());
  const TrainData data = load_train_data(ds, state.config);

  const bool append = !a.resume.empty() && fs::exists(a.out / "metrics.csv");
  std::ofstream metrics(a.out / "metrics.csv", append ? std::ios::app : std::ios::trunc);
  require(bool(metrics), ErrorKind::kIo, "cannot write metrics log");
  if (!append) write_metrics_header(metrics);

  TrainOptions opts;
  opts.dump_dir = a.out;
  opts.on_eval = [&](const MetricRecord& r) {
    metrics << format_metric_line(r) << '\n';
    metrics.flush();
    if (!a.quiet)
      print_line("iter %6d  loss %.6f  psnr %.3f  ssim %.4f  gaussians %zu", r.iteration, r.loss, r.psnr, r.ssim,
                 state.canonical.size());
  };
  const auto start = std::chrono::steady_clock::now();
  train(state, data, opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  save_checkpoint(a.out / "checkpoint.ckpt", state);
  print_line("trained to iteration %d in %.1f s; wrote %s", state.iteration, secs,
             (a.out / "checkpoint.ckpt").string().c_str());
  return 0;
}

std::vector<double> parse_times(const std::string& list) {
  std::vector<double> ts;
  std::string item;
  for (std::size_t i = 0; i <= list.size(); ++i) {
    if (i == list.size() || list[i] == ',') {
      double t;
      try {
        t = parse_double(item);
      } catch (const Error&) {
        fail(ErrorKind::kUsage, "--t: '" + item + "' is not a number");
      }
      require(t >= 0.0 && t <= 1.0, ErrorKind::kUsage, "--t: time " + item + " outside [0, 1]");
      ts.push_back(t);
      item.clear();
    } else {
      item += list[i];
    }
  }
  return ts;
}

int cmd_render(const fs::path& ckpt, const fs::path& manifest, int frame, const std::string& times,
               const fs::path& out, const std::string& format) {
  require(format == "pfm" || format == "ppm", ErrorKind::kUsage, "--format must be pfm or ppm");
  const std::vector<double> ts = parse_times(times);
  const TrainState state = load_checkpoint(ckpt);
  const Dataset ds = load_dataset(manifest, {.auto_split = true, .check_images = false});
  require(frame >= 0 && frame < int(ds.frames.size()), ErrorKind::kUsage,
          "--frame " + std::to_string(frame) + " out of range (manifest has " + std::to_string(ds.frames.size()) +
              " frames)");
  fs::create_directories(out);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const RenderResult r = render_at(state, ds.frames[frame].camera, ts[i]);
    char name[64];
    std::snprintf(name, sizeof(name), "render_%03zu.%s", i, format.c_str());
    const fs::path p = out / name;
    if (format == "pfm")
      write_pfm(p, r.image);
    else
      write_ppm(p, r.image);
    print_line("t=%s window=%d -> %s", format_shortest(ts[i]).c_str(), state.quantizer.window_of(ts[i]),
               p.string().c_str());
  }
  return 0;
}

int cmd_eval(const fs::path& ckpt, const fs::path& manifest, const std::string& split_name, const fs::path& csv,
             bool auto_split) {
  const Split split = parse_split(split_name);
  const TrainState state = load_checkpoint(ckpt);
  const Dataset ds = load_dataset(manifest, {.auto_split = auto_split});
  std::vector<TrainFrame> frames;
  for (const auto* f : ds.split(split)) frames.push_back({f->camera, f->t, read_image(f->image_path), {}});
  require(!frames.empty(), ErrorKind::kUsage, "split '" + split_name + "' has no frames");
  const EvalSummary s = evaluate(state, frames);
  std::ofstream os(csv);
  require(bool(os), ErrorKind::kIo, "cannot open " + csv.string() + " for writing");
  os << "t,psnr,ssim,ms_ssim,ms_ssim_scales\n";
  print_line("%-10s %-9s %-8s %-8s", "t", "psnr", "ssim", "ms_ssim");
  for (const auto& f : s.frames) {
    os << format_shortest(f.t) << ',' << format_shortest(f.psnr) << ',' << format_shortest(f.ssim) << ','
       << format_shortest(f.ms_ssim) << ',' << f.ms_ssim_scales << '\n';
    print_line("%-10.6g %-9.4f %-8.5f %-8.5f", f.t, f.psnr, f.ssim, f.ms_ssim);
  }
  const double fps = s.seconds > 0.0 ? double(frames.size()) / s.seconds : 0.0;
  os << "mean," << format_shortest(s.psnr) << ',' << format_shortest(s.ssim) << ',' << format_shortest(s.ms_ssim)
     << ",\n";
  print_line("mean       %-9.4f %-8.5f %-8.5f", s.psnr, s.ssim, s.ms_ssim);
  if (!s.frames.empty() && s.frames.front().ms_ssim_scales < 5)
    print_line("note: ms-ssim used %d scales (images too small for 5)", s.frames.front().ms_ssim_scales);
  print_line("render throughput %.1f frames/s; wrote %s", fps, csv.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cascaded temporal residue Gaussian splatting"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dynamic scene");
  fs::path gen_out;
  SyntheticSceneSpec spec;
  std::string preset = "two_burst";
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--preset", preset, "static | linear | two_burst")->capture_default_str();
  gen->add_option("--seed", spec.seed)->capture_default_str();
  gen->add_option("--gaussians", spec.gaussian_count)->capture_default_str();
  gen->add_option("--frames", spec.frame_count)->capture_default_str();
  gen->add_option("--width", spec.width)->capture_default_str();
  gen->add_option("--height", spec.height)->capture_default_str();
  gen->add_option("--amplitude", spec.amplitude)->capture_default_str();
  gen->add_option("--max-turn", spec.max_turn)->capture_default_str();
  gen->add_option("--burst-fraction", spec.burst_fraction)->capture_default_str();
  gen->add_option("--quiet-speed", spec.quiet_speed)->capture_default_str();
  gen->add_option("--orbit-arc", spec.orbit_arc)->capture_default_str();
  gen->add_option("--val-every", spec.val_every)->capture_default_str();

  auto* flow = app.add_subcommand("flow", "Estimate per-frame-pair flow magnitudes");
  fs::path flow_manifest, flow_frames, flow_out, flow_csv;
  int block = 8, radius = 4;
  flow->add_option("--manifest", flow_manifest, "Dataset manifest (frames in time order)");
  flow->add_option("--frames", flow_frames, "Directory of PF/P6 frames (sorted by name)");
  flow->add_option("--out", flow_out, "Flow file to write")->required();
  flow->add_option("--csv", flow_csv, "Plot-ready curve (default: <out>.csv)");
  flow->add_option("--block", block, "Block size in pixels")->capture_default_str();
  flow->add_option("--radius", radius, "Search radius in pixels")->capture_default_str();

  auto* seg = app.add_subcommand("segment", "Build temporal windows");
  fs::path seg_flow, seg_out;
  std::string method = "threshold";
  int n = 4;
  seg->add_option("--flow", seg_flow, "Flow file (required for nhighest and threshold)");
  seg->add_option("--method", method, "equal | nhighest | threshold")->capture_default_str();
  seg->add_option("-n,--windows", n, "Window count N")->capture_default_str();
  seg->add_option("--out", seg_out, "Windows file to write")->required();

  auto* tr = app.add_subcommand("train", "Train a model");
  TrainArgs targs;
  tr->add_option("--manifest", targs.manifest)->required();
  tr->add_option("--out", targs.out, "Output directory")->required();
  tr->add_option("--config", targs.config, "JSON config file");
  tr->add_option("--set", targs.overrides, "key=value override (repeatable)");
  tr->add_option("--windows", targs.windows, "Windows file");
  tr->add_option("--flow", targs.flow, "Flow file; windows built with the configured method");
  tr->add_option("--resume", targs.resume, "Continue from a checkpoint");
  tr->add_flag("--auto-split", targs.auto_split, "Every 4th frame trains, midpoints validate");
  tr->add_flag("--quiet", targs.quiet);

  auto* rd = app.add_subcommand("render", "Render a checkpoint at given times");
  fs::path rd_ckpt, rd_manifest, rd_out;
  std::string times, format = "pfm";
  int frame = 0;
  rd->add_option("--checkpoint", rd_ckpt)->required();
  rd->add_option("--manifest", rd_manifest, "Manifest supplying the camera")->required();
  rd->add_option("--frame", frame, "Manifest frame whose camera is used")->capture_default_str();
  rd->add_option("--t", times, "Comma-separated times in [0, 1]")->required();
  rd->add_option("--out", rd_out, "Output directory")->required();
  rd->add_option("--format", format, "pfm | ppm")->capture_default_str();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint against a dataset split");
  fs::path ev_ckpt, ev_manifest, ev_csv = "eval.csv";
  std::string split = "val";
  bool ev_auto = false;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--manifest", ev_manifest)->required();
  ev->add_option("--split", split, "train | val")->capture_default_str();
  ev->add_option("--csv", ev_csv)->capture_default_str();
  ev->add_flag("--auto-split", ev_auto);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: usage_error: %s\n", e.what());
    return 2;
  }

  try {
    if (gen->parsed()) {
      spec.motion = parse_motion_preset(preset);
      return cmd_gen(gen_out, spec);
    }
    if (flow->parsed()) return cmd_flow(flow_manifest, flow_frames, flow_out, flow_csv, block, radius);
    if (seg->parsed()) return cmd_segment(seg_flow, method, n, seg_out);
    if (tr->parsed()) return cmd_train(targs);
    if (rd->parsed()) return cmd_render(rd_ckpt, rd_manifest, frame, times, rd_out, format);
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_manifest, split, ev_csv, ev_auto);
  } catch (const Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::fprintf(stderr, "error: %s: %s\n", error_kind_name(e.kind()), msg.c_str());
    return e.kind() == ErrorKind::kUsage ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal_error: %s\n", e.what());
    return 1;
  }
  return 0;
}
