#include "cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "deformsplat/data_io.hpp"
#include "deformsplat/initialization.hpp"
#include "deformsplat/metrics.hpp"
#include "deformsplat/parallel.hpp"
#include "deformsplat/run_config.hpp"

#ifndef DEFORMSPLAT_VERSION
#define DEFORMSPLAT_VERSION "unknown"
#endif

namespace deformsplat {

using nlohmann::json;

namespace {

/// Usage problems detected after parsing.
class UsageError : public Error {
public:
  using Error::Error;
};

std::string frame_name(const char *prefix, int frame, const char *ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, *ext ? "%s%04d.%s" : "%s%04d%s", prefix, frame, ext);
  return buf;
}

void write_json(const fs::path &path, const json &j) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out)
    throw IoError("cannot write " + path.string());
}

json read_json(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    throw LoadError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception &e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

json camera_json(const Camera &c) {
  json ext = json::array();
  for (int r = 0; r < 4; ++r)
    for (int k = 0; k < 4; ++k)
      ext.push_back(c.world_to_camera(r, k));
  return {{"width", c.width}, {"height", c.height}, {"fx", c.fx},   {"fy", c.fy},
          {"cx", c.cx},       {"cy", c.cy},         {"extrinsics", ext}};
}

Camera camera_from_json(const json &j) {
  Camera c;
  try {
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    const json &ext = j.at("extrinsics");
    for (int r = 0; r < 4; ++r)
      for (int k = 0; k < 4; ++k)
        c.world_to_camera(r, k) = ext.at(4 * r + k).get<double>();
  } catch (const json::exception &e) {
    throw LoadError(std::string("bad camera in run manifest: ") + e.what());
  }
  c.validate();
  return c;
}

Image<std::uint16_t> depth_png(const RenderOutput &out, double scale) {
  Image<std::uint16_t> img(out.alpha.width(), out.alpha.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const double a = out.alpha(x, y);
      const double d = a > 0.0 ? out.depth(x, y) / a : 0.0;
      img(x, y) = static_cast<std::uint16_t>(std::clamp(std::round(d * scale), 0.0, 65535.0));
    }
  return img;
}

Image<std::uint16_t> unit_png(const ImageF &v) {
  Image<std::uint16_t> img(v.width(), v.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      img(x, y) = static_cast<std::uint16_t>(std::clamp(std::round(v(x, y) * 255.0), 0.0, 255.0));
  return img;
}

void write_render(const RenderOutput &out, const fs::path &dir, const std::string &stem,
                  const std::string &channel) {
  fs::create_directories(dir);
  if (channel == "all" || channel == "color")
    write_png_color(dir / (stem + "_color.png"), out.color);
  if (channel == "all" || channel == "depth")
    write_png(dir / (stem + "_depth.png"), depth_png(out, 1000.0), 16);
  if (channel == "all" || channel == "hallucination")
    write_png(dir / (stem + "_hallucination.png"), unit_png(out.hallucination), 8);
}

/// Config keys as `--dotted.name VALUE` flags.
struct KeyFlags {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option *> options;

  void add(CLI::App &app) {
    for (const auto &k : config_keys())
      options[k.name] =
          app.add_option("--" + k.name, values[k.name], k.doc)->type_name(k.type)->group(
              "Config keys");
  }

  void apply(RunConfig &config) const {
    for (const auto &k : config_keys())
      if (options.at(k.name)->count() > 0)
        apply_config_flag(config, k, values.at(k.name));
  }
};

RunConfig resolve_config(const std::string &config_path, const KeyFlags &flags) {
  RunConfig config = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  flags.apply(config);
  config.validate();
  return config;
}

Camera apply_overrides(Camera c, const RunConfig &config) {
  if (config.camera_fx > 0.0)
    c.fx = config.camera_fx;
  if (config.camera_fy > 0.0)
    c.fy = config.camera_fy;
  if (config.camera_cx > 0.0)
    c.cx = config.camera_cx;
  if (config.camera_cy > 0.0)
    c.cy = config.camera_cy;
  return c;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::string preset = "sheet";
  int frames = 10;
  int size = 64;
  std::uint64_t seed = 0;
  bool occluder = false;
  double bar_x = 24.0;
  int bar_width = 10;
  double bar_velocity = 0.0;
  double temporal_frequency = 1.0;
  double amplitude = 0.1;
  double focal = 0.0;
  double color_noise = 0.0;
  double depth_noise = 0.0;
  bool no_disparity = false;
};

int cmd_synth(const SynthArgs &a, std::ostream &out) {
  if (a.size <= 0 || a.frames <= 0)
    throw UsageError("--size and --frames must be positive");
  SyntheticScene s;
  s.width = s.height = a.size;
  s.frames = a.frames;
  s.focal = a.focal > 0.0 ? a.focal : a.size;
  s.amplitude = a.preset == "plane" ? 0.0 : a.amplitude;
  s.temporal_frequency = a.temporal_frequency;
  s.occluder = a.occluder;
  s.bar_x = a.bar_x;
  s.bar_width = a.bar_width;
  s.bar_velocity = a.bar_velocity;
  s.color_noise = a.color_noise;
  s.depth_noise = a.depth_noise;
  s.disparity = !a.no_disparity;
  const DatasetManifest m = generate_synthetic(s, a.seed, a.out);
  out << "wrote " << m.frames.size() << " frames of " << m.camera.width << "x" << m.camera.height
      << " to " << a.out << " (depth_scale " << m.depth_scale
      << (s.disparity ? ", disparity" : "") << ", ground truth)\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_train(const RunConfig &config, std::ostream &out) {
  if (config.dataset.empty())
    throw UsageError("train needs a dataset (--dataset or the 'dataset' config key)");
  set_thread_count(static_cast<unsigned>(config.threads));
  const Dataset ds = load_dataset(config.dataset);
  if (ds.frames.empty())
    throw LoadError("dataset has no frames");
  const Camera camera = apply_overrides(ds.manifest.camera, config);

  std::vector<FrameObservation> frames = ds.frames;
  std::optional<BaselineFit> baseline;
  if (config.fill_depth_from_disparity && frames[0].disparity) {
    baseline = fit_baseline(frames[0], camera.fx);
    for (auto &f : frames)
      if (f.disparity)
        f = fill_depth(f, baseline->baseline, camera);
  }

  const fs::path dir = config.output;
  fs::create_directories(dir);
  json manifest = {{"version", DEFORMSPLAT_VERSION},
                   {"seed", config.seed},
                   {"dataset", config.dataset},
                   {"frames", frames.size()},
                   {"camera", camera_json(camera)},
                   {"baseline", baseline ? json(baseline->baseline) : json(nullptr)},
                   {"config", to_json(config)}};
  write_json(dir / "run_manifest.json", manifest);

  std::ofstream csv(dir / "loss.csv");
  csv << "iter,frame,total,image,depth,rigid,rot,iso,halluc,smooth\n";
  auto log = [&](const IterationRecord &r) {
    if (r.iteration % config.log_every != 0)
      return;
    const LossBreakdown &t = r.terms;
    char line[512];
    std::snprintf(line, sizeof line, "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  r.iteration, r.frame, t.total, t.image, t.depth, t.rigid, t.rotation,
                  t.isometry, t.hallucination, t.smoothness);
    csv << line;
  };

  json summary = {{"frames", json::array()}};
  auto finish_frame = [&](const GaussianCloud &cloud, int f, double seconds) {
    const RenderOutput r = render(cloud, camera, config.fit.raster);
    const double p = psnr(r.color, frames[f].image, frames[f].tool_mask);
    if (config.export_ply)
      export_ply(cloud, dir / frame_name("frame_", f, "ply"));
    if (config.export_renders)
      write_render(r, dir / "renders", frame_name("frame_", f, ""), "all");
    summary["frames"].push_back({{"frame", f}, {"psnr", p}, {"gaussians", cloud.size()}});
    char line[160];
    std::snprintf(line, sizeof line, "frame %d: %zu Gaussians, PSNR %.3f dB, %.1f s\n", f,
                  cloud.size(), p, seconds);
    out << line << std::flush;
  };

  using clock = std::chrono::steady_clock;
  auto t0 = clock::now();
  const FirstFrameResult first = fit_first_frame(frames[0], camera, config.fit, log);
  finish_frame(first.cloud, 0, std::chrono::duration<double>(clock::now() - t0).count());
  GaussianCloud cloud = first.cloud;
  for (std::size_t f = 1; f < frames.size(); ++f) {
    t0 = clock::now();
    cloud = fit_next_frame(cloud, frames[f], first.reference, camera, config.fit,
                           static_cast<int>(f), log);
    finish_frame(cloud, static_cast<int>(f),
                 std::chrono::duration<double>(clock::now() - t0).count());
  }
  csv.close();
  if (!csv)
    throw IoError("cannot write " + (dir / "loss.csv").string());
  write_json(dir / "train_summary.json", summary);
  return 0;
}

// ---------------------------------------------------------------------------

struct RenderArgs {
  std::string checkpoint;
  std::string run;
  std::string out = ".";
  std::string channel = "all";
  std::vector<double> translate;
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
};

int cmd_render(const RenderArgs &a, std::ostream &out) {
  const fs::path checkpoint = a.checkpoint;
  const fs::path run = a.run.empty() ? checkpoint.parent_path() : fs::path(a.run);
  const json manifest = read_json(run / "run_manifest.json");
  RunConfig config;
  apply_config_json(config, manifest.at("config"));
  Camera camera = camera_from_json(manifest.at("camera"));
  if (a.fx > 0.0)
    camera.fx = a.fx;
  if (a.fy > 0.0)
    camera.fy = a.fy;
  if (a.cx > 0.0)
    camera.cx = a.cx;
  if (a.cy > 0.0)
    camera.cy = a.cy;
  if (a.width > 0)
    camera.width = a.width;
  if (a.height > 0)
    camera.height = a.height;
  if (!a.translate.empty()) {
    if (a.translate.size() != 3)
      throw UsageError("--translate takes three values");
    // Moving the camera by t shifts every point by -t in camera space.
    camera.world_to_camera.topRightCorner<3, 1>() -=
        Vec3(a.translate[0], a.translate[1], a.translate[2]);
  }
  camera.validate();
  set_thread_count(static_cast<unsigned>(config.threads));
  const GaussianCloud cloud = load_ply(checkpoint);
  const RenderOutput r = render(cloud, camera, config.fit.raster);
  write_render(r, a.out, checkpoint.stem().string(), a.channel);
  out << "rendered " << checkpoint.string() << " (" << a.channel << ") to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string run;
  std::string dataset;
  std::string out;
  bool fps = false;
  int fps_renders = 50;
};

json optional_json(const std::optional<double> &v) { return v ? json(*v) : json(nullptr); }

int cmd_eval(const EvalArgs &a, std::ostream &out) {
  const fs::path run = a.run;
  const json manifest = read_json(run / "run_manifest.json");
  RunConfig config;
  apply_config_json(config, manifest.at("config"));
  const Camera camera = camera_from_json(manifest.at("camera"));
  const std::string dataset_path = a.dataset.empty() ? config.dataset : a.dataset;
  set_thread_count(static_cast<unsigned>(config.threads));
  const Dataset ds = load_dataset(dataset_path);

  std::size_t checkpoints = 0;
  while (fs::exists(run / frame_name("frame_", static_cast<int>(checkpoints), "ply")))
    ++checkpoints;
  if (checkpoints != ds.frames.size())
    throw LoadError("run has " + std::to_string(checkpoints) + " checkpoints but the dataset has " +
                    std::to_string(ds.frames.size()) + " frames");

  EvalReport report;
  GaussianCloud last;
  for (std::size_t f = 0; f < ds.frames.size(); ++f) {
    const FrameObservation &obs = ds.frames[f];
    last = load_ply(run / frame_name("frame_", static_cast<int>(f), "ply"));
    const RenderOutput r = render(last, camera, config.fit.raster);
    FrameMetrics m;
    m.psnr = psnr(r.color, obs.image, obs.tool_mask);
    try {
      m.ssim = ssim(r.color, obs.image, obs.tool_mask);
    } catch (const EmptySupervisionError &) {
    }
    std::size_t usable = 0;
    for (auto v : obs.tool_mask.data())
      usable += v ? 1 : 0;
    m.mask_coverage = static_cast<double>(usable) / static_cast<double>(obs.tool_mask.pixel_count());
    if (!ds.ground_truth.empty()) {
      const GroundTruth &gt = ds.ground_truth[f];
      const DepthError de = depth_error(r.depth, r.alpha, gt.depth, obs.tool_mask);
      if (de.count > 0) {
        m.depth_mae = de.mae;
        m.depth_rmse = de.rmse;
      }
      m.hallucination_iou = hallucination_iou(r.hallucination, gt.occluded);
    }
    report.frames.push_back(m);
  }
  report.summarize();
  if (a.fps)
    report.fps = measure_fps(last, camera, config.fit.raster, a.fps_renders);

  json frames = json::array();
  std::ostringstream csv;
  csv << "frame,psnr,ssim,mask_coverage,depth_mae,depth_rmse,hallucination_iou\n";
  auto cell = [](const std::optional<double> &v) {
    if (!v)
      return std::string();
    char b[40];
    std::snprintf(b, sizeof b, "%.17g", *v);
    return std::string(b);
  };
  for (std::size_t f = 0; f < report.frames.size(); ++f) {
    const FrameMetrics &m = report.frames[f];
    frames.push_back({{"frame", f},
                      {"psnr", m.psnr},
                      {"ssim", optional_json(m.ssim)},
                      {"lpips", nullptr},
                      {"mask_coverage", m.mask_coverage},
                      {"depth_mae", optional_json(m.depth_mae)},
                      {"depth_rmse", optional_json(m.depth_rmse)},
                      {"hallucination_iou", optional_json(m.hallucination_iou)}});
    csv << f << "," << cell(m.psnr) << "," << cell(m.ssim) << "," << cell(m.mask_coverage) << ","
        << cell(m.depth_mae) << "," << cell(m.depth_rmse) << "," << cell(m.hallucination_iou)
        << "\n";
  }
  const json j = {{"frames", frames},
                  {"mean_psnr", report.mean_psnr},
                  {"mean_ssim", optional_json(report.mean_ssim)},
                  {"mean_lpips", nullptr},
                  {"mean_depth_mae", optional_json(report.mean_depth_mae)},
                  {"mean_depth_rmse", optional_json(report.mean_depth_rmse)},
                  {"mean_hallucination_iou", optional_json(report.mean_hallucination_iou)},
                  {"fps", a.fps ? json(report.fps) : json(nullptr)}};
  const fs::path dest = a.out.empty() ? run : fs::path(a.out);
  fs::create_directories(dest);
  write_json(dest / "eval_report.json", j);
  std::ofstream(dest / "eval_report.csv") << csv.str();
  char line[200];
  std::snprintf(line, sizeof line, "%zu frames: PSNR %.3f dB", report.frames.size(),
                report.mean_psnr);
  out << line;
  if (report.mean_ssim)
    out << ", SSIM " << *report.mean_ssim;
  if (report.mean_depth_mae)
    out << ", depth MAE " << *report.mean_depth_mae;
  if (report.mean_hallucination_iou)
    out << ", hallucination IoU " << *report.mean_hallucination_iou;
  if (a.fps)
    out << ", " << report.fps << " FPS";
  out << "\n";
  return 0;
}

} // namespace

int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
  CLI::App app{"Gaussian-splatting reconstruction of deforming surfaces from RGBD video"};
  app.set_version_flag("--version", DEFORMSPLAT_VERSION);
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App *s = app.add_subcommand("synth", "Generate a synthetic RGBD sequence with ground truth");
  s->add_option("--out", synth.out, "output dataset directory")->required();
  s->add_option("--preset", synth.preset, "scene preset")
      ->check(CLI::IsMember({"sheet", "plane"}))
      ->capture_default_str();
  s->add_option("--frames", synth.frames, "frame count")->capture_default_str();
  s->add_option("--size", synth.size, "image width and height in pixels")->capture_default_str();
  s->add_option("--seed", synth.seed, "texture and noise seed")->capture_default_str();
  s->add_flag("--occluder", synth.occluder, "draw a tool bar and mask it out");
  s->add_option("--bar-x", synth.bar_x, "bar left column at frame 0")->capture_default_str();
  s->add_option("--bar-width", synth.bar_width, "bar width in pixels")->capture_default_str();
  s->add_option("--bar-velocity", synth.bar_velocity, "bar motion in columns per frame")
      ->capture_default_str();
  s->add_option("--temporal-frequency", synth.temporal_frequency, "sheet wave frequency")
      ->capture_default_str();
  s->add_option("--amplitude", synth.amplitude, "sheet amplitude")->capture_default_str();
  s->add_option("--focal", synth.focal, "focal length in pixels, 0 = size")->capture_default_str();
  s->add_option("--color-noise", synth.color_noise, "color noise sigma")->capture_default_str();
  s->add_option("--depth-noise", synth.depth_noise, "depth noise sigma")->capture_default_str();
  s->add_flag("--no-disparity", synth.no_disparity, "do not write disparity maps");
  s->footer(config_help());

  std::string train_config;
  KeyFlags train_flags;
  CLI::App *t = app.add_subcommand("train", "Fit frame 0, then track every later frame");
  t->add_option("--config", train_config, "JSON config file");
  train_flags.add(*t);
  t->footer(config_help());

  RenderArgs rargs;
  CLI::App *r = app.add_subcommand("render", "Render a checkpoint to PNG");
  r->add_option("--checkpoint", rargs.checkpoint, "PLY checkpoint")->required();
  r->add_option("--run", rargs.run, "run directory with run_manifest.json (default: checkpoint dir)");
  r->add_option("--out", rargs.out, "output directory")->capture_default_str();
  r->add_option("--channel", rargs.channel, "which image to write")
      ->check(CLI::IsMember({"all", "color", "depth", "hallucination"}))
      ->capture_default_str();
  r->add_option("--translate", rargs.translate, "move the camera by x y z")->expected(3);
  r->add_option("--fx", rargs.fx, "focal override");
  r->add_option("--fy", rargs.fy, "focal override");
  r->add_option("--cx", rargs.cx, "principal point override");
  r->add_option("--cy", rargs.cy, "principal point override");
  r->add_option("--width", rargs.width, "image width override");
  r->add_option("--height", rargs.height, "image height override");
  r->footer(config_help());

  EvalArgs eargs;
  CLI::App *e = app.add_subcommand("eval", "Score a run against its dataset");
  e->add_option("--run", eargs.run, "run directory")->required();
  e->add_option("--dataset", eargs.dataset, "dataset directory (default: the run's)");
  e->add_option("--out", eargs.out, "report directory (default: the run directory)");
  e->add_flag("--fps", eargs.fps, "time forward renders of the last frame");
  e->add_option("--fps-renders", eargs.fps_renders, "renders to time")->capture_default_str();
  e->footer(config_help());

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (s->parsed())
      return cmd_synth(synth, out);
    if (t->parsed())
      return cmd_train(resolve_config(train_config, train_flags), out);
    if (r->parsed())
      return cmd_render(rargs, out);
    return cmd_eval(eargs, out);
  } catch (const UsageError &ex) {
    err << "error: " << ex.what() << "\n";
    return 2;
  } catch (const ConfigError &ex) {
    err << "config error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception &ex) {
    err << "error: " << ex.what() << "\n";
    return 1;
  }
}

} // namespace deformsplat
