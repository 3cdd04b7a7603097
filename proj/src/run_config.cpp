#include "deformsplat/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace deformsplat {

using nlohmann::json;

namespace {

template <typename T> const char *type_name() {
  if constexpr (std::is_same_v<T, bool>)
    return "bool";
  else if constexpr (std::is_same_v<T, int>)
    return "int";
  else if constexpr (std::is_same_v<T, std::uint64_t>)
    return "uint";
  else if constexpr (std::is_same_v<T, double>)
    return "float";
  else if constexpr (std::is_same_v<T, std::string>)
    return "string";
  else
    return "r,g,b";
}

template <typename T> T parse_value(const std::string &name, const json &j) {
  auto bad = [&]() {
    return ConfigError("config key '" + name + "' expects " + type_name<T>() + ", got " +
                       j.dump());
  };
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean())
      throw bad();
    return j.get<bool>();
  } else if constexpr (std::is_same_v<T, int>) {
    if (!j.is_number_integer() || j.get<long long>() != static_cast<int>(j.get<long long>()))
      throw bad();
    return j.get<int>();
  } else if constexpr (std::is_same_v<T, std::uint64_t>) {
    if (!j.is_number_unsigned())
      throw bad();
    return j.get<std::uint64_t>();
  } else if constexpr (std::is_same_v<T, double>) {
    if (!j.is_number())
      throw bad();
    return j.get<double>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string())
      throw bad();
    return j.get<std::string>();
  } else {
    if (!j.is_array() || j.size() != 3)
      throw bad();
    Vec3 v;
    for (int k = 0; k < 3; ++k) {
      if (!j[k].is_number())
        throw bad();
      v[k] = j[k].get<double>();
    }
    return v;
  }
}

template <typename T> json to_json_value(const T &v) {
  if constexpr (std::is_same_v<T, Vec3>)
    return json::array({v.x(), v.y(), v.z()});
  else
    return json(v);
}

template <typename T>
ConfigKey field(std::string name, std::string doc, std::function<T &(RunConfig &)> ref) {
  ConfigKey k;
  k.name = name;
  k.type = type_name<T>();
  k.doc = std::move(doc);
  k.get = [ref](const RunConfig &c) { return to_json_value(ref(const_cast<RunConfig &>(c))); };
  k.set = [ref, name](RunConfig &c, const json &j) { ref(c) = parse_value<T>(name, j); };
  return k;
}

#define DS_KEY(T, name, doc, expr)                                                                 \
  field<T>(name, doc, [](RunConfig &c) -> T & { return c.expr; })

std::vector<ConfigKey> make_keys() {
  return {
      DS_KEY(std::string, "dataset", "dataset directory (contains manifest.json)", dataset),
      DS_KEY(std::string, "output", "run output directory", output),
      DS_KEY(std::uint64_t, "seed", "seed recorded in the run manifest", seed),
      DS_KEY(int, "threads", "worker threads, 0 = all cores", threads),
      DS_KEY(int, "schedule.first_frame_iters", "iterations on frame 0",
             fit.schedule.first_frame_iters),
      DS_KEY(int, "schedule.per_frame_iters", "iterations on each later frame",
             fit.schedule.per_frame_iters),
      DS_KEY(double, "schedule.lr.position", "position learning rate, times scene extent",
             fit.schedule.lr.position),
      DS_KEY(double, "schedule.lr.rotation", "quaternion learning rate", fit.schedule.lr.rotation),
      DS_KEY(double, "schedule.lr.scale", "log-scale learning rate", fit.schedule.lr.scale),
      DS_KEY(double, "schedule.lr.opacity", "opacity-logit learning rate",
             fit.schedule.lr.opacity),
      DS_KEY(double, "schedule.lr.color", "SH coefficient learning rate", fit.schedule.lr.color),
      DS_KEY(double, "schedule.lr.hallucination", "hallucination-logit learning rate",
             fit.schedule.lr.hallucination),
      DS_KEY(int, "schedule.prune_interval", "frame-0 pruning interval, 0 = off",
             fit.schedule.prune_interval),
      DS_KEY(double, "schedule.prune_opacity_threshold", "prune below this opacity",
             fit.schedule.prune_opacity_threshold),
      DS_KEY(bool, "schedule.densify_enabled", "clone high-gradient Gaussians on frame 0",
             fit.schedule.densify_enabled),
      DS_KEY(int, "schedule.densify_interval", "densification interval",
             fit.schedule.densify_interval),
      DS_KEY(double, "schedule.densify_grad_threshold", "mean position-gradient threshold",
             fit.schedule.densify_grad_threshold),
      DS_KEY(bool, "schedule.per_frame_appearance", "free scale/opacity/color after frame 0",
             fit.schedule.per_frame_appearance),
      DS_KEY(double, "weights.image", "image L1 weight", fit.weights.image),
      DS_KEY(double, "weights.depth", "depth L1 weight", fit.weights.depth),
      DS_KEY(double, "weights.rigid", "local rigidity weight", fit.weights.rigid),
      DS_KEY(double, "weights.rotation", "rotation similarity weight", fit.weights.rotation),
      DS_KEY(double, "weights.isometry", "isometry weight", fit.weights.isometry),
      DS_KEY(double, "weights.hallucination", "hallucination mask weight",
             fit.weights.hallucination),
      DS_KEY(double, "weights.smoothness", "depth smoothness weight", fit.weights.smoothness),
      DS_KEY(double, "weights.filled_depth", "relative weight of disparity-filled depth",
             fit.weights.filled_depth),
      DS_KEY(bool, "loss.smoothness", "enable the depth smoothness term", fit.loss.smoothness),
      DS_KEY(bool, "loss.hallucination", "enable the hallucination term", fit.loss.hallucination),
      DS_KEY(double, "loss.coverage_gate", "minimum alpha for depth supervision",
             fit.loss.coverage_gate),
      DS_KEY(bool, "loss.hallucination_target_is_tool", "hallucination target is 1 - M",
             fit.loss.hallucination_target_is_tool),
      DS_KEY(bool, "loss.detach_hallucination_geometry",
             "hallucination loss moves only hallucination logits",
             fit.loss.detach_hallucination_geometry),
      DS_KEY(double, "loss.huber_delta_fraction", "Huber delta over frame-0 depth range",
             fit.huber_delta_fraction),
      DS_KEY(int, "init.stride", "pixel stride for initial points", fit.init.stride),
      DS_KEY(int, "init.sh_degree", "SH degree, 0..3", fit.init.sh_degree),
      DS_KEY(double, "init.scene_extent", "scene extent, <= 0 = from points",
             fit.init.scene_extent),
      DS_KEY(double, "init.initial_opacity", "initial opacity", fit.init.initial_opacity),
      DS_KEY(double, "init.observed_hallucination", "initial hallucination of seen points",
             fit.init.observed_hallucination),
      DS_KEY(double, "init.hallucinated_hallucination",
             "initial hallucination of points under the tool mask",
             fit.init.hallucinated_hallucination),
      DS_KEY(int, "init.scale_neighbors", "neighbors for the initial scale",
             fit.init.scale_neighbors),
      DS_KEY(bool, "init.inpaint_hole_colors", "diffuse tissue color into the mask hole",
             fit.init.inpaint_hole_colors),
      DS_KEY(bool, "init.include_filled_in_mask_hole",
             "spawn Gaussians from filled depth under the mask",
             fit.backproject.include_filled_in_mask_hole),
      DS_KEY(double, "raster.near_clip", "near clipping depth", fit.raster.near_clip),
      DS_KEY(double, "raster.dilation", "screen-space covariance dilation (px^2)",
             fit.raster.dilation),
      DS_KEY(double, "raster.alpha_max", "alpha clamp", fit.raster.alpha_max),
      DS_KEY(double, "raster.alpha_min", "skip contributions below this alpha",
             fit.raster.alpha_min),
      DS_KEY(int, "raster.tile_size", "tile size in pixels", fit.raster.tile_size),
      DS_KEY(Vec3, "raster.background", "background color", fit.raster.background),
      DS_KEY(double, "adam.beta1", "first-moment decay", fit.adam.beta1),
      DS_KEY(double, "adam.beta2", "second-moment decay", fit.adam.beta2),
      DS_KEY(double, "adam.epsilon", "denominator epsilon", fit.adam.epsilon),
      DS_KEY(int, "graph.k", "neighbors per Gaussian", fit.graph_k),
      DS_KEY(double, "graph.lambda", "neighbor weight exp(-lambda d^2)", fit.graph_lambda),
      DS_KEY(double, "camera.fx", "focal override, 0 = dataset", camera_fx),
      DS_KEY(double, "camera.fy", "focal override, 0 = dataset", camera_fy),
      DS_KEY(double, "camera.cx", "principal point override, 0 = dataset", camera_cx),
      DS_KEY(double, "camera.cy", "principal point override, 0 = dataset", camera_cy),
      DS_KEY(bool, "depth.fill_from_disparity", "fill missing depth from disparity",
             fill_depth_from_disparity),
      DS_KEY(bool, "export.ply", "write a PLY per frame", export_ply),
      DS_KEY(bool, "export.renders", "write color/depth/hallucination PNGs per frame",
             export_renders),
      DS_KEY(int, "log.every", "loss CSV row every N iterations", log_every),
  };
}

#undef DS_KEY

void flatten(const json &j, const std::string &prefix, std::vector<std::pair<std::string, json>> &out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object())
      flatten(*it, key, out);
    else
      out.emplace_back(key, *it);
  }
}

const ConfigKey *find_key(const std::string &name) {
  for (const auto &k : config_keys())
    if (k.name == name)
      return &k;
  return nullptr;
}

} // namespace

void RunConfig::validate() const {
  fit.validate();
  if (threads < 0)
    throw ConfigError("threads must be >= 0");
  if (log_every < 1)
    throw ConfigError("log.every must be >= 1");
  for (double v : {camera_fx, camera_fy, camera_cx, camera_cy})
    if (!(v >= 0.0))
      throw ConfigError("camera overrides must be >= 0");
  const RasterSettings &r = fit.raster;
  if (!(r.near_clip > 0.0) || !(r.dilation >= 0.0))
    throw ConfigError("raster.near_clip must be > 0 and raster.dilation >= 0");
  if (!(r.alpha_min > 0.0 && r.alpha_min < r.alpha_max && r.alpha_max < 1.0))
    throw ConfigError("need 0 < raster.alpha_min < raster.alpha_max < 1");
  if (r.tile_size < 1)
    throw ConfigError("raster.tile_size must be >= 1");
}

const std::vector<ConfigKey> &config_keys() {
  static const std::vector<ConfigKey> keys = make_keys();
  return keys;
}

void apply_config_json(RunConfig &config, const json &j) {
  if (!j.is_object())
    throw ConfigError("config must be a JSON object");
  std::vector<std::pair<std::string, json>> entries;
  flatten(j, "", entries);
  for (const auto &[name, value] : entries) {
    const ConfigKey *k = find_key(name);
    if (!k)
      throw ConfigError("unknown config key '" + name + "'");
    k->set(config, value);
  }
}

RunConfig load_run_config(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot read config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error &e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  RunConfig c;
  apply_config_json(c, j);
  return c;
}

json to_json(const RunConfig &config) {
  json out = json::object();
  for (const auto &k : config_keys())
    out[json::json_pointer("/" + [&] {
      std::string p = k.name;
      for (auto &ch : p)
        if (ch == '.')
          ch = '/';
      return p;
    }())] = k.get(config);
  return out;
}

void apply_config_flag(RunConfig &config, const ConfigKey &key, const std::string &value) {
  auto bad = [&]() {
    return ConfigError("--" + key.name + " expects " + key.type + ", got '" + value + "'");
  };
  json j;
  if (key.type == "string") {
    j = value;
  } else if (key.type == "bool") {
    if (value == "true" || value == "1")
      j = true;
    else if (value == "false" || value == "0")
      j = false;
    else
      throw bad();
  } else if (key.type == "r,g,b") {
    j = json::array();
    std::stringstream ss(value);
    for (std::string part; std::getline(ss, part, ',');) {
      double v = 0.0;
      const auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
      if (ec != std::errc() || p != part.data() + part.size())
        throw bad();
      j.push_back(v);
    }
  } else {
    try {
      j = json::parse(value);
    } catch (const json::parse_error &) {
      throw bad();
    }
    if (!j.is_number())
      throw bad();
  }
  key.set(config, j);
}

std::string config_help() {
  std::ostringstream out;
  out << "Config keys (JSON file via --config, nested or dotted; flags win):\n";
  for (const auto &k : config_keys())
    out << "  " << std::left << std::setw(38) << k.name << std::setw(7) << k.type << " "
        << k.doc << " [" << k.get(RunConfig{}).dump() << "]\n";
  return out.str();
}

} // namespace deformsplat
