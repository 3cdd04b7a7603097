#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "deformsplat/data_io.hpp"
#include "deformsplat/parallel.hpp"

namespace deformsplat {

using json = nlohmann::json;

namespace {

std::string numbered(const char *dir, int index, const char *ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%06d.%s", dir, index, ext);
  return buf;
}

template <typename T> T required(const json &j, const char *key, const std::string &where) {
  if (!j.contains(key))
    throw LoadError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception &e) {
    throw LoadError(where + ": bad value for '" + key + "': " + e.what());
  }
}

std::optional<std::string> optional_string(const json &j, const char *key) {
  if (j.contains(key) && !j.at(key).is_null())
    return j.at(key).get<std::string>();
  return std::nullopt;
}

Image<std::uint16_t> quantize(const ImageF &img, double scale, const std::string &what) {
  Image<std::uint16_t> q(img.width(), img.height(), img.channels());
  for (std::size_t i = 0; i < q.data().size(); ++i) {
    const double v = std::round(img.data()[i] * scale);
    if (!(v >= 0.0 && v <= 65535.0))
      throw IoError(what + ": value out of 16-bit range");
    q.data()[i] = static_cast<std::uint16_t>(v);
  }
  return q;
}

ImageF read_scaled(const fs::path &path, double scale) {
  const PngData png = read_png(path);
  if (png.samples.channels() != 1)
    throw LoadError(path.string() + ": expected a single-channel image");
  ImageF out(png.samples.width(), png.samples.height());
  for (std::size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = png.samples.data()[i] / scale;
  return out;
}

} // namespace

bool DatasetManifest::has_ground_truth() const {
  if (frames.empty())
    return false;
  for (const auto &f : frames)
    if (!f.gt_depth || !f.gt_occluded)
      return false;
  return true;
}

DatasetManifest read_manifest(const fs::path &root) {
  const fs::path file = root / "manifest.json";
  std::ifstream in(file);
  if (!in)
    throw LoadError("cannot open " + file.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception &e) {
    throw LoadError(file.string() + ": " + e.what());
  }
  const std::string where = file.string();
  DatasetManifest m;
  m.root = root;
  m.camera.width = required<int>(j, "width", where);
  m.camera.height = required<int>(j, "height", where);
  const json intr = required<json>(j, "intrinsics", where);
  m.camera.fx = required<double>(intr, "fx", where);
  m.camera.fy = required<double>(intr, "fy", where);
  m.camera.cx = required<double>(intr, "cx", where);
  m.camera.cy = required<double>(intr, "cy", where);
  const auto ext = required<std::vector<double>>(j, "extrinsics", where);
  if (ext.size() != 16)
    throw LoadError(where + ": extrinsics must hold 16 row-major values");
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      m.camera.world_to_camera(r, c) = ext[4 * r + c];
  m.depth_scale = required<double>(j, "depth_scale", where);
  m.disparity_scale = j.value("disparity_scale", m.disparity_scale);
  m.depth_source = j.value("depth_source", m.depth_source);
  if (!(m.depth_scale > 0.0) || !(m.disparity_scale > 0.0))
    throw LoadError(where + ": depth_scale and disparity_scale must be positive");
  try {
    m.camera.validate();
  } catch (const Error &e) {
    throw LoadError(where + ": " + e.what());
  }
  const json frames = required<json>(j, "frames", where);
  if (!frames.is_array() || frames.empty())
    throw LoadError(where + ": frames must be a non-empty array");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const json &f = frames[i];
    const std::string fw = where + " frame " + std::to_string(i);
    FrameEntry e;
    e.color = required<std::string>(f, "color", fw);
    e.depth = required<std::string>(f, "depth", fw);
    e.mask = required<std::string>(f, "mask", fw);
    e.disparity = optional_string(f, "disparity");
    e.gt_depth = optional_string(f, "gt_depth");
    e.gt_occluded = optional_string(f, "gt_occluded");
    e.time = required<double>(f, "time", fw);
    m.frames.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const DatasetManifest &m, const fs::path &root) {
  json j;
  j["width"] = m.camera.width;
  j["height"] = m.camera.height;
  j["intrinsics"] = {{"fx", m.camera.fx}, {"fy", m.camera.fy}, {"cx", m.camera.cx},
                     {"cy", m.camera.cy}};
  std::vector<double> ext;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      ext.push_back(m.camera.world_to_camera(r, c));
  j["extrinsics"] = ext;
  j["depth_scale"] = m.depth_scale;
  j["disparity_scale"] = m.disparity_scale;
  j["depth_source"] = m.depth_source;
  j["frames"] = json::array();
  for (const auto &f : m.frames) {
    json e = {{"color", f.color}, {"depth", f.depth}, {"mask", f.mask}, {"time", f.time}};
    if (f.disparity)
      e["disparity"] = *f.disparity;
    if (f.gt_depth)
      e["gt_depth"] = *f.gt_depth;
    if (f.gt_occluded)
      e["gt_occluded"] = *f.gt_occluded;
    j["frames"].push_back(std::move(e));
  }
  fs::create_directories(root);
  std::ofstream out(root / "manifest.json");
  out << j.dump(2) << "\n";
  if (!out)
    throw IoError("cannot write " + (root / "manifest.json").string());
}

Dataset load_dataset(const fs::path &root) {
  Dataset ds;
  ds.manifest = read_manifest(root);
  const DatasetManifest &m = ds.manifest;
  const bool gt = m.has_ground_truth();

  // Check every referenced file before decoding anything.
  for (std::size_t i = 0; i < m.frames.size(); ++i) {
    const FrameEntry &e = m.frames[i];
    std::vector<std::string> files = {e.color, e.depth, e.mask};
    for (const auto &o : {e.disparity, e.gt_depth, e.gt_occluded})
      if (o)
        files.push_back(*o);
    for (const auto &f : files)
      if (!fs::is_regular_file(root / f))
        throw LoadError("frame " + std::to_string(i) + ": missing file " + (root / f).string());
  }

  const std::size_t n = m.frames.size();
  ds.frames.resize(n);
  if (gt)
    ds.ground_truth.resize(n);
  const int w = m.camera.width, h = m.camera.height;
  parallel_for(n, [&](std::size_t i) {
    const FrameEntry &e = m.frames[i];
    const std::string where = "frame " + std::to_string(i);
    try {
      auto check = [&](const auto &img, const std::string &name) {
        if (!img.same_shape(w, h))
          throw LoadError(where + ": " + name + " is " + std::to_string(img.width()) + "x" +
                          std::to_string(img.height()) + ", expected " + std::to_string(w) + "x" +
                          std::to_string(h));
      };
      ImageF color = read_png_color(root / e.color);
      check(color, e.color);
      if (color.channels() != 3)
        throw LoadError(where + ": " + e.color + " is not RGB");
      ImageF depth = read_scaled(root / e.depth, m.depth_scale);
      check(depth, e.depth);
      const PngData mask_png = read_png(root / e.mask);
      check(mask_png.samples, e.mask);
      const double threshold = mask_png.bit_depth == 16 ? 32768.0 : 128.0;
      Mask mask(w, h);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          mask(x, y) = mask_png.samples(x, y, 0) >= threshold;
      FrameObservation f =
          FrameObservation::from_rgbd(std::move(color), std::move(depth), std::move(mask), e.time);
      if (e.disparity) {
        ImageF disp = read_scaled(root / *e.disparity, m.disparity_scale);
        check(disp, *e.disparity);
        f.disparity = std::move(disp);
      }
      f.validate();
      ds.frames[i] = std::move(f);
      if (gt) {
        GroundTruth t;
        t.depth = read_pfm(root / *e.gt_depth);
        check(t.depth, *e.gt_depth);
        const PngData occ = read_png(root / *e.gt_occluded);
        check(occ.samples, *e.gt_occluded);
        t.occluded = Mask(w, h);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            t.occluded(x, y) = occ.samples(x, y, 0) >= 128;
        ds.ground_truth[i] = std::move(t);
      }
    } catch (const LoadError &) {
      throw;
    } catch (const Error &err) {
      throw LoadError(where + ": " + err.what());
    }
  });
  return ds;
}

void write_dataset(const Dataset &ds, const fs::path &root) {
  DatasetManifest m = ds.manifest;
  if (m.frames.size() != ds.frames.size())
    m.frames.resize(ds.frames.size());
  const bool gt = !ds.ground_truth.empty();
  if (gt && ds.ground_truth.size() != ds.frames.size())
    throw ContractError("write_dataset: ground truth must cover every frame");
  for (const char *dir : {"color", "depth", "mask", "disparity", "gt"})
    fs::create_directories(root / dir);
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    const int idx = static_cast<int>(i);
    const FrameObservation &f = ds.frames[i];
    FrameEntry &e = m.frames[i];
    e.color = numbered("color/", idx, "png");
    e.depth = numbered("depth/", idx, "png");
    e.mask = numbered("mask/", idx, "png");
    e.time = f.time;
    write_png_color(root / e.color, f.image);
    write_png(root / e.depth, quantize(f.depth, m.depth_scale, e.depth), 16);
    Image<std::uint16_t> mask(f.width(), f.height());
    for (std::size_t k = 0; k < mask.data().size(); ++k)
      mask.data()[k] = f.tool_mask.data()[k] ? 255 : 0;
    write_png(root / e.mask, mask, 8);
    e.disparity.reset();
    if (f.disparity) {
      e.disparity = numbered("disparity/", idx, "png");
      write_png(root / *e.disparity, quantize(*f.disparity, m.disparity_scale, *e.disparity), 16);
    }
    e.gt_depth.reset();
    e.gt_occluded.reset();
    if (gt) {
      e.gt_depth = numbered("gt/depth_", idx, "pfm");
      e.gt_occluded = numbered("gt/occluded_", idx, "png");
      write_pfm(root / *e.gt_depth, ds.ground_truth[i].depth);
      Image<std::uint16_t> occ(f.width(), f.height());
      for (std::size_t k = 0; k < occ.data().size(); ++k)
        occ.data()[k] = ds.ground_truth[i].occluded.data()[k] ? 255 : 0;
      write_png(root / *e.gt_occluded, occ, 8);
    }
  }
  write_manifest(m, root);
}

DatasetManifest generate_synthetic(const SyntheticScene &scene, std::uint64_t seed,
                                   const fs::path &root) {
  Dataset ds;
  ds.manifest.root = root;
  ds.manifest.camera = scene.camera();
  ds.manifest.depth_scale = scene.depth_scale;
  ds.manifest.disparity_scale = scene.disparity_scale;
  ds.manifest.depth_source = "synthetic";
  for (auto &f : synthesize(scene, seed)) {
    ds.frames.push_back(std::move(f.observation));
    ds.ground_truth.push_back(std::move(f.truth));
  }
  write_dataset(ds, root);
  return read_manifest(root);
}

} // namespace deformsplat
