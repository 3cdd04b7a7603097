#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deformsplat/core_model.hpp"

namespace deformsplat {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Image files

/// 8- or 16-bit PNG samples, unscaled.
struct PngData {
  Image<std::uint16_t> samples;
  int bit_depth = 8;
};

PngData read_png(const fs::path &path);
/// bit_depth 8 or 16; channels 1 (gray) or 3 (RGB).
void write_png(const fs::path &path, const Image<std::uint16_t> &samples, int bit_depth);

/// Color in [0, 1]; 8-bit output rounds and clamps.
void write_png_color(const fs::path &path, const ImageF &image);
ImageF read_png_color(const fs::path &path);

/// Single-channel float32 PFM, stored bottom row first.
void write_pfm(const fs::path &path, const ImageF &image);
ImageF read_pfm(const fs::path &path);

// ---------------------------------------------------------------------------
// Point clouds

/// Binary little-endian PLY with double properties: x y z, rot_0..3 (w x y z),
/// scale_0..2 (log), opacity (logit), f_dc_0..2, f_rest_* (channel-major),
/// halluc (logit). The frame time is kept in a header comment.
void export_ply(const GaussianCloud &cloud, const fs::path &path);
GaussianCloud load_ply(const fs::path &path);

// ---------------------------------------------------------------------------
// Datasets

struct FrameEntry {
  std::string color;
  std::string depth;
  std::string mask;
  std::optional<std::string> disparity;
  std::optional<std::string> gt_depth;
  std::optional<std::string> gt_occluded;
  double time = 0.0;

  bool operator==(const FrameEntry &) const = default;
};

struct DatasetManifest {
  fs::path root;
  Camera camera;
  double depth_scale = 1000.0;
  double disparity_scale = 256.0;
  /// Free-form provenance tag of the depth maps.
  std::string depth_source = "unknown";
  std::vector<FrameEntry> frames;

  bool has_ground_truth() const;
  bool operator==(const DatasetManifest &) const = default;
};

struct GroundTruth {
  ImageF depth;
  Mask occluded;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<FrameObservation> frames;
  /// Present for every frame or for none.
  std::vector<GroundTruth> ground_truth;
};

DatasetManifest read_manifest(const fs::path &root);
void write_manifest(const DatasetManifest &manifest, const fs::path &root);

/// Reads and validates every frame; fails before returning anything if a
/// file is missing, unreadable or mis-sized. Errors name the frame.
Dataset load_dataset(const fs::path &root);

/// Writes manifest, images and (when present) ground truth under root.
void write_dataset(const Dataset &dataset, const fs::path &root);

// ---------------------------------------------------------------------------
// Synthetic sequences

/// A sheet z = base_depth + amplitude sin(2 pi (kx X + ky Y + ft t)) seen by
/// an identity-pose camera, textured in (X, Y), with an optional vertical
/// occluder bar moving horizontally.
struct SyntheticScene {
  int width = 64;
  int height = 64;
  int frames = 10;
  double focal = 64.0;
  double base_depth = 2.0;
  double amplitude = 0.1;
  double kx = 1.0;
  double ky = 0.0;
  double temporal_frequency = 1.0;
  double frame_interval = 0.02;
  /// Sum of random sinusoids per channel; wavelengths in (X, Y) units.
  int texture_waves = 6;
  double texture_min_wavelength = 0.3;
  double texture_max_wavelength = 1.5;

  bool occluder = false;
  /// Left column of the bar at frame 0, width in pixels, columns per frame.
  double bar_x = 24.0;
  int bar_width = 10;
  double bar_velocity = 0.0;
  Vec3 bar_color{0.75, 0.75, 0.78};

  double color_noise = 0.0;
  double depth_noise = 0.0;

  bool disparity = true;
  double baseline = 0.05;
  double disparity_scale = 16384.0;
  double depth_scale = 1000.0;

  void validate() const;

  Camera camera() const;
  double time(int frame) const { return frame * frame_interval; }
  /// Surface depth at world (X, Y) and time t.
  double surface_z(double x, double y, double t) const;
};

struct SyntheticFrame {
  FrameObservation observation;
  GroundTruth truth;
};

/// Frames as they would be read back from disk (quantized depth and
/// disparity, 8-bit color).
std::vector<SyntheticFrame> synthesize(const SyntheticScene &scene, std::uint64_t seed);

/// Writes a dataset with ground-truth sidecar. Deterministic given seed.
DatasetManifest generate_synthetic(const SyntheticScene &scene, std::uint64_t seed,
                                   const fs::path &root);

} // namespace deformsplat
