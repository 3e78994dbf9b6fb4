#pragma once

// Deterministic synthetic multimodal scenes: layered primitives over a ground
// plane, condition-dependent RGB, scanline lidar with range-dependent dropout,
// radar blobs, an edge-based event proxy, and panoptic labels. Everything is a
// pure function of (config, seed), so regeneration is bit-identical.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dgf/diffmath.hpp"
#include "dgf/keyval.hpp"

namespace dgf::scenegen {

using diffmath::Tensor;

enum class Weather : int { clear = 0, fog = 1, rain = 2, snow = 3 };
enum class TimeOfDay : int { day = 0, night = 1 };

const char* weather_name(Weather w);
const char* time_name(TimeOfDay t);
Weather weather_from_name(const std::string& s);
TimeOfDay time_from_name(const std::string& s);

struct ConditionLabel {
  Weather weather = Weather::clear;
  TimeOfDay time = TimeOfDay::day;

  // Dense index over the 8 combinations, weather-major.
  int index() const { return static_cast<int>(weather) * 2 + static_cast<int>(time); }
  static ConditionLabel from_index(int idx);
};

inline constexpr std::uint8_t kVoidClass = 255;
inline constexpr std::uint16_t kVoidInstance = 0;

// class_id 255 and instance_id 0 jointly mark unlabeled pixels.
struct PanopticMap {
  int height = 0, width = 0;
  std::vector<std::uint8_t> class_id;
  std::vector<std::uint16_t> instance_id;
};

struct SparseDepthMap {
  int height = 0, width = 0;
  std::vector<double> depth;        // meters where valid, 0 elsewhere
  std::vector<std::uint8_t> valid;  // 0/1

  double valid_fraction() const;
};

struct SceneConfig {
  int height = 64;
  int width = 64;
  int classes = 8;  // 0 sky, 1 ground, 2.. object classes
  int min_objects = 4;
  int max_objects = 9;
  double d_min = 2.0;
  double d_max = 80.0;
  double object_depth_jitter = 0.5;  // strict bound on within-instance spread, m
  int max_void_blobs = 2;

  double night_brightness = 0.35;
  double fog_decay = 25.0;       // fog wash length scale, m
  double event_threshold = 0.05; // gradient magnitude that triggers an event

  int lidar_kernel = 5;
  int event_kernel = 3;
  int radar_kernel = 9;
  int lidar_row_step = 3;
  int lidar_col_step = 2;

  // Indexed by Weather: clear, fog, rain, snow.
  std::array<double, 4> lidar_dropout_beta{0.1, 0.6, 0.3, 0.5};
  std::array<double, 4> lidar_noise_sigma{0.01, 0.12, 0.04, 0.16};
  std::array<double, 4> lidar_scatter_prob{0.0, 0.15, 0.03, 0.12};

  std::uint64_t seed = 1;

  void validate() const;  // throws ContractViolation

  // Reads the keys above from a parsed key=value file; rejects unknown keys.
  static SceneConfig from_keyval(KeyVal kv);
};

struct MultimodalSample {
  Tensor rgb;          // [3,H,W] in [0,1]
  SparseDepthMap lidar_raw;
  Tensor lidar_input;  // [3,H,W] dilated point image
  Tensor radar_input;  // [3,H,W]
  Tensor event_input;  // [3,H,W]
  PanopticMap panoptic;
  ConditionLabel condition;
  Tensor depth_true;   // [H,W] clean scene depth, d_max where no surface
  std::uint64_t seed = 0;
};

// Geometry, labels, and radar depend only on (cfg, seed); the condition alters
// RGB appearance and lidar degradation on top of the same underlying scene.
MultimodalSample generate_scene(const SceneConfig& cfg, std::uint64_t seed,
                                ConditionLabel condition);
// Convenience overload: condition drawn uniformly from a seed-derived stream.
MultimodalSample generate_scene(const SceneConfig& cfg, std::uint64_t seed);

// 3-channel point image (normalized range 1-d/d_max, intensity, validity);
// pixels with valid=0 are all-zero.
Tensor point_image(const SparseDepthMap& sparse, const std::vector<double>& intensity,
                   double d_max);

// Per-channel morphological max-dilation with a K x K square element. All
// channels are >= 0 with invalid pixels at exactly 0, so valid pixels win.
Tensor project_and_dilate(const Tensor& points, int k_sensor);

void save_sample(const MultimodalSample& sample, const std::string& path);
MultimodalSample load_sample(const std::string& path);

struct ManifestEntry {
  std::string path;  // relative to the dataset root
  std::string split; // train / val / test
  ConditionLabel condition;
  std::uint64_t seed = 0;
};

struct Manifest {
  int height = 0, width = 0, classes = 0;
  double d_min = 0, d_max = 0;
  std::vector<ManifestEntry> entries;
};

// Writes samples under root/{train,val,test}/ plus root/manifest.json.
// Split seeds are disjoint (base, base+1e6, base+2e6 offsets); conditions
// cycle round-robin through the 8 combinations within each split.
Manifest make_dataset(const SceneConfig& cfg, int n_train, int n_val, int n_test,
                      const std::string& root, bool force);

Manifest load_manifest(const std::string& root);

}  // namespace dgf::scenegen
