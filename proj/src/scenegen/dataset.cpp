#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dgf/blockfile.hpp"
#include "dgf/errors.hpp"
#include "dgf/scenegen.hpp"

namespace dgf::scenegen {

namespace fs = std::filesystem;
using blockfile::Array;
using blockfile::Container;

namespace {

std::vector<std::uint8_t> u64_bytes(std::uint64_t v) {
  std::vector<std::uint8_t> out(8);
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
  return out;
}

std::uint64_t u64_from(const std::vector<std::uint8_t>& b) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
  return v;
}

}  // namespace

void save_sample(const MultimodalSample& s, const std::string& path) {
  const int h = s.panoptic.height, w = s.panoptic.width;
  Container c;
  c.height = static_cast<std::uint32_t>(h);
  c.width = static_cast<std::uint32_t>(w);
  c.arrays.push_back(Array::of_f64("rgb", {3, h, w}, s.rgb.data));
  c.arrays.push_back(Array::of_f64("lidar_depth", {h, w}, s.lidar_raw.depth));
  c.arrays.push_back(Array::of_u8("lidar_valid", {h, w}, s.lidar_raw.valid));
  c.arrays.push_back(Array::of_f64("lidar_input", {3, h, w}, s.lidar_input.data));
  c.arrays.push_back(Array::of_f64("radar_input", {3, h, w}, s.radar_input.data));
  c.arrays.push_back(Array::of_f64("event_input", {3, h, w}, s.event_input.data));
  c.arrays.push_back(Array::of_u8("pan_class", {h, w}, s.panoptic.class_id));
  c.arrays.push_back(Array::of_u16("pan_instance", {h, w}, s.panoptic.instance_id));
  c.arrays.push_back(Array::of_u8(
      "condition", {2},
      {static_cast<std::uint8_t>(s.condition.weather),
       static_cast<std::uint8_t>(s.condition.time)}));
  c.arrays.push_back(Array::of_f64("depth_true", {h, w}, s.depth_true.data));
  c.arrays.push_back(Array::of_u8("seed", {8}, u64_bytes(s.seed)));
  blockfile::write_file(path, c);
}

MultimodalSample load_sample(const std::string& path) {
  const Container c = blockfile::read_file(path);
  const int h = static_cast<int>(c.height), w = static_cast<int>(c.width);
  if (h <= 0 || w <= 0) throw IoError(path + ": sample has no image size");
  auto image = [&](const char* name) {
    const Array& a = c.require(name);
    if (a.dtype != blockfile::DType::f64 ||
        a.dims != std::vector<int>{3, h, w})
      throw IoError(path + ": array '" + std::string(name) + "' has wrong shape");
    return diffmath::Tensor::from({3, h, w}, a.f64);
  };
  auto plane = [&](const char* name) {
    const Array& a = c.require(name);
    if (a.dtype != blockfile::DType::f64 || a.dims != std::vector<int>{h, w})
      throw IoError(path + ": array '" + std::string(name) + "' has wrong shape");
    return a.f64;
  };

  MultimodalSample s;
  s.rgb = image("rgb");
  s.lidar_input = image("lidar_input");
  s.radar_input = image("radar_input");
  s.event_input = image("event_input");
  s.lidar_raw.height = h;
  s.lidar_raw.width = w;
  s.lidar_raw.depth = plane("lidar_depth");
  s.lidar_raw.valid = c.require("lidar_valid").u8;
  if (s.lidar_raw.valid.size() != static_cast<std::size_t>(h) * w)
    throw IoError(path + ": lidar_valid has wrong size");
  s.panoptic.height = h;
  s.panoptic.width = w;
  s.panoptic.class_id = c.require("pan_class").u8;
  s.panoptic.instance_id = c.require("pan_instance").u16;
  if (s.panoptic.class_id.size() != static_cast<std::size_t>(h) * w ||
      s.panoptic.instance_id.size() != static_cast<std::size_t>(h) * w)
    throw IoError(path + ": panoptic maps have wrong size");
  const Array& cond = c.require("condition");
  if (cond.u8.size() != 2 || cond.u8[0] > 3 || cond.u8[1] > 1)
    throw IoError(path + ": malformed condition block");
  s.condition.weather = static_cast<Weather>(cond.u8[0]);
  s.condition.time = static_cast<TimeOfDay>(cond.u8[1]);
  s.depth_true = diffmath::Tensor::from({h, w}, plane("depth_true"));
  const Array& seed = c.require("seed");
  if (seed.u8.size() != 8) throw IoError(path + ": malformed seed block");
  s.seed = u64_from(seed.u8);
  return s;
}

Manifest make_dataset(const SceneConfig& cfg, int n_train, int n_val, int n_test,
                      const std::string& root, bool force) {
  cfg.validate();
  if (n_train < 0 || n_val < 0 || n_test < 0 || n_train + n_val + n_test == 0)
    throw ContractViolation("dataset sizes must be >= 0 and not all zero");

  const fs::path rootp(root);
  if (fs::exists(rootp) && !fs::is_empty(rootp) && !force)
    throw ContractViolation("output directory '" + root +
                            "' is not empty; pass force to overwrite");
  fs::create_directories(rootp);

  Manifest m;
  m.height = cfg.height;
  m.width = cfg.width;
  m.classes = cfg.classes;
  m.d_min = cfg.d_min;
  m.d_max = cfg.d_max;

  struct Split {
    const char* name;
    int count;
    std::uint64_t seed_base;
  };
  const Split splits[3] = {{"train", n_train, cfg.seed},
                           {"val", n_val, cfg.seed + 1000000},
                           {"test", n_test, cfg.seed + 2000000}};
  for (const Split& sp : splits) {
    if (sp.count == 0) continue;
    fs::create_directories(rootp / sp.name);
    for (int i = 0; i < sp.count; ++i) {
      const std::uint64_t seed = sp.seed_base + static_cast<std::uint64_t>(i);
      const ConditionLabel cond = ConditionLabel::from_index(i % 8);
      const MultimodalSample sample = generate_scene(cfg, seed, cond);
      char name[64];
      std::snprintf(name, sizeof(name), "%s/sample_%05d.dgfs", sp.name, i);
      save_sample(sample, (rootp / name).string());
      m.entries.push_back(ManifestEntry{name, sp.name, cond, seed});
    }
  }

  nlohmann::json j;
  j["format"] = "dgf-dataset-v1";
  j["height"] = m.height;
  j["width"] = m.width;
  j["classes"] = m.classes;
  j["d_min"] = m.d_min;
  j["d_max"] = m.d_max;
  nlohmann::json samples = nlohmann::json::array();
  for (const ManifestEntry& e : m.entries) {
    nlohmann::json je;
    je["path"] = e.path;
    je["split"] = e.split;
    je["weather"] = weather_name(e.condition.weather);
    je["time"] = time_name(e.condition.time);
    je["seed"] = e.seed;
    samples.push_back(je);
  }
  j["samples"] = samples;
  std::ofstream f(rootp / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write manifest under '" + root + "'");
  f << j.dump(2) << "\n";
  if (!f) throw IoError("manifest write failed under '" + root + "'");
  return m;
}

Manifest load_manifest(const std::string& root) {
  const fs::path p = fs::path(root) / "manifest.json";
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open '" + p.string() + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw IoError(p.string() + ": " + e.what());
  }
  if (j.value("format", "") != std::string("dgf-dataset-v1"))
    throw IoError(p.string() + ": unknown manifest format");
  Manifest m;
  m.height = j.at("height").get<int>();
  m.width = j.at("width").get<int>();
  m.classes = j.at("classes").get<int>();
  m.d_min = j.at("d_min").get<double>();
  m.d_max = j.at("d_max").get<double>();
  for (const nlohmann::json& je : j.at("samples")) {
    ManifestEntry e;
    e.path = je.at("path").get<std::string>();
    e.split = je.at("split").get<std::string>();
    e.condition.weather = weather_from_name(je.at("weather").get<std::string>());
    e.condition.time = time_from_name(je.at("time").get<std::string>());
    e.seed = je.at("seed").get<std::uint64_t>();
    m.entries.push_back(e);
  }
  return m;
}

}  // namespace dgf::scenegen
