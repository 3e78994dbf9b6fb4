#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <doctest.h>

#include "dgf/blockfile.hpp"
#include "dgf/errors.hpp"
#include "dgf/scenegen.hpp"

using namespace dgf;
using namespace dgf::scenegen;
namespace fs = std::filesystem;

namespace {

SceneConfig small_cfg() {
  SceneConfig cfg;
  cfg.height = 64;
  cfg.width = 64;
  return cfg;
}

bool same_tensor(const diffmath::Tensor& a, const diffmath::Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.data.data(), b.data.data(),
                     a.data.size() * sizeof(double)) == 0;
}

bool same_sample(const MultimodalSample& a, const MultimodalSample& b) {
  return same_tensor(a.rgb, b.rgb) && same_tensor(a.lidar_input, b.lidar_input) &&
         same_tensor(a.radar_input, b.radar_input) &&
         same_tensor(a.event_input, b.event_input) &&
         same_tensor(a.depth_true, b.depth_true) &&
         a.lidar_raw.depth == b.lidar_raw.depth &&
         a.lidar_raw.valid == b.lidar_raw.valid &&
         a.panoptic.class_id == b.panoptic.class_id &&
         a.panoptic.instance_id == b.panoptic.instance_id &&
         a.condition.weather == b.condition.weather &&
         a.condition.time == b.condition.time && a.seed == b.seed;
}

fs::path temp_dir(const char* tag) {
  fs::path p = fs::temp_directory_path() / (std::string("dgf_test_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// direct per-pixel window max, the reference implementation
diffmath::Tensor dilate_bruteforce(const diffmath::Tensor& img, int k) {
  const int c = img.shape[0], h = img.shape[1], w = img.shape[2];
  const int r = k / 2;
  diffmath::Tensor out = diffmath::Tensor::zeros(img.shape);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double m = img.data[(static_cast<std::size_t>(ch) * h + y) * w + x];
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            m = std::max(m, img.data[(static_cast<std::size_t>(ch) * h + yy) * w + xx]);
          }
        out.data[(static_cast<std::size_t>(ch) * h + y) * w + x] = m;
      }
  return out;
}

}  // namespace

TEST_SUITE("scenegen") {

TEST_CASE("same config and seed produce bit-identical samples") {
  const SceneConfig cfg = small_cfg();
  for (std::uint64_t seed : {1ULL, 77ULL, 123456ULL}) {
    const MultimodalSample a = generate_scene(cfg, seed);
    const MultimodalSample b = generate_scene(cfg, seed);
    CHECK(same_sample(a, b));
  }
}

TEST_CASE("geometry is shared across conditions for one seed") {
  const SceneConfig cfg = small_cfg();
  const MultimodalSample a =
      generate_scene(cfg, 9, ConditionLabel{Weather::clear, TimeOfDay::day});
  const MultimodalSample b =
      generate_scene(cfg, 9, ConditionLabel{Weather::fog, TimeOfDay::night});
  CHECK(a.panoptic.class_id == b.panoptic.class_id);
  CHECK(a.panoptic.instance_id == b.panoptic.instance_id);
  CHECK(same_tensor(a.depth_true, b.depth_true));
  CHECK(same_tensor(a.radar_input, b.radar_input));
}

TEST_CASE("sample invariants hold across seeds and conditions") {
  const SceneConfig cfg = small_cfg();
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    const MultimodalSample s = generate_scene(cfg, seed);
    const std::size_t n = static_cast<std::size_t>(cfg.height) * cfg.width;

    for (double v : s.rgb.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    const double vf = s.lidar_raw.valid_fraction();
    CHECK(vf > 0.0);
    CHECK(vf <= 0.5);
    for (std::size_t i = 0; i < n; ++i) {
      if (s.lidar_raw.valid[i]) {
        CHECK(s.lidar_raw.depth[i] >= cfg.d_min);
        CHECK(s.lidar_raw.depth[i] <= cfg.d_max);
      }
      // void must be marked jointly in both maps
      CHECK((s.panoptic.class_id[i] == kVoidClass) ==
            (s.panoptic.instance_id[i] == kVoidInstance));
      if (s.panoptic.class_id[i] != kVoidClass) {
        CHECK(s.panoptic.class_id[i] < cfg.classes);
        CHECK(s.depth_true.data[i] <= cfg.d_max);
        CHECK(s.depth_true.data[i] >= cfg.d_min);
      }
    }
  }
}

TEST_CASE("within one instance the true depth stays under the jitter bound") {
  const SceneConfig cfg = small_cfg();
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const MultimodalSample s = generate_scene(cfg, seed);
    std::map<std::pair<int, int>, std::pair<double, double>> spread;
    const std::size_t n = s.depth_true.numel();
    for (std::size_t i = 0; i < n; ++i) {
      const int c = s.panoptic.class_id[i];
      if (c < 2 || c == kVoidClass) continue;  // objects only
      const auto key = std::make_pair(c, static_cast<int>(s.panoptic.instance_id[i]));
      const double d = s.depth_true.data[i];
      auto it = spread.find(key);
      if (it == spread.end())
        spread[key] = {d, d};
      else {
        it->second.first = std::min(it->second.first, d);
        it->second.second = std::max(it->second.second, d);
      }
    }
    CHECK(!spread.empty());
    for (const auto& [key, mm] : spread)
      CHECK(mm.second - mm.first < cfg.object_depth_jitter);
  }
}

TEST_CASE("clear lidar keeps more returns than fog, 100 paired seeds") {
  const SceneConfig cfg = small_cfg();
  const int n = 100;
  // paired over seeds: identical geometry, only the dropout curve changes
  std::vector<double> diff(n);
  double mean = 0.0;
  for (int i = 0; i < n; ++i) {
    const std::uint64_t seed = 1000 + static_cast<std::uint64_t>(i);
    const double clear =
        generate_scene(cfg, seed, ConditionLabel{Weather::clear, TimeOfDay::day})
            .lidar_raw.valid_fraction();
    const double fog =
        generate_scene(cfg, seed, ConditionLabel{Weather::fog, TimeOfDay::day})
            .lidar_raw.valid_fraction();
    diff[i] = clear - fog;
    mean += diff[i];
  }
  mean /= n;
  double var = 0.0;
  for (double d : diff) var += (d - mean) * (d - mean);
  var /= (n - 1);
  const double se = std::sqrt(var / n);
  CHECK(mean > 3.0 * se);
}

TEST_CASE("degradation parameter table orders conditions as intended") {
  const SceneConfig cfg;
  CHECK(cfg.lidar_dropout_beta[static_cast<int>(Weather::fog)] >
        cfg.lidar_dropout_beta[static_cast<int>(Weather::clear)]);
  CHECK(cfg.lidar_noise_sigma[static_cast<int>(Weather::snow)] >
        cfg.lidar_noise_sigma[static_cast<int>(Weather::clear)]);
}

TEST_CASE("dilation: K=1 is the identity") {
  const SceneConfig cfg = small_cfg();
  const MultimodalSample s = generate_scene(cfg, 5);
  std::vector<double> inten(s.lidar_raw.depth.size(), 0.5);
  const auto img = point_image(s.lidar_raw, inten, cfg.d_max);
  CHECK(same_tensor(project_and_dilate(img, 1), img));
}

TEST_CASE("dilation: single valid pixel becomes exactly a 3x3 block") {
  SparseDepthMap m;
  m.height = 12;
  m.width = 12;
  m.depth.assign(144, 0.0);
  m.valid.assign(144, 0);
  m.depth[5 * 12 + 5] = 10.0;
  m.valid[5 * 12 + 5] = 1;
  std::vector<double> inten(144, 0.0);
  inten[5 * 12 + 5] = 0.7;
  const auto out = project_and_dilate(point_image(m, inten, 20.0), 3);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 12; ++x) {
      const bool inside = std::abs(y - 5) <= 1 && std::abs(x - 5) <= 1;
      CHECK(out.data[2 * 144 + y * 12 + x] == (inside ? 1.0 : 0.0));
      CHECK(out.data[y * 12 + x] == (inside ? 0.5 : 0.0));
      CHECK(out.data[144 + y * 12 + x] == (inside ? 0.7 : 0.0));
    }
}

TEST_CASE("dilation: overlapping regions take the elementwise max") {
  SparseDepthMap m;
  m.height = 8;
  m.width = 8;
  m.depth.assign(64, 0.0);
  m.valid.assign(64, 0);
  m.depth[3 * 8 + 3] = 5.0;   // range channel 0.75
  m.valid[3 * 8 + 3] = 1;
  m.depth[3 * 8 + 5] = 15.0;  // range channel 0.25
  m.valid[3 * 8 + 5] = 1;
  std::vector<double> inten(64, 0.0);
  inten[3 * 8 + 3] = 0.2;
  inten[3 * 8 + 5] = 0.9;
  const auto img = point_image(m, inten, 20.0);
  const auto out = project_and_dilate(img, 3);
  CHECK(same_tensor(out, dilate_bruteforce(img, 3)));
  // the column between the two points sees both; each channel takes its max
  CHECK(out.data[3 * 8 + 4] == 0.75);
  CHECK(out.data[64 + 3 * 8 + 4] == 0.9);
  CHECK(out.data[2 * 64 + 3 * 8 + 4] == 1.0);
}

TEST_CASE("dilation matches brute force on generated scenes") {
  const SceneConfig cfg = small_cfg();
  const MultimodalSample s = generate_scene(cfg, 31);
  std::vector<double> inten(s.lidar_raw.depth.size(), 0.4);
  const auto img = point_image(s.lidar_raw, inten, cfg.d_max);
  for (int k : {3, 5, 9})
    CHECK(same_tensor(project_and_dilate(img, k), dilate_bruteforce(img, k)));
}

TEST_CASE("dilation valid set grows monotonically in K") {
  const SceneConfig cfg = small_cfg();
  for (std::uint64_t seed = 3; seed <= 6; ++seed) {
    const MultimodalSample s = generate_scene(cfg, seed);
    std::vector<double> inten(s.lidar_raw.depth.size(), 0.4);
    const auto img = point_image(s.lidar_raw, inten, cfg.d_max);
    const std::size_t plane = s.lidar_raw.depth.size();
    auto a = project_and_dilate(img, 3);
    for (int k : {5, 7}) {
      auto b = project_and_dilate(img, k);
      for (std::size_t i = 0; i < plane; ++i)
        if (a.data[2 * plane + i] == 1.0) CHECK(b.data[2 * plane + i] == 1.0);
      a = std::move(b);
    }
  }
}

TEST_CASE("even dilation kernel is rejected") {
  diffmath::Tensor img = diffmath::Tensor::zeros({3, 4, 4});
  CHECK_THROWS_AS(project_and_dilate(img, 2), ContractViolation);
  CHECK_THROWS_AS(project_and_dilate(img, 0), ContractViolation);
}

TEST_CASE("save then load round-trips bit-exactly") {
  const SceneConfig cfg = small_cfg();
  const MultimodalSample s = generate_scene(cfg, 42);
  const fs::path dir = temp_dir("roundtrip");
  const std::string path = (dir / "s.dgfs").string();
  save_sample(s, path);
  const MultimodalSample t = load_sample(path);
  CHECK(same_sample(s, t));
  fs::remove_all(dir);
}

TEST_CASE("corrupted magic bytes fail to load") {
  const SceneConfig cfg = small_cfg();
  const fs::path dir = temp_dir("badmagic");
  const std::string path = (dir / "s.dgfs").string();
  save_sample(generate_scene(cfg, 1), path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.put('X');
  }
  CHECK_THROWS_AS(load_sample(path), IoError);
  fs::remove_all(dir);
}

TEST_CASE("flipped payload byte fails the checksum") {
  const SceneConfig cfg = small_cfg();
  const fs::path dir = temp_dir("badcrc");
  const std::string path = (dir / "s.dgfs").string();
  save_sample(generate_scene(cfg, 1), path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(64);
    f.put('\x5a');
  }
  CHECK_THROWS_AS(load_sample(path), IoError);
  fs::remove_all(dir);
}

TEST_CASE("empty and truncated files fail to load") {
  const fs::path dir = temp_dir("empty");
  const std::string empty = (dir / "empty.dgfs").string();
  { std::ofstream f(empty, std::ios::binary); }
  CHECK_THROWS_AS(load_sample(empty), IoError);

  const std::string trunc = (dir / "trunc.dgfs").string();
  save_sample(generate_scene(small_cfg(), 2), trunc);
  const auto size = fs::file_size(trunc);
  fs::resize_file(trunc, size / 2);
  CHECK_THROWS_AS(load_sample(trunc), IoError);
  fs::remove_all(dir);
}

TEST_CASE("make_dataset writes the manifest it promises") {
  SceneConfig cfg = small_cfg();
  cfg.min_objects = 2;
  cfg.max_objects = 4;
  const fs::path dir = temp_dir("dataset");
  const Manifest m = make_dataset(cfg, 8, 3, 2, dir.string(), false);
  CHECK(m.entries.size() == 13);

  const Manifest r = load_manifest(dir.string());
  CHECK(r.entries.size() == 13);
  CHECK(r.height == cfg.height);
  CHECK(r.classes == cfg.classes);

  int train = 0;
  std::array<int, 8> per_condition{};
  std::set<std::uint64_t> seeds;
  for (const ManifestEntry& e : r.entries) {
    if (e.split == "train") {
      ++train;
      ++per_condition[static_cast<std::size_t>(e.condition.index())];
    }
    seeds.insert(e.seed);
    CHECK(fs::exists(dir / e.path));
  }
  CHECK(train == 8);
  CHECK(seeds.size() == 13);  // splits use disjoint seeds
  for (int c = 0; c < 8; ++c) CHECK(per_condition[static_cast<std::size_t>(c)] == 1);

  // stored file must reproduce from its recorded seed and condition
  const ManifestEntry& e0 = r.entries.front();
  const MultimodalSample demand = generate_scene(cfg, e0.seed, e0.condition);
  const MultimodalSample stored = load_sample((dir / e0.path).string());
  CHECK(same_sample(demand, stored));

  CHECK_THROWS_AS(make_dataset(cfg, 1, 0, 0, dir.string(), false),
                  ContractViolation);

  // force regeneration, manifest bytes must not change
  std::ifstream m1((dir / "manifest.json").string(), std::ios::binary);
  const std::string bytes1((std::istreambuf_iterator<char>(m1)),
                           std::istreambuf_iterator<char>());
  make_dataset(cfg, 8, 3, 2, dir.string(), true);
  std::ifstream m2((dir / "manifest.json").string(), std::ios::binary);
  const std::string bytes2((std::istreambuf_iterator<char>(m2)),
                           std::istreambuf_iterator<char>());
  CHECK(bytes1 == bytes2);
  fs::remove_all(dir);
}

TEST_CASE("config validation rejects bad values") {
  SceneConfig cfg = small_cfg();
  cfg.height = 60;  // not a multiple of 32
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
  cfg = small_cfg();
  cfg.d_min = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
  cfg = small_cfg();
  cfg.lidar_kernel = 4;
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
  cfg = small_cfg();
  cfg.classes = 2;
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
}

TEST_CASE("config file parsing honors keys and rejects unknown ones") {
  const SceneConfig c = SceneConfig::from_keyval(KeyVal::parse(
      "height = 96\nwidth = 64\nclasses = 7\n# comment\nseed = 9\n"
      "lidar_dropout_beta_fog = 0.55\n",
      "test"));
  CHECK(c.height == 96);
  CHECK(c.width == 64);
  CHECK(c.classes == 7);
  CHECK(c.seed == 9);
  CHECK(c.lidar_dropout_beta[static_cast<int>(Weather::fog)] == 0.55);
  CHECK_THROWS_AS(
      SceneConfig::from_keyval(KeyVal::parse("heigth = 96\n", "test")),
      ContractViolation);
}

TEST_CASE("condition index is weather-major") {
  CHECK(ConditionLabel{Weather::clear, TimeOfDay::day}.index() == 0);
  CHECK(ConditionLabel{Weather::clear, TimeOfDay::night}.index() == 1);
  CHECK(ConditionLabel{Weather::snow, TimeOfDay::night}.index() == 7);
  for (int i = 0; i < 8; ++i) CHECK(ConditionLabel::from_index(i).index() == i);
  CHECK_THROWS_AS(ConditionLabel::from_index(8), ContractViolation);
}

}  // TEST_SUITE
