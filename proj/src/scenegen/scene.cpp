#include <algorithm>
#include <cmath>

#include "dgf/errors.hpp"
#include "dgf/rng.hpp"
#include "dgf/scenegen.hpp"

namespace dgf::scenegen {

const char* weather_name(Weather w) {
  switch (w) {
    case Weather::clear: return "clear";
    case Weather::fog: return "fog";
    case Weather::rain: return "rain";
    case Weather::snow: return "snow";
  }
  throw ContractViolation("bad weather value");
}

const char* time_name(TimeOfDay t) {
  return t == TimeOfDay::day ? "day" : "night";
}

Weather weather_from_name(const std::string& s) {
  for (int i = 0; i < 4; ++i)
    if (s == weather_name(static_cast<Weather>(i))) return static_cast<Weather>(i);
  throw ContractViolation("unknown weather '" + s + "'");
}

TimeOfDay time_from_name(const std::string& s) {
  if (s == "day") return TimeOfDay::day;
  if (s == "night") return TimeOfDay::night;
  throw ContractViolation("unknown time of day '" + s + "'");
}

ConditionLabel ConditionLabel::from_index(int idx) {
  if (idx < 0 || idx >= 8)
    throw ContractViolation("condition index out of range: " + std::to_string(idx));
  return ConditionLabel{static_cast<Weather>(idx / 2), static_cast<TimeOfDay>(idx % 2)};
}

double SparseDepthMap::valid_fraction() const {
  if (valid.empty()) return 0.0;
  std::size_t n = 0;
  for (std::uint8_t v : valid) n += v != 0;
  return static_cast<double>(n) / static_cast<double>(valid.size());
}

void SceneConfig::validate() const {
  if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0)
    throw ContractViolation("scene H and W must be positive multiples of 32");
  if (classes < 3 || classes > 200)
    throw ContractViolation("classes must be in [3, 200] (sky, ground, objects)");
  if (min_objects < 1 || max_objects < min_objects)
    throw ContractViolation("need 1 <= min_objects <= max_objects");
  if (!(d_min > 0.0) || !(d_max > d_min))
    throw ContractViolation("need 0 < d_min < d_max");
  if (!(object_depth_jitter > 0.0) || object_depth_jitter > 0.1 * d_max)
    throw ContractViolation("object_depth_jitter must be in (0, 0.1*d_max]");
  if (max_void_blobs < 0) throw ContractViolation("max_void_blobs must be >= 0");
  if (!(night_brightness > 0.0) || night_brightness > 1.0)
    throw ContractViolation("night_brightness must be in (0, 1]");
  if (!(fog_decay > 0.0)) throw ContractViolation("fog_decay must be positive");
  if (!(event_threshold > 0.0))
    throw ContractViolation("event_threshold must be positive");
  for (int k : {lidar_kernel, event_kernel, radar_kernel})
    if (k < 1 || k % 2 == 0)
      throw ContractViolation("sensor kernels must be odd and >= 1");
  if (lidar_row_step < 1 || lidar_col_step < 1 ||
      lidar_row_step * lidar_col_step < 2)
    throw ContractViolation("lidar scan steps must subsample by at least 2x");
  for (double b : lidar_dropout_beta)
    if (!(b >= 0.0)) throw ContractViolation("dropout beta must be >= 0");
  for (double s : lidar_noise_sigma)
    if (!(s >= 0.0)) throw ContractViolation("noise sigma must be >= 0");
  for (double p : lidar_scatter_prob)
    if (!(p >= 0.0) || p > 1.0)
      throw ContractViolation("scatter probability must be in [0, 1]");
}

SceneConfig SceneConfig::from_keyval(KeyVal kv) {
  SceneConfig c;
  c.height = static_cast<int>(kv.take_int("height", c.height));
  c.width = static_cast<int>(kv.take_int("width", c.width));
  c.classes = static_cast<int>(kv.take_int("classes", c.classes));
  c.min_objects = static_cast<int>(kv.take_int("min_objects", c.min_objects));
  c.max_objects = static_cast<int>(kv.take_int("max_objects", c.max_objects));
  c.d_min = kv.take_double("d_min", c.d_min);
  c.d_max = kv.take_double("d_max", c.d_max);
  c.object_depth_jitter = kv.take_double("object_depth_jitter", c.object_depth_jitter);
  c.max_void_blobs = static_cast<int>(kv.take_int("max_void_blobs", c.max_void_blobs));
  c.night_brightness = kv.take_double("night_brightness", c.night_brightness);
  c.fog_decay = kv.take_double("fog_decay", c.fog_decay);
  c.event_threshold = kv.take_double("event_threshold", c.event_threshold);
  c.lidar_kernel = static_cast<int>(kv.take_int("lidar_kernel", c.lidar_kernel));
  c.event_kernel = static_cast<int>(kv.take_int("event_kernel", c.event_kernel));
  c.radar_kernel = static_cast<int>(kv.take_int("radar_kernel", c.radar_kernel));
  c.lidar_row_step = static_cast<int>(kv.take_int("lidar_row_step", c.lidar_row_step));
  c.lidar_col_step = static_cast<int>(kv.take_int("lidar_col_step", c.lidar_col_step));
  c.seed = static_cast<std::uint64_t>(kv.take_int("seed", static_cast<std::int64_t>(c.seed)));
  for (int w = 0; w < 4; ++w) {
    const std::string suffix = weather_name(static_cast<Weather>(w));
    c.lidar_dropout_beta[w] =
        kv.take_double("lidar_dropout_beta_" + suffix, c.lidar_dropout_beta[w]);
    c.lidar_noise_sigma[w] =
        kv.take_double("lidar_noise_sigma_" + suffix, c.lidar_noise_sigma[w]);
    c.lidar_scatter_prob[w] =
        kv.take_double("lidar_scatter_prob_" + suffix, c.lidar_scatter_prob[w]);
  }
  kv.finish();
  c.validate();
  return c;
}

namespace {

struct PaintedObject {
  int cls = 0;
  int yc = 0, xc = 0;  // reference point for radar returns
  int size = 0;
  double d0 = 0.0;
};

struct Scene {
  int h = 0, w = 0;
  std::vector<double> depth;       // true surface depth; d_max where sky
  std::vector<std::uint8_t> surface;  // 1 where a lidar return is possible
  std::vector<std::uint8_t> cls;
  std::vector<std::uint16_t> inst;
  std::vector<double> r, g, b;     // clean daylight appearance
  std::vector<PaintedObject> objects;
  int horizon = 0;
};

constexpr double kPalette[8][3] = {
    {0.85, 0.25, 0.20}, {0.20, 0.55, 0.85}, {0.90, 0.75, 0.20},
    {0.45, 0.80, 0.35}, {0.75, 0.35, 0.80}, {0.95, 0.55, 0.15},
    {0.30, 0.80, 0.80}, {0.80, 0.50, 0.50}};

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

int rng_span(Rng& rng, int span) {
  return span <= 0 ? 0 : rng.uniform_int(-span, span);
}

// Harmonic interpolation so equal row steps correspond to a perspective-like
// depth falloff: nearby rows change depth slowly, far rows quickly.
double ground_depth(const SceneConfig& cfg, int horizon, int h, int y) {
  const double d_near = 1.2 * cfg.d_min;
  const double d_far = 0.9 * cfg.d_max;
  const double t = (h - 1 == horizon)
                       ? 1.0
                       : static_cast<double>(y - horizon) / (h - 1 - horizon);
  return 1.0 / ((1.0 - t) / d_far + t / d_near);
}

Scene build_geometry(const SceneConfig& cfg, std::uint64_t seed) {
  Rng rng(seed, "geometry");
  Scene sc;
  sc.h = cfg.height;
  sc.w = cfg.width;
  const std::size_t n = static_cast<std::size_t>(sc.h) * sc.w;
  sc.depth.assign(n, cfg.d_max);
  sc.surface.assign(n, 0);
  sc.cls.assign(n, 0);
  sc.inst.assign(n, 1);
  sc.r.assign(n, 0.0);
  sc.g.assign(n, 0.0);
  sc.b.assign(n, 0.0);

  sc.horizon = static_cast<int>(sc.h * rng.uniform(0.30, 0.45));
  sc.horizon = std::max(1, std::min(sc.horizon, sc.h - 8));

  for (int y = 0; y < sc.horizon; ++y) {
    const double t = static_cast<double>(y) / std::max(1, sc.horizon - 1);
    for (int x = 0; x < sc.w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * sc.w + x;
      sc.r[i] = 0.40 + 0.32 * t;
      sc.g[i] = 0.55 + 0.27 * t;
      sc.b[i] = 0.80 + 0.13 * t;
    }
  }
  for (int y = sc.horizon; y < sc.h; ++y) {
    const double t = static_cast<double>(y - sc.horizon) /
                     std::max(1, sc.h - 1 - sc.horizon);
    const double shade = 0.8 + 0.4 * t;
    const double d = ground_depth(cfg, sc.horizon, sc.h, y);
    for (int x = 0; x < sc.w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * sc.w + x;
      sc.depth[i] = d;
      sc.surface[i] = 1;
      sc.cls[i] = 1;
      sc.r[i] = 0.33 * shade;
      sc.g[i] = 0.30 * shade;
      sc.b[i] = 0.26 * shade;
    }
  }

  struct Draft {
    int cls, kind, yb, xc, size;
    double d0, tint;
  };
  std::vector<Draft> drafts;
  const int count = rng.uniform_int(cfg.min_objects, cfg.max_objects);
  for (int o = 0; o < count; ++o) {
    Draft d;
    d.cls = rng.uniform_int(2, cfg.classes - 1);
    d.kind = rng.uniform_int(0, 2);
    d.yb = rng.uniform_int(sc.horizon + 1, sc.h - 1);
    d.xc = rng.uniform_int(2, sc.w - 3);
    d.d0 = ground_depth(cfg, sc.horizon, sc.h, d.yb);
    const double s = sc.h * 2.0 / d.d0 * rng.uniform(0.7, 1.3);
    d.size = std::max(3, std::min(static_cast<int>(s), sc.h / 3));
    d.tint = rng.uniform(0.85, 1.15);
    drafts.push_back(d);
  }
  // far-to-near painter order so nearer objects occlude
  std::stable_sort(drafts.begin(), drafts.end(),
                   [](const Draft& a, const Draft& b) { return a.d0 > b.d0; });

  std::vector<std::uint16_t> next_inst(static_cast<std::size_t>(cfg.classes), 1);
  for (const Draft& d : drafts) {
    const std::uint16_t inst = next_inst[static_cast<std::size_t>(d.cls)]++;
    int y0, y1, x0, x1;
    if (d.kind == 0) {  // box
      const int sh = std::max(3, static_cast<int>(d.size * 1.1));
      y0 = d.yb - sh;
      y1 = d.yb;
      x0 = d.xc - d.size / 2;
      x1 = d.xc + d.size / 2;
    } else if (d.kind == 1) {  // disc bounding box
      y0 = d.yb - d.size;
      y1 = d.yb;
      x0 = d.xc - d.size / 2;
      x1 = d.xc + d.size / 2;
    } else {  // pole
      const int pw = std::max(1, d.size / 6);
      y0 = d.yb - 2 * d.size;
      y1 = d.yb;
      x0 = d.xc - pw / 2;
      x1 = d.xc + pw / 2;
    }
    y0 = std::max(0, y0);
    y1 = std::min(sc.h - 1, y1);
    x0 = std::max(0, x0);
    x1 = std::min(sc.w - 1, x1);
    if (y0 > y1 || x0 > x1) continue;

    const double* base = kPalette[(d.cls - 2) % 8];
    const double cy = 0.5 * (y0 + y1), cx = d.xc;
    const double rad = 0.5 * d.size;
    for (int y = y0; y <= y1; ++y) {
      // depth varies only with row; spread stays strictly under the bound
      const double ramp = 0.9 * cfg.object_depth_jitter *
                          static_cast<double>(y - y0) / std::max(1, y1 - y0);
      for (int x = x0; x <= x1; ++x) {
        if (d.kind == 1) {
          const double dy = y - cy, dx = x - cx;
          if (dy * dy + dx * dx > rad * rad) continue;
        }
        const std::size_t i = static_cast<std::size_t>(y) * sc.w + x;
        sc.depth[i] = d.d0 + ramp;
        sc.surface[i] = 1;
        sc.cls[i] = static_cast<std::uint8_t>(d.cls);
        sc.inst[i] = inst;
        sc.r[i] = clamp01(base[0] * d.tint);
        sc.g[i] = clamp01(base[1] * d.tint);
        sc.b[i] = clamp01(base[2] * d.tint);
      }
    }
    sc.objects.push_back(
        PaintedObject{d.cls, (y0 + y1) / 2, d.xc, d.size, d.d0});
  }

  const int blobs = cfg.max_void_blobs > 0 ? rng.uniform_int(0, cfg.max_void_blobs) : 0;
  for (int v = 0; v < blobs; ++v) {
    const int rad = rng.uniform_int(2, std::max(3, sc.h / 16));
    const int yc = rng.uniform_int(0, sc.h - 1);
    const int xc = rng.uniform_int(0, sc.w - 1);
    for (int y = std::max(0, yc - rad); y <= std::min(sc.h - 1, yc + rad); ++y)
      for (int x = std::max(0, xc - rad); x <= std::min(sc.w - 1, xc + rad); ++x) {
        const int dy = y - yc, dx = x - xc;
        if (dy * dy + dx * dx > rad * rad) continue;
        const std::size_t i = static_cast<std::size_t>(y) * sc.w + x;
        // labels become unknown; the underlying surface is untouched
        sc.cls[i] = kVoidClass;
        sc.inst[i] = kVoidInstance;
      }
  }

  Rng tex(seed, "texture");
  for (std::size_t i = 0; i < n; ++i) {
    const double noise = tex.uniform(-0.015, 0.015);
    sc.r[i] = clamp01(sc.r[i] + noise);
    sc.g[i] = clamp01(sc.g[i] + noise);
    sc.b[i] = clamp01(sc.b[i] + noise);
  }
  return sc;
}

void apply_weather(const SceneConfig& cfg, const Scene& sc, Weather w,
                   std::uint64_t seed, std::vector<double>& r,
                   std::vector<double>& g, std::vector<double>& b) {
  Rng rng(seed, "weather");
  const std::size_t n = r.size();
  switch (w) {
    case Weather::clear:
      break;
    case Weather::fog:
      for (std::size_t i = 0; i < n; ++i) {
        const double wash = 1.0 - std::exp(-sc.depth[i] / cfg.fog_decay);
        r[i] = r[i] * (1.0 - wash) + 0.72 * wash;
        g[i] = g[i] * (1.0 - wash) + 0.72 * wash;
        b[i] = b[i] * (1.0 - wash) + 0.74 * wash;
      }
      break;
    case Weather::rain: {
      for (std::size_t i = 0; i < n; ++i) {
        r[i] = r[i] * 0.82 + 0.02;
        g[i] = g[i] * 0.82 + 0.03;
        b[i] = b[i] * 0.82 + 0.05;
      }
      const int streaks = std::max(4, sc.w / 3);
      for (int s = 0; s < streaks; ++s) {
        const int x = rng.uniform_int(0, sc.w - 1);
        const int ytop = rng.uniform_int(0, std::max(0, sc.h - 9));
        const int len = rng.uniform_int(4, 10);
        for (int y = ytop; y < std::min(sc.h, ytop + len); ++y) {
          const std::size_t i = static_cast<std::size_t>(y) * sc.w + x;
          r[i] += 0.12;
          g[i] += 0.12;
          b[i] += 0.13;
        }
      }
      break;
    }
    case Weather::snow: {
      for (std::size_t i = 0; i < n; ++i) {
        r[i] = r[i] * 0.92 + 0.06;
        g[i] = g[i] * 0.92 + 0.06;
        b[i] = b[i] * 0.92 + 0.06;
      }
      const int speckles = sc.h * sc.w / 50;
      for (int s = 0; s < speckles; ++s) {
        const int y = rng.uniform_int(0, sc.h - 1);
        const int x = rng.uniform_int(0, sc.w - 1);
        const std::size_t i = static_cast<std::size_t>(y) * sc.w + x;
        r[i] = r[i] * 0.25 + 0.72;
        g[i] = g[i] * 0.25 + 0.72;
        b[i] = b[i] * 0.25 + 0.72;
      }
      break;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = clamp01(r[i]);
    g[i] = clamp01(g[i]);
    b[i] = clamp01(b[i]);
  }
}

Tensor event_image(const SceneConfig& cfg, const std::vector<double>& r,
                   const std::vector<double>& g, const std::vector<double>& b,
                   int h, int w) {
  std::vector<double> gray(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) gray[i] = (r[i] + g[i] + b[i]) / 3.0;
  Tensor img = Tensor::zeros({3, h, w});
  const std::size_t plane = gray.size();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double gx = (x + 1 < w) ? gray[i + 1] - gray[i] : 0.0;
      const double gy = (y + 1 < h) ? gray[i + w] - gray[i] : 0.0;
      const double mag = std::sqrt(gx * gx + gy * gy);
      if (mag <= cfg.event_threshold) continue;
      img.data[i] = std::min(1.0, 2.0 * mag);
      img.data[plane + i] = gray[i];
      img.data[2 * plane + i] = 1.0;
    }
  return project_and_dilate(img, cfg.event_kernel);
}

}  // namespace

Tensor point_image(const SparseDepthMap& sparse, const std::vector<double>& intensity,
                   double d_max) {
  if (sparse.depth.size() != sparse.valid.size() ||
      intensity.size() != sparse.depth.size())
    throw ContractViolation("point_image: field sizes disagree");
  const int h = sparse.height, w = sparse.width;
  if (static_cast<std::size_t>(h) * w != sparse.depth.size())
    throw ContractViolation("point_image: H*W does not match data size");
  Tensor img = Tensor::zeros({3, h, w});
  const std::size_t plane = sparse.depth.size();
  for (std::size_t i = 0; i < plane; ++i) {
    if (!sparse.valid[i]) continue;
    img.data[i] = std::max(0.0, 1.0 - sparse.depth[i] / d_max);
    img.data[plane + i] = std::max(0.0, intensity[i]);
    img.data[2 * plane + i] = 1.0;
  }
  return img;
}

Tensor project_and_dilate(const Tensor& points, int k_sensor) {
  if (points.shape.size() != 3)
    throw ContractViolation("project_and_dilate expects [C,H,W]");
  if (k_sensor < 1 || k_sensor % 2 == 0)
    throw ContractViolation("dilation kernel must be odd and >= 1");
  if (k_sensor == 1) return points;
  const int c = points.shape[0], h = points.shape[1], w = points.shape[2];
  const int r = k_sensor / 2;
  Tensor out = Tensor::zeros(points.shape);
  std::vector<double> rowmax(static_cast<std::size_t>(h) * w);
  for (int ch = 0; ch < c; ++ch) {
    const double* src = points.data.data() + static_cast<std::size_t>(ch) * h * w;
    double* dst = out.data.data() + static_cast<std::size_t>(ch) * h * w;
    // square max separates into a horizontal then a vertical max pass
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double m = src[static_cast<std::size_t>(y) * w + x];
        for (int dx = -r; dx <= r; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          m = std::max(m, src[static_cast<std::size_t>(y) * w + xx]);
        }
        rowmax[static_cast<std::size_t>(y) * w + x] = m;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double m = rowmax[static_cast<std::size_t>(y) * w + x];
        for (int dy = -r; dy <= r; ++dy) {
          const int yy = y + dy;
          if (yy < 0 || yy >= h) continue;
          m = std::max(m, rowmax[static_cast<std::size_t>(yy) * w + x]);
        }
        dst[static_cast<std::size_t>(y) * w + x] = m;
      }
  }
  return out;
}

MultimodalSample generate_scene(const SceneConfig& cfg, std::uint64_t seed,
                                ConditionLabel condition) {
  cfg.validate();
  const Scene sc = build_geometry(cfg, seed);
  const int h = sc.h, w = sc.w;
  const std::size_t n = sc.depth.size();
  const int widx = static_cast<int>(condition.weather);

  MultimodalSample out;
  out.seed = seed;
  out.condition = condition;
  out.panoptic.height = h;
  out.panoptic.width = w;
  out.panoptic.class_id = sc.cls;
  out.panoptic.instance_id = sc.inst;

  out.depth_true = Tensor::zeros({h, w});
  for (std::size_t i = 0; i < n; ++i)
    out.depth_true.data[i] = std::min(cfg.d_max, std::max(cfg.d_min, sc.depth[i]));

  std::vector<double> r = sc.r, g = sc.g, b = sc.b;
  apply_weather(cfg, sc, condition.weather, seed, r, g, b);
  // events come from the pre-darkening image so edges survive at night
  out.event_input = event_image(cfg, r, g, b, h, w);
  if (condition.time == TimeOfDay::night)
    for (std::size_t i = 0; i < n; ++i) {
      r[i] *= cfg.night_brightness;
      g[i] *= cfg.night_brightness;
      b[i] *= cfg.night_brightness;
    }
  out.rgb = Tensor::zeros({3, h, w});
  for (std::size_t i = 0; i < n; ++i) {
    out.rgb.data[i] = r[i];
    out.rgb.data[n + i] = g[i];
    out.rgb.data[2 * n + i] = b[i];
  }

  // scanline lidar: range-driven dropout, occasional near scatter, log-normal
  // depth noise; the sky never returns
  Rng lrng(seed, "lidar");
  out.lidar_raw.height = h;
  out.lidar_raw.width = w;
  out.lidar_raw.depth.assign(n, 0.0);
  out.lidar_raw.valid.assign(n, 0);
  std::vector<double> lidar_inten(n, 0.0);
  const int phase_r = lrng.uniform_int(0, cfg.lidar_row_step - 1);
  const int phase_c = lrng.uniform_int(0, cfg.lidar_col_step - 1);
  for (int y = phase_r; y < h; y += cfg.lidar_row_step)
    for (int x = phase_c; x < w; x += cfg.lidar_col_step) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (!sc.surface[i]) continue;
      const double range = sc.depth[i];
      const double p_drop =
          std::min(1.0, cfg.lidar_dropout_beta[widx] * range / cfg.d_max);
      if (lrng.bernoulli(p_drop)) continue;
      double d, inten;
      if (lrng.bernoulli(cfg.lidar_scatter_prob[widx])) {
        // airborne scatter: an early return well short of the surface
        d = lrng.uniform(cfg.d_min, std::max(0.4 * range, cfg.d_min + 1e-9));
        inten = 0.05 + 0.10 * lrng.uniform();
      } else {
        d = range * std::exp(cfg.lidar_noise_sigma[widx] * lrng.normal());
        inten = 0.2 + 0.8 * std::exp(-d / (0.5 * cfg.d_max));
      }
      d = std::min(cfg.d_max, std::max(cfg.d_min, d));
      out.lidar_raw.depth[i] = d;
      out.lidar_raw.valid[i] = 1;
      lidar_inten[i] = inten;
    }
  if (out.lidar_raw.valid_fraction() == 0.0) {
    // degenerate dropout draw: keep at least one return so P_l is never empty
    const std::size_t i = static_cast<std::size_t>(h - 1) * w + w / 2;
    const double d = out.depth_true.data[i];
    out.lidar_raw.depth[i] = d;
    out.lidar_raw.valid[i] = 1;
    lidar_inten[i] = 0.2 + 0.8 * std::exp(-d / (0.5 * cfg.d_max));
  }
  out.lidar_input = project_and_dilate(
      point_image(out.lidar_raw, lidar_inten, cfg.d_max), cfg.lidar_kernel);

  // radar: blobs at even-class objects plus ground clutter, independent of
  // the condition (radar is the weather-robust modality)
  Rng rrng(seed, "radar");
  SparseDepthMap radar;
  radar.height = h;
  radar.width = w;
  radar.depth.assign(n, 0.0);
  radar.valid.assign(n, 0);
  std::vector<double> radar_inten(n, 0.0);
  auto radar_point = [&](int y, int x, double d, double inten) {
    y = std::max(0, std::min(h - 1, y));
    x = std::max(0, std::min(w - 1, x));
    const std::size_t i = static_cast<std::size_t>(y) * w + x;
    radar.depth[i] = std::min(cfg.d_max, std::max(cfg.d_min, d));
    radar.valid[i] = 1;
    radar_inten[i] = inten;
  };
  for (const PaintedObject& o : sc.objects) {
    if (o.cls % 2 != 0) continue;
    radar_point(o.yc, o.xc, o.d0, rrng.uniform(0.5, 1.0));
    const int extras = rrng.uniform_int(1, 2);
    for (int e = 0; e < extras; ++e) {
      const int dy = rng_span(rrng, o.size / 4);
      const int dx = rng_span(rrng, o.size / 4);
      radar_point(o.yc + dy, o.xc + dx, o.d0, rrng.uniform(0.3, 0.8));
    }
  }
  const int clutter = rrng.uniform_int(2, 6);
  for (int cidx = 0; cidx < clutter; ++cidx) {
    const int y = rrng.uniform_int(sc.horizon, h - 1);
    const int x = rrng.uniform_int(0, w - 1);
    radar_point(y, x, ground_depth(cfg, sc.horizon, h, y), rrng.uniform(0.05, 0.3));
  }
  out.radar_input = project_and_dilate(point_image(radar, radar_inten, cfg.d_max),
                                       cfg.radar_kernel);
  return out;
}

MultimodalSample generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
  Rng crng(seed, "condition");
  return generate_scene(cfg, seed,
                        ConditionLabel::from_index(static_cast<int>(crng.uniform_int(8))));
}

}  // namespace dgf::scenegen
