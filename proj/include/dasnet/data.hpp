#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dasnet/image_io.hpp"
#include "dasnet/tensor.hpp"

namespace dasnet::data {

/// Depth values live in (kDepthFloor, 1] so logarithms are always defined.
inline constexpr float kDepthFloor = 1e-3f;

struct Sample {
  std::string id;
  Tensor<float> rgb;                   // {3,H,W}, values in [0,1]
  std::optional<Tensor<float>> depth;  // {1,H,W}, values in (0,1]
  Tensor<float> mask;                  // {1,H,W}, values in {0,1}

  int height() const { return rgb.dim(1); }
  int width() const { return rgb.dim(2); }
};

inline void validate_sample(const Sample& s) {
  check(s.rgb.rank() == 3 && s.rgb.dim(0) == 3, "sample: rgb must be {3,H,W}");
  check(s.mask.rank() == 3 && s.mask.dim(0) == 1, "sample: mask must be {1,H,W}");
  check(s.mask.dim(1) == s.rgb.dim(1) && s.mask.dim(2) == s.rgb.dim(2),
        "sample: mask size differs from rgb");
  for (std::int64_t i = 0; i < s.mask.numel(); ++i)
    check(s.mask[i] == 0.0f || s.mask[i] == 1.0f, "sample: mask must be binary");
  if (s.depth) {
    check(s.depth->rank() == 3 && s.depth->dim(0) == 1, "sample: depth must be {1,H,W}");
    check(s.depth->dim(1) == s.rgb.dim(1) && s.depth->dim(2) == s.rgb.dim(2),
          "sample: depth size differs from rgb");
    for (std::int64_t i = 0; i < s.depth->numel(); ++i)
      check((*s.depth)[i] > 0.0f, "sample: depth must be strictly positive");
  }
}

// ---------------------------------------------------------------------------
// Synthetic scenes

enum class ShapeKind { ellipse = 0, rectangle = 1, blob = 2 };

struct SceneSpec {
  std::uint64_t seed = 0;
  int height = 128;
  int width = 128;
  int n_objects = 1;
  double texture_noise = 0.03;
  double bg_depth_min = 0.70;
  double bg_depth_max = 0.85;
  double bg_depth_slope = 0.10;
  double object_depth_min = 0.15;
  double object_depth_max = 0.55;
};

namespace detail {

struct SceneObject {
  ShapeKind kind;
  double cx, cy;       // center, pixels
  double rx, ry;       // half extents, pixels
  double angle;        // rotation
  double depth;        // constant depth plane
  double color[3];
  double harm_amp[3];  // blob radius harmonics (k = 2,3,4)
  double harm_phase[3];

  bool contains(double x, double y) const {
    const double dx0 = x - cx, dy0 = y - cy;
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double dx = dx0 * ca + dy0 * sa;
    const double dy = -dx0 * sa + dy0 * ca;
    switch (kind) {
      case ShapeKind::ellipse:
        return (dx * dx) / (rx * rx) + (dy * dy) / (ry * ry) <= 1.0;
      case ShapeKind::rectangle:
        return std::abs(dx) <= rx && std::abs(dy) <= ry;
      case ShapeKind::blob: {
        const double r = std::hypot(dx, dy);
        if (r <= 1e-12) return true;
        const double phi = std::atan2(dy, dx);
        double rad = 1.0;
        for (int k = 0; k < 3; ++k) rad += harm_amp[k] * std::cos((k + 2) * phi + harm_phase[k]);
        return r <= rx * std::max(0.3, rad);
      }
    }
    return false;
  }
};

// Smooth value noise: a coarse random grid, bilinearly upsampled.
inline std::vector<double> value_noise(int h, int w, double amplitude, std::mt19937_64& rng) {
  const int gh = 9, gw = 9;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> grid(static_cast<std::size_t>(gh) * gw);
  for (auto& v : grid) v = u(rng) * amplitude;
  std::vector<double> out(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    const double fy = h > 1 ? static_cast<double>(y) / (h - 1) * (gh - 1) : 0.0;
    const int y0 = std::min(gh - 2, static_cast<int>(fy));
    const double ty = fy - y0;
    for (int x = 0; x < w; ++x) {
      const double fx = w > 1 ? static_cast<double>(x) / (w - 1) * (gw - 1) : 0.0;
      const int x0 = std::min(gw - 2, static_cast<int>(fx));
      const double tx = fx - x0;
      const double a = grid[static_cast<std::size_t>(y0) * gw + x0];
      const double b = grid[static_cast<std::size_t>(y0) * gw + x0 + 1];
      const double c = grid[static_cast<std::size_t>(y0 + 1) * gw + x0];
      const double d = grid[static_cast<std::size_t>(y0 + 1) * gw + x0 + 1];
      out[static_cast<std::size_t>(y) * w + x] =
          (1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * c + tx * d);
    }
  }
  return out;
}

}  // namespace detail

/// Deterministic synthetic RGBD scene: a shaded background plus 1..3 shapes on
/// constant depth planes. Exactly one object is salient: the nearest one. Its
/// footprint is the ground-truth mask.
inline Sample generate_scene(const SceneSpec& spec) {
  check(spec.height >= 32 && spec.width >= 32,
        "generate_scene: canvas must be at least 32x32, got " + std::to_string(spec.height) +
            "x" + std::to_string(spec.width));
  check(spec.n_objects >= 1 && spec.n_objects <= 3,
        "generate_scene: n_objects must be in 1..3, got " + std::to_string(spec.n_objects));

  const int h = spec.height, w = spec.width;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  // Background color field: muted base + directional shading + smooth noise.
  double base[3];
  for (double& b : base) b = 0.2 + 0.4 * u01(rng);
  const double shade_dir = u01(rng) * 2.0 * M_PI;
  const double shade_amp = 0.05 + 0.10 * u01(rng);
  const auto noise = detail::value_noise(h, w, spec.texture_noise, rng);

  // Background depth plane with a gentle gradient.
  const double dbase = spec.bg_depth_min + (spec.bg_depth_max - spec.bg_depth_min) * u01(rng);
  const double ddir = u01(rng) * 2.0 * M_PI;
  const double damp = spec.bg_depth_slope * u01(rng);

  std::vector<detail::SceneObject> objects;
  std::uniform_int_distribution<int> kind_dist(0, 2);
  for (int k = 0; k < spec.n_objects; ++k) {
    detail::SceneObject o{};
    o.kind = static_cast<ShapeKind>(kind_dist(rng));
    o.cx = (0.25 + 0.5 * u01(rng)) * w;
    o.cy = (0.25 + 0.5 * u01(rng)) * h;
    const double base_r = (0.12 + 0.16 * u01(rng)) * std::min(h, w);
    o.rx = base_r;
    o.ry = base_r * (0.6 + 0.8 * u01(rng));
    o.angle = u01(rng) * M_PI;
    o.depth = spec.object_depth_min + (spec.object_depth_max - spec.object_depth_min) * u01(rng);
    for (int c = 0; c < 3; ++c) {
      const double contrast = 0.3 + 0.25 * u01(rng);
      const double dir = u01(rng) < 0.5 ? -1.0 : 1.0;
      o.color[c] = std::clamp(base[c] + dir * contrast, 0.02, 0.98);
    }
    for (int i = 0; i < 3; ++i) {
      o.harm_amp[i] = (u01(rng) - 0.5) * 0.3;
      o.harm_phase[i] = u01(rng) * 2.0 * M_PI;
    }
    objects.push_back(o);
  }

  // Paint far to near so nearer objects occlude.
  std::vector<int> order(objects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return objects[static_cast<std::size_t>(a)].depth > objects[static_cast<std::size_t>(b)].depth;
  });
  const int salient = order.back();  // nearest object

  Sample s;
  s.rgb = Tensor<float>({3, h, w});
  s.depth = Tensor<float>({1, h, w});
  s.mask = Tensor<float>({1, h, w});

  const double sdx = std::cos(shade_dir), sdy = std::sin(shade_dir);
  const double ddx = std::cos(ddir), ddy = std::sin(ddir);
  double bg_depth_sum = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double uu = w > 1 ? static_cast<double>(x) / (w - 1) - 0.5 : 0.0;
      const double vv = h > 1 ? static_cast<double>(y) / (h - 1) - 0.5 : 0.0;
      const double nz = noise[static_cast<std::size_t>(y) * w + x];
      double color[3];
      const double shade = shade_amp * (uu * sdx + vv * sdy);
      for (int c = 0; c < 3; ++c) color[c] = base[c] + shade + nz;
      double depth = std::clamp(dbase + damp * (uu * ddx + vv * ddy),
                                static_cast<double>(kDepthFloor), 1.0);
      bg_depth_sum += depth;
      for (int oi : order) {
        const auto& o = objects[static_cast<std::size_t>(oi)];
        if (o.contains(x, y)) {
          for (int c = 0; c < 3; ++c) color[c] = o.color[c] + 0.5 * nz;
          depth = o.depth;
        }
      }
      for (int c = 0; c < 3; ++c)
        s.rgb[(static_cast<std::int64_t>(c) * h + y) * w + x] =
            static_cast<float>(std::clamp(color[c], 0.0, 1.0));
      (*s.depth)[static_cast<std::int64_t>(y) * w + x] = static_cast<float>(depth);
      s.mask[static_cast<std::int64_t>(y) * w + x] =
          objects[static_cast<std::size_t>(salient)].contains(x, y) ? 1.0f : 0.0f;
    }
  }

  const double bg_depth_mean = bg_depth_sum / (static_cast<double>(h) * w);
  check(objects[static_cast<std::size_t>(salient)].depth < bg_depth_mean,
        "generate_scene: salient object must be nearer than the background mean");

  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%08llu",
                static_cast<unsigned long long>(spec.seed));
  s.id = buf;
  return s;
}

// ---------------------------------------------------------------------------
// On-disk datasets: root/{rgb,depth,mask}/<stem>.png

inline void save_sample(const Sample& s, const std::string& root) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(root) / "rgb");
  fs::create_directories(fs::path(root) / "mask");
  if (s.depth) fs::create_directories(fs::path(root) / "depth");
  const int h = s.height(), w = s.width();

  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = s.rgb[(static_cast<std::int64_t>(c) * h + y) * w + x];
        rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
      }
  io::write_png_rgb8((fs::path(root) / "rgb" / (s.id + ".png")).string(), w, h, rgb);

  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h) * w);
  for (std::int64_t i = 0; i < s.mask.numel(); ++i)
    mask[static_cast<std::size_t>(i)] = s.mask[i] >= 0.5f ? 255 : 0;
  io::write_png_gray8((fs::path(root) / "mask" / (s.id + ".png")).string(), w, h, mask);

  if (s.depth) {
    std::vector<std::uint16_t> depth(static_cast<std::size_t>(h) * w);
    for (std::int64_t i = 0; i < s.depth->numel(); ++i)
      depth[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(
          std::lround(std::clamp((*s.depth)[i], 0.0f, 1.0f) * 65535.0f));
    io::write_png_gray16((fs::path(root) / "depth" / (s.id + ".png")).string(), w, h, depth);
  }
}

/// Loads samples stem-sorted. When `split` is non-empty the layout is
/// root/split/{rgb,depth,mask}. Depth loading is skipped entirely when
/// load_depth is false (the RGB-only inference paths never touch it).
inline std::vector<Sample> load_dataset(const std::string& root, const std::string& split = "",
                                        bool load_depth = true) {
  namespace fs = std::filesystem;
  const fs::path dir = split.empty() ? fs::path(root) : fs::path(root) / split;
  const fs::path rgb_dir = dir / "rgb";
  const fs::path mask_dir = dir / "mask";
  const fs::path depth_dir = dir / "depth";
  check(fs::is_directory(rgb_dir), "load_dataset: missing rgb/ under " + dir.string());
  check(fs::is_directory(mask_dir), "load_dataset: missing mask/ under " + dir.string());
  const bool has_depth = load_depth && fs::is_directory(depth_dir);

  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(rgb_dir)) {
    if (e.path().extension() == ".png") stems.push_back(e.path().stem().string());
  }
  std::sort(stems.begin(), stems.end());

  std::vector<Sample> out;
  for (const auto& stem : stems) {
    const fs::path rgb_path = rgb_dir / (stem + ".png");
    const fs::path mask_path = mask_dir / (stem + ".png");
    check(fs::exists(mask_path), "load_dataset: missing mask for stem '" + stem + "'");

    io::ImageU16 rgb = io::read_png(rgb_path.string());
    check(rgb.channels == 3, "load_dataset: " + rgb_path.string() + " must be RGB");
    const int h = rgb.height, w = rgb.width;
    const float rgb_scale = rgb.bit_depth == 16 ? 65535.0f : 255.0f;

    Sample s;
    s.id = stem;
    s.rgb = Tensor<float>({3, h, w});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          s.rgb[(static_cast<std::int64_t>(c) * h + y) * w + x] =
              rgb.pixels[(static_cast<std::size_t>(y) * w + x) * 3 + c] / rgb_scale;

    io::ImageU16 mask = io::read_png(mask_path.string());
    check(mask.channels == 1, "load_dataset: " + mask_path.string() + " must be grayscale");
    check(mask.width == w && mask.height == h,
          "load_dataset: mask size " + std::to_string(mask.width) + "x" +
              std::to_string(mask.height) + " does not match rgb " + std::to_string(w) + "x" +
              std::to_string(h) + " for " + mask_path.string());
    const float mask_half = mask.bit_depth == 16 ? 32767.5f : 127.5f;
    s.mask = Tensor<float>({1, h, w});
    for (std::int64_t i = 0; i < s.mask.numel(); ++i)
      s.mask[i] = mask.pixels[static_cast<std::size_t>(i)] > mask_half ? 1.0f : 0.0f;

    if (has_depth) {
      const fs::path depth_path = depth_dir / (stem + ".png");
      check(fs::exists(depth_path), "load_dataset: missing depth for stem '" + stem + "'");
      io::ImageU16 depth = io::read_png(depth_path.string());
      check(depth.channels == 1, "load_dataset: " + depth_path.string() + " must be grayscale");
      check(depth.width == w && depth.height == h,
            "load_dataset: depth size " + std::to_string(depth.width) + "x" +
                std::to_string(depth.height) + " does not match rgb " + std::to_string(w) + "x" +
                std::to_string(h) + " for " + depth_path.string());
      const float depth_scale = depth.bit_depth == 16 ? 65535.0f : 255.0f;
      Tensor<float> d({1, h, w});
      for (std::int64_t i = 0; i < d.numel(); ++i)
        d[i] = std::max(kDepthFloor, depth.pixels[static_cast<std::size_t>(i)] / depth_scale);
      s.depth = std::move(d);
    }
    validate_sample(s);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation: flip, crop, multi-scale resize; identical geometry on all planes.

struct AugmentationConfig {
  double horizontal_flip_prob = 0.5;
  double crop_fraction_min = 0.85;
  double crop_fraction_max = 1.0;
  std::vector<double> multiscale_factors = {0.75, 1.0, 1.25};
  int target_height = 352;
  int target_width = 352;
};

namespace detail {

inline Tensor<float> resize_bilinear_plane(const Tensor<float>& src, int th, int tw) {
  const int c = src.dim(0), h = src.dim(1), w = src.dim(2);
  if (th == h && tw == w) return src;
  Tensor<float> dst({c, th, tw});
  const double sy = static_cast<double>(h) / th, sx = static_cast<double>(w) / tw;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < th; ++y) {
      double fy = (y + 0.5) * sy - 0.5;
      fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, h - 1);
      const double ty = fy - y0;
      for (int x = 0; x < tw; ++x) {
        double fx = (x + 0.5) * sx - 0.5;
        fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(x0 + 1, w - 1);
        const double tx = fx - x0;
        const auto at = [&](int yy, int xx) {
          return static_cast<double>(src[(static_cast<std::int64_t>(ch) * h + yy) * w + xx]);
        };
        dst[(static_cast<std::int64_t>(ch) * th + y) * tw + x] = static_cast<float>(
            (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x1)) +
            ty * ((1 - tx) * at(y1, x0) + tx * at(y1, x1)));
      }
    }
  return dst;
}

inline Tensor<float> resize_nearest_plane(const Tensor<float>& src, int th, int tw) {
  const int c = src.dim(0), h = src.dim(1), w = src.dim(2);
  if (th == h && tw == w) return src;
  Tensor<float> dst({c, th, tw});
  const double sy = static_cast<double>(h) / th, sx = static_cast<double>(w) / tw;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < th; ++y) {
      const int yy = std::min(h - 1, static_cast<int>((y + 0.5) * sy));
      for (int x = 0; x < tw; ++x) {
        const int xx = std::min(w - 1, static_cast<int>((x + 0.5) * sx));
        dst[(static_cast<std::int64_t>(ch) * th + y) * tw + x] =
            src[(static_cast<std::int64_t>(ch) * h + yy) * w + xx];
      }
    }
  return dst;
}

inline Tensor<float> hflip_plane(const Tensor<float>& src) {
  const int c = src.dim(0), h = src.dim(1), w = src.dim(2);
  Tensor<float> dst({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        dst[(static_cast<std::int64_t>(ch) * h + y) * w + x] =
            src[(static_cast<std::int64_t>(ch) * h + y) * w + (w - 1 - x)];
  return dst;
}

inline Tensor<float> crop_plane(const Tensor<float>& src, int oy, int ox, int ch_, int cw_) {
  const int c = src.dim(0), h = src.dim(1), w = src.dim(2);
  (void)h;
  Tensor<float> dst({c, ch_, cw_});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < ch_; ++y)
      for (int x = 0; x < cw_; ++x)
        dst[(static_cast<std::int64_t>(ch) * ch_ + y) * cw_ + x] =
            src[(static_cast<std::int64_t>(ch) * src.dim(1) + (oy + y)) * w + (ox + x)];
  return dst;
}

inline void rebinarize_mask(Tensor<float>& mask) {
  for (std::int64_t i = 0; i < mask.numel(); ++i) mask[i] = mask[i] >= 0.5f ? 1.0f : 0.0f;
}

inline void clamp_depth(Tensor<float>& depth) {
  for (std::int64_t i = 0; i < depth.numel(); ++i) depth[i] = std::max(kDepthFloor, depth[i]);
}

}  // namespace detail

/// Plain resize to the target size (bilinear rgb/depth, nearest mask).
inline Sample resize_sample(const Sample& s, int th, int tw) {
  Sample out;
  out.id = s.id;
  out.rgb = detail::resize_bilinear_plane(s.rgb, th, tw);
  out.mask = detail::resize_nearest_plane(s.mask, th, tw);
  detail::rebinarize_mask(out.mask);
  if (s.depth) {
    auto d = detail::resize_bilinear_plane(*s.depth, th, tw);
    detail::clamp_depth(d);
    out.depth = std::move(d);
  }
  return out;
}

/// Deterministic augmentation. The same geometric transform is applied to rgb,
/// depth and mask; the output is always target-sized and the mask stays binary.
inline Sample augment(const Sample& s, const AugmentationConfig& cfg, std::uint64_t rng_seed) {
  validate_sample(s);
  check(cfg.horizontal_flip_prob >= 0.0 && cfg.horizontal_flip_prob <= 1.0,
        "augment: flip probability must be in [0,1]");
  check(cfg.crop_fraction_min > 0.0 && cfg.crop_fraction_min <= cfg.crop_fraction_max &&
            cfg.crop_fraction_max <= 1.0,
        "augment: bad crop fraction range");
  check(!cfg.multiscale_factors.empty(), "augment: no multiscale factors");

  std::mt19937_64 rng(rng_seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  // All draws happen unconditionally, in a fixed order.
  const double u_flip = u01(rng);
  const double frac =
      cfg.crop_fraction_min + (cfg.crop_fraction_max - cfg.crop_fraction_min) * u01(rng);
  const std::size_t scale_idx =
      std::min(cfg.multiscale_factors.size() - 1,
               static_cast<std::size_t>(u01(rng) * cfg.multiscale_factors.size()));
  const double u_oy = u01(rng);
  const double u_ox = u01(rng);
  const double scale = cfg.multiscale_factors[scale_idx];

  Sample cur = s;
  if (u_flip < cfg.horizontal_flip_prob) {
    cur.rgb = detail::hflip_plane(cur.rgb);
    cur.mask = detail::hflip_plane(cur.mask);
    if (cur.depth) cur.depth = detail::hflip_plane(*cur.depth);
  }

  const int h = cur.rgb.dim(1), w = cur.rgb.dim(2);
  const int crop_h = static_cast<int>(std::lround(h * frac));
  const int crop_w = static_cast<int>(std::lround(w * frac));
  check(crop_h >= 8 && crop_w >= 8, "augment: crop window " + std::to_string(crop_h) + "x" +
                                        std::to_string(crop_w) + " is smaller than 8 px");
  if (crop_h < h || crop_w < w) {
    const int oy = static_cast<int>(std::lround(u_oy * (h - crop_h)));
    const int ox = static_cast<int>(std::lround(u_ox * (w - crop_w)));
    cur.rgb = detail::crop_plane(cur.rgb, oy, ox, crop_h, crop_w);
    cur.mask = detail::crop_plane(cur.mask, oy, ox, crop_h, crop_w);
    if (cur.depth) cur.depth = detail::crop_plane(*cur.depth, oy, ox, crop_h, crop_w);
  }

  if (scale != 1.0) {
    const int ih = std::max(8, static_cast<int>(std::lround(cfg.target_height * scale)));
    const int iw = std::max(8, static_cast<int>(std::lround(cfg.target_width * scale)));
    cur.rgb = detail::resize_bilinear_plane(cur.rgb, ih, iw);
    cur.mask = detail::resize_nearest_plane(cur.mask, ih, iw);
    if (cur.depth) cur.depth = detail::resize_bilinear_plane(*cur.depth, ih, iw);
  }

  cur = resize_sample(cur, cfg.target_height, cfg.target_width);
  cur.id = s.id;
  return cur;
}

}  // namespace dasnet::data
