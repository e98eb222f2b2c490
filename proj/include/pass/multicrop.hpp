// Copyright 2026 The pass-reid Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pass/image.hpp"
#include "pass/params.hpp"
#include "pass/vit.hpp"

namespace pass {

/// Horizontal band of the image, as fractions of its height (full width).
struct AreaSpec {
  double top_frac = 0.0;
  double bottom_frac = 1.0;
  double height() const { return bottom_frac - top_frac; }
  friend bool operator==(const AreaSpec&, const AreaSpec&) = default;
};

/// L equal-height, uniformly spaced, overlapping areas covering the image.
/// Heights: 1.0 (L=1), 0.70 (L=2), 0.50 (L=3), 2/(L+1) otherwise.
inline std::vector<AreaSpec> define_areas(int num_parts) {
  if (num_parts < 1 || num_parts > 5)
    throw std::invalid_argument("define_areas: L=" + std::to_string(num_parts) + " unsupported (1..5)");
  if (num_parts == 1) return {AreaSpec{0.0, 1.0}};
  double h = 2.0 / (num_parts + 1);
  if (num_parts == 2) h = 0.70;
  const double step = (1.0 - h) / (num_parts - 1);
  std::vector<AreaSpec> areas;
  for (int i = 0; i < num_parts; ++i) {
    const double top = i * step;
    areas.push_back(AreaSpec{top, i == num_parts - 1 ? 1.0 : top + h});
  }
  return areas;
}

/// J = ceil(9 / L).
inline int views_per_area(int num_parts) {
  if (num_parts < 1) throw std::invalid_argument("views_per_area: L must be >= 1");
  return (9 + num_parts - 1) / num_parts;
}

struct MultiCropConfig {
  int num_globals = 2;
  int num_parts = 3;
  int locals_per_area = 0;  // 0: derived as ceil(9 / L)
  int global_height = 64;
  int global_width = 32;
  int local_height = 24;
  int local_width = 12;
  double global_scale_min = 0.4;
  double global_scale_max = 1.0;
  double global_aspect_max = 4.0 / 3.0;  // log-uniform in [1/a, a]
  double local_scale_min = 0.05;
  double local_scale_max = 0.40;
  double local_stretch_max = 4.0 / 3.0;  // crop height / (scale * H), uniform in [1, s]
  double flip_prob = 0.5;
  double brightness = 0.2;
  double contrast = 0.2;
  double grayscale_prob = 0.0;
  double global_solarize_prob = 0.0;
  double local_solarize_prob = 0.0;
  double global_blur_prob = 0.0;
  double local_blur_prob = 0.0;

  int locals() const { return locals_per_area > 0 ? locals_per_area : views_per_area(num_parts); }
  int total_views() const { return num_globals + num_parts * locals(); }
};

/// How one view is produced from the source image.
struct ViewPlan {
  int area = 0;  // 0 for a global view, else 1-based local area
  Rect source;
  int target_height = 0;
  int target_width = 0;
  bool flip = false;
  double brightness = 1.0;
  double contrast = 1.0;
  bool grayscale = false;
  bool solarize = false;
  bool blur = false;
  friend bool operator==(const ViewPlan&, const ViewPlan&) = default;
};

struct CropPlan {
  std::uint64_t seed = 0;
  std::vector<ViewPlan> views;  // globals first, then area 1..L, J each
  friend bool operator==(const CropPlan&, const CropPlan&) = default;
};

/// Global crop rectangle for a given area fraction and log aspect ratio;
/// u, v in [0, 1) place it.
inline Rect plan_global_rect(int H, int W, double scale, double log_aspect, double u, double v) {
  if (H <= 0 || W <= 0) throw std::invalid_argument("plan_global_rect: degenerate image");
  const double r = std::exp(log_aspect);
  const int h = std::clamp(static_cast<int>(std::lround(std::sqrt(scale * r) * H)), 1, H);
  const int w = std::clamp(static_cast<int>(std::lround(std::sqrt(scale / r) * W)), 1, W);
  const int top = std::min(static_cast<int>(u * (H - h + 1)), H - h);
  const int left = std::min(static_cast<int>(v * (W - w + 1)), W - w);
  return Rect{top, left, h, w};
}

/// Local crop rectangle inside `area` covering `scale` of the image, with
/// height stretched by `stretch` (>= 1). Width stays full unless the
/// `max_scale` area cap forces it to shrink.
inline Rect plan_local_rect(int H, int W, const AreaSpec& area, double scale, double stretch, double u,
                            double v, double min_scale = 0.05, double max_scale = 0.40) {
  if (H <= 0 || W <= 0) throw std::invalid_argument("plan_local_rect: degenerate image");
  if (!(area.top_frac >= 0.0 && area.top_frac < area.bottom_frac && area.bottom_frac <= 1.0))
    throw std::invalid_argument("plan_local_rect: invalid area");
  const int a_top = static_cast<int>(std::ceil(area.top_frac * H - 1e-9));
  const int a_bot = static_cast<int>(std::floor(area.bottom_frac * H + 1e-9));
  const int area_h = a_bot - a_top;
  if (area_h < 1 || static_cast<double>(area_h) * W < min_scale * H * W)
    throw std::invalid_argument("plan_local_rect: area too small for the minimum crop");
  const double pixels = scale * H * W;
  const int h = std::clamp(static_cast<int>(std::lround(scale * stretch * H)), 1, area_h);
  int w = std::min(W, static_cast<int>(std::lround(pixels / h)));
  const double cap = max_scale * H * W;
  if (static_cast<double>(w) * h > cap) w = static_cast<int>(std::floor(cap / h));
  if (w < 1) throw std::invalid_argument("plan_local_rect: crop too small");
  const int top = a_top + std::min(static_cast<int>(u * (area_h - h + 1)), area_h - h);
  const int left = std::min(static_cast<int>(v * (W - w + 1)), W - w);
  return Rect{top, left, h, w};
}

namespace detail {

inline void draw_photometric(ViewPlan& plan, const MultiCropConfig& cfg, Rng& rng, bool global) {
  plan.flip = uniform01(rng) < cfg.flip_prob;
  plan.brightness = uniform(rng, 1.0 - cfg.brightness, 1.0 + cfg.brightness);
  plan.contrast = uniform(rng, 1.0 - cfg.contrast, 1.0 + cfg.contrast);
  plan.grayscale = uniform01(rng) < cfg.grayscale_prob;
  plan.solarize = uniform01(rng) < (global ? cfg.global_solarize_prob : cfg.local_solarize_prob);
  plan.blur = uniform01(rng) < (global ? cfg.global_blur_prob : cfg.local_blur_prob);
}

inline void box_blur(Image& img) {
  const Image src = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0, wsum = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= img.height || xx < 0 || xx >= img.width) continue;
            const double w = (dy == 0 ? 2.0 : 1.0) * (dx == 0 ? 2.0 : 1.0);
            acc += w * src.at(yy, xx, c);
            wsum += w;
          }
        img.at(y, x, c) = acc / wsum;
      }
}

}  // namespace detail

/// Renders one planned view.
inline Image apply_plan(const Image& image, const ViewPlan& plan) {
  Image out = crop_resize(image, plan.source, plan.target_height, plan.target_width);
  if (plan.flip) flip_horizontal(out);
  double mean = 0.0;
  for (double v : out.pixels) mean += v;
  mean /= static_cast<double>(out.pixels.size());
  for (double& v : out.pixels) v = std::clamp(mean + (v * plan.brightness - mean) * plan.contrast, 0.0, 1.0);
  if (plan.grayscale) to_grayscale(out);
  if (plan.solarize)
    for (double& v : out.pixels) v = v >= 0.5 ? 1.0 - v : v;
  if (plan.blur) detail::box_blur(out);
  return out;
}

struct SampledView {
  Image image;
  ViewPlan plan;
};

inline ViewPlan plan_global(int H, int W, const MultiCropConfig& cfg, Rng& rng) {
  if (H < 1 || W < 1) throw std::invalid_argument("sample_global: degenerate image");
  ViewPlan p;
  const double s = uniform(rng, cfg.global_scale_min, cfg.global_scale_max);
  const double la = std::log(cfg.global_aspect_max);
  const double r = uniform(rng, -la, la);
  const double u = uniform01(rng), v = uniform01(rng);
  p.source = plan_global_rect(H, W, s, r, u, v);
  p.target_height = cfg.global_height;
  p.target_width = cfg.global_width;
  detail::draw_photometric(p, cfg, rng, true);
  return p;
}

inline ViewPlan plan_local(int H, int W, const AreaSpec& area, int area_index, const MultiCropConfig& cfg,
                           Rng& rng) {
  ViewPlan p;
  p.area = area_index;
  const double s = uniform(rng, cfg.local_scale_min, cfg.local_scale_max);
  const double st = uniform(rng, 1.0, cfg.local_stretch_max);
  const double u = uniform01(rng), v = uniform01(rng);
  p.source = plan_local_rect(H, W, area, s, st, u, v, cfg.local_scale_min, cfg.local_scale_max);
  p.target_height = cfg.local_height;
  p.target_width = cfg.local_width;
  detail::draw_photometric(p, cfg, rng, false);
  return p;
}

inline SampledView sample_global(const Image& image, const MultiCropConfig& cfg, Rng& rng) {
  ViewPlan p = plan_global(image.height, image.width, cfg, rng);
  return SampledView{apply_plan(image, p), p};
}

inline SampledView sample_local(const Image& image, const AreaSpec& area, int area_index,
                                const MultiCropConfig& cfg, Rng& rng) {
  ViewPlan p = plan_local(image.height, image.width, area, area_index, cfg, rng);
  return SampledView{apply_plan(image, p), p};
}

/// One image's global and local views with their token layouts.
struct ViewSet {
  std::vector<Image> globals;
  std::vector<Image> locals;
  std::vector<int> local_area;  // 1-based area per local view
  std::vector<TokenLayout> global_layouts;
  std::vector<TokenLayout> local_layouts;
  CropPlan plan;

  std::size_t size() const { return globals.size() + locals.size(); }
};

inline CropPlan plan_view_set(int H, int W, const MultiCropConfig& cfg, std::uint64_t seed) {
  if (cfg.num_globals < 1) throw std::invalid_argument("build_view_set: need at least one global view");
  const auto areas = define_areas(cfg.num_parts);
  Rng rng(seed);
  CropPlan plan;
  plan.seed = seed;
  for (int m = 0; m < cfg.num_globals; ++m) plan.views.push_back(plan_global(H, W, cfg, rng));
  for (int i = 1; i <= cfg.num_parts; ++i)
    for (int j = 0; j < cfg.locals(); ++j)
      plan.views.push_back(plan_local(H, W, areas[static_cast<std::size_t>(i - 1)], i, cfg, rng));
  return plan;
}

inline ViewSet render_view_set(const Image& image, const MultiCropConfig& cfg, const CropPlan& plan) {
  ViewSet vs;
  vs.plan = plan;
  for (const ViewPlan& p : plan.views) {
    if (p.area == 0) {
      vs.globals.push_back(apply_plan(image, p));
      vs.global_layouts.push_back(TokenLayout::global(cfg.num_parts));
    } else {
      vs.locals.push_back(apply_plan(image, p));
      vs.local_area.push_back(p.area);
      vs.local_layouts.push_back(TokenLayout::local(p.area));
    }
  }
  return vs;
}

/// M globals plus J locals from each of the L areas; a pure function of its inputs.
inline ViewSet build_view_set(const Image& image, const MultiCropConfig& cfg, std::uint64_t seed) {
  return render_view_set(image, cfg, plan_view_set(image.height, image.width, cfg, seed));
}

inline std::string to_text(const CropPlan& plan) {
  std::ostringstream os;
  os << "cropplan seed=" << plan.seed << " views=" << plan.views.size() << '\n';
  char buf[512];
  for (const ViewPlan& v : plan.views) {
    std::snprintf(buf, sizeof buf,
                  "view area=%d rect=%d,%d,%d,%d size=%dx%d flip=%d brightness=%.17g contrast=%.17g "
                  "gray=%d solarize=%d blur=%d\n",
                  v.area, v.source.top, v.source.left, v.source.height, v.source.width, v.target_height,
                  v.target_width, v.flip ? 1 : 0, v.brightness, v.contrast, v.grayscale ? 1 : 0,
                  v.solarize ? 1 : 0, v.blur ? 1 : 0);
    os << buf;
  }
  return os.str();
}

inline CropPlan crop_plan_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  CropPlan plan;
  std::size_t expected = 0;
  if (!std::getline(is, line) ||
      std::sscanf(line.c_str(), "cropplan seed=%" SCNu64 " views=%zu", &plan.seed, &expected) != 2)
    throw std::runtime_error("crop plan: bad header");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    ViewPlan v;
    int flip = 0, gray = 0, sol = 0, blur = 0;
    if (std::sscanf(line.c_str(),
                    "view area=%d rect=%d,%d,%d,%d size=%dx%d flip=%d brightness=%lf contrast=%lf gray=%d "
                    "solarize=%d blur=%d",
                    &v.area, &v.source.top, &v.source.left, &v.source.height, &v.source.width,
                    &v.target_height, &v.target_width, &flip, &v.brightness, &v.contrast, &gray, &sol,
                    &blur) != 13)
      throw std::runtime_error("crop plan: bad view line '" + line + "'");
    v.flip = flip;
    v.grayscale = gray;
    v.solarize = sol;
    v.blur = blur;
    plan.views.push_back(v);
  }
  if (plan.views.size() != expected) throw std::runtime_error("crop plan: view count mismatch");
  return plan;
}

}  // namespace pass
