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

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pass/image.hpp"
#include "pass/multicrop.hpp"
#include "pass/params.hpp"

namespace pass {

/// Toy "person" generator: three horizontal bands (a narrow head, a full
/// torso, two legs) whose colors and textures identify the person, on a
/// noisy background.
struct SyntheticSpec {
  int num_identities = 20;
  int images_per_identity = 16;
  int cameras = 4;
  int identity_offset = 0;  // draws identities [offset, offset + num_identities)
  int height = 64;
  int width = 32;
  std::array<double, 2> band_fractions{0.30, 0.65};
  int palette_levels = 3;            // per channel; palette has levels^3 colors
  double texture_strength = 0.12;
  double noise = 0.04;
  double background_jitter = 0.3;    // per-image background channels drawn from 0.5 +- jitter
  double camera_brightness = 0.15;   // brightness spread across cameras
  double camera_hue = 0.15;          // channel-mixing spread across cameras
  double min_person_width = 0.60;    // fraction of image width
  double max_person_width = 0.90;
  double head_width = 0.55;          // head band width as a fraction of the person width
  double leg_gap = 0.20;             // gap between the legs as a fraction of the person width
  double occlusion_prob = 0.0;
  double occlusion_size = 0.35;      // max box side as a fraction of each image side

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("synthetic spec: " + m); };
    if (num_identities < 1 || images_per_identity < 1 || cameras < 1) fail("counts must be positive");
    if (identity_offset < 0) fail("identity_offset must be >= 0");
    if (height < 8 || width < 4) fail("image too small");
    if (!(0 < band_fractions[0] && band_fractions[0] < band_fractions[1] && band_fractions[1] < 1))
      fail("band fractions must satisfy 0 < f1 < f2 < 1");
    if (palette_levels < 2) fail("palette_levels must be >= 2");
    const long long triples = static_cast<long long>(std::pow(palette_levels, 9));
    if (identity_offset + num_identities > triples) fail("palette too small for distinct identities");
    if (noise < 0 || texture_strength < 0) fail("noise and texture_strength must be >= 0");
    if (background_jitter < 0 || background_jitter > 0.5) fail("background_jitter must be in [0,0.5]");
    if (!(0 < min_person_width && min_person_width <= max_person_width && max_person_width <= 1))
      fail("person width fractions must satisfy 0 < min <= max <= 1");
    if (!(0 < head_width && head_width <= 1)) fail("head_width must be in (0,1]");
    if (leg_gap < 0 || leg_gap >= 1) fail("leg_gap must be in [0,1)");
    if (occlusion_prob < 0 || occlusion_prob > 1) fail("occlusion_prob must be in [0,1]");
  }
};

/// Band b (0 head, 1 torso, 2 legs) occupies rows [first, second).
inline std::array<std::pair<int, int>, 3> band_rows(const SyntheticSpec& spec) {
  const int r1 = static_cast<int>(std::lround(spec.band_fractions[0] * spec.height));
  const int r2 = static_cast<int>(std::lround(spec.band_fractions[1] * spec.height));
  return {{{0, r1}, {r1, r2}, {r2, spec.height}}};
}

struct IdentityLook {
  std::array<std::array<double, 3>, 3> colors{};  // per band RGB
  std::array<int, 3> texture{};                    // 0 solid, 1 vertical, 2 horizontal, 3 checker
  std::array<int, 3> period{};
};

/// Identity looks are a pure function of (seed, identity). Color triples are
/// drawn without replacement from the palette, so two identities always
/// differ in at least one band color.
inline IdentityLook identity_look(const SyntheticSpec& spec, std::uint64_t seed, int identity) {
  const int lv = spec.palette_levels;
  const std::size_t colors = static_cast<std::size_t>(lv) * lv * lv;
  const std::size_t triples = colors * colors * colors;
  // Affine bijection on [0, triples): identity -> triple index.
  Rng rng(mix_seed(seed, 0x5eed));
  std::size_t mult = 1 + 2 * (rng() % (triples / 2));
  while (std::gcd(mult, triples) != 1) mult += 2;
  const std::size_t shift = rng() % triples;
  std::size_t code = (static_cast<std::size_t>(identity) * mult + shift) % triples;
  IdentityLook look;
  for (int b = 0; b < 3; ++b) {
    std::size_t c = code % colors;
    code /= colors;
    for (int ch = 0; ch < 3; ++ch) {
      look.colors[static_cast<std::size_t>(b)][static_cast<std::size_t>(ch)] =
          0.15 + 0.7 * static_cast<double>(c % static_cast<std::size_t>(lv)) / (lv - 1);
      c /= static_cast<std::size_t>(lv);
    }
  }
  Rng trng(mix_seed(seed, 0x7e77u + static_cast<std::uint64_t>(identity)));
  for (std::size_t b = 0; b < 3; ++b) {
    look.texture[b] = static_cast<int>(trng() % 4);
    look.period[b] = 2 + static_cast<int>(trng() % 3);
  }
  return look;
}

/// Fixed per-camera photometric shift: brightness gain and channel mixing.
inline std::array<double, 3> apply_camera(const SyntheticSpec& spec, int camera, std::array<double, 3> rgb) {
  const double t = spec.cameras > 1 ? 2.0 * camera / (spec.cameras - 1) - 1.0 : 0.0;
  const double gain = 1.0 + spec.camera_brightness * t;
  const double h = spec.camera_hue * std::abs(t);
  const std::array<double, 3> rolled = t >= 0 ? std::array<double, 3>{rgb[1], rgb[2], rgb[0]}
                                              : std::array<double, 3>{rgb[2], rgb[0], rgb[1]};
  for (int c = 0; c < 3; ++c) rgb[c] = gain * ((1 - h) * rgb[c] + h * rolled[c]);
  return rgb;
}

struct SyntheticSet {
  SyntheticSpec spec;
  std::vector<Image> images;
  std::vector<Image> masks;  // 1 channel; band b+1 stored as (b+1)/3, background 0
  std::vector<int> identities;
  std::vector<int> cameras;
  std::vector<std::string> image_ids;

  std::size_t size() const { return images.size(); }
};

inline int mask_band(const Image& mask, int y, int x) {
  return static_cast<int>(std::lround(mask.at(y, x, 0) * 3.0));
}

namespace detail {

inline double quantize8(double v) { return std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

inline double texture_value(int kind, int period, int y, int x) {
  switch (kind) {
    case 1: return (x / period) % 2 ? 1.0 : -1.0;
    case 2: return (y / period) % 2 ? 1.0 : -1.0;
    case 3: return ((x / period) + (y / period)) % 2 ? 1.0 : -1.0;
    default: return 0.0;
  }
}

}  // namespace detail

/// Renders image k of an identity. Pure function of (spec, seed, identity, k).
inline void render_person(const SyntheticSpec& spec, std::uint64_t seed, int identity, int k, Image& img,
                          Image& mask) {
  const int H = spec.height, W = spec.width;
  const int camera = k % spec.cameras;
  img = Image(H, W, 3);
  mask = Image(H, W, 1);
  Rng rng(mix_seed(seed, (static_cast<std::uint64_t>(identity) << 20) + static_cast<std::uint64_t>(k) + 1));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const IdentityLook look = identity_look(spec, seed, identity);
  const auto bands = band_rows(spec);

  const double bg_lo = 0.5 - spec.background_jitter, bg_hi = 0.5 + spec.background_jitter;
  std::array<double, 3> bg{uniform(rng, bg_lo, bg_hi), uniform(rng, bg_lo, bg_hi), uniform(rng, bg_lo, bg_hi)};
  const double frac = uniform(rng, spec.min_person_width, spec.max_person_width);
  const int pw = std::clamp(static_cast<int>(std::lround(frac * W)), 1, W);
  const int left = static_cast<int>(uniform01(rng) * (W - pw + 1));
  const int phase_x = static_cast<int>(rng() % 4), phase_y = static_cast<int>(rng() % 4);
  const double mid = left + pw / 2.0;
  const double head_half = spec.head_width * pw / 2.0, gap_half = spec.leg_gap * pw / 2.0;
  auto inside = [&](int band, int x) {
    const double cx = x + 0.5;
    if (x < left || x >= left + pw) return false;
    if (band == 0) return std::abs(cx - mid) <= head_half;
    if (band == 2) return std::abs(cx - mid) >= gap_half;
    return true;
  };

  for (int y = 0; y < H; ++y) {
    int band = 0;
    while (band < 2 && y >= bands[static_cast<std::size_t>(band)].second) ++band;
    for (int x = 0; x < W; ++x) {
      std::array<double, 3> rgb;
      if (inside(band, x)) {
        const auto b = static_cast<std::size_t>(band);
        const double tex = spec.texture_strength *
                           detail::texture_value(look.texture[b], look.period[b], y + phase_y, x - left + phase_x);
        for (int c = 0; c < 3; ++c) rgb[static_cast<std::size_t>(c)] = look.colors[b][static_cast<std::size_t>(c)] + tex;
        mask.at(y, x, 0) = (band + 1) / 3.0;
      } else {
        rgb = bg;
      }
      rgb = apply_camera(spec, camera, rgb);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[static_cast<std::size_t>(c)] + spec.noise * gauss(rng);
    }
  }
  if (spec.occlusion_prob > 0 && uniform01(rng) < spec.occlusion_prob) {
    const int oh = std::max(1, static_cast<int>(uniform(rng, 0.1, spec.occlusion_size) * H));
    const int ow = std::max(1, static_cast<int>(uniform(rng, 0.1, spec.occlusion_size) * W));
    const int oy = static_cast<int>(uniform01(rng) * (H - oh + 1));
    const int ox = static_cast<int>(uniform01(rng) * (W - ow + 1));
    const std::array<double, 3> oc{uniform01(rng), uniform01(rng), uniform01(rng)};
    for (int y = oy; y < oy + oh; ++y)
      for (int x = ox; x < ox + ow; ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = oc[static_cast<std::size_t>(c)];
  }
  for (double& v : img.pixels) v = detail::quantize8(v);
}

inline std::string synthetic_image_id(int identity, int camera, int k) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "id%04d_c%d_%03d", identity, camera, k);
  return buf;
}

/// Generates the whole set; pixels are 8-bit quantized so a disk round trip
/// is lossless.
inline SyntheticSet generate(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  SyntheticSet set;
  set.spec = spec;
  const std::size_t n = static_cast<std::size_t>(spec.num_identities) * spec.images_per_identity;
  set.images.resize(n);
  set.masks.resize(n);
  for (int i = 0; i < spec.num_identities; ++i) {
    const int identity = spec.identity_offset + i;
    for (int k = 0; k < spec.images_per_identity; ++k) {
      const std::size_t idx = static_cast<std::size_t>(i) * spec.images_per_identity + k;
      render_person(spec, seed, identity, k, set.images[idx], set.masks[idx]);
      set.identities.push_back(identity);
      set.cameras.push_back(k % spec.cameras);
      set.image_ids.push_back(synthetic_image_id(identity, k % spec.cameras, k));
    }
  }
  return set;
}

/// Query = first image of every (identity, camera) pair; gallery = the rest.
struct QueryGallerySplit {
  std::vector<std::size_t> query;
  std::vector<std::size_t> gallery;
};

inline QueryGallerySplit split_query_gallery(const std::vector<int>& identities, const std::vector<int>& cameras) {
  QueryGallerySplit s;
  std::vector<std::pair<int, int>> seen;
  for (std::size_t i = 0; i < identities.size(); ++i) {
    const std::pair<int, int> key{identities[i], cameras[i]};
    if (std::find(seen.begin(), seen.end(), key) == seen.end()) {
      seen.push_back(key);
      s.query.push_back(i);
    } else {
      s.gallery.push_back(i);
    }
  }
  return s;
}

/// Writes images/<id>.ppm, masks/<id>.pgm and manifest.csv
/// (image_id,identity,camera,path,mask_path; paths relative to `dir`).
inline void write_dataset(const std::filesystem::path& dir, const SyntheticSet& set) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  std::ofstream os(dir / "manifest.csv");
  if (!os) throw std::runtime_error("cannot write " + (dir / "manifest.csv").string());
  os << "image_id,identity,camera,path,mask_path\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    const std::string img = "images/" + set.image_ids[i] + ".ppm";
    const std::string msk = "masks/" + set.image_ids[i] + ".pgm";
    write_pnm((dir / img).string(), set.images[i]);
    write_pnm((dir / msk).string(), set.masks[i]);
    os << set.image_ids[i] << ',' << set.identities[i] << ',' << set.cameras[i] << ',' << img << ',' << msk << '\n';
  }
}

/// Reads a manifest written by write_dataset (or any file with the same
/// columns). The spec is left default apart from image size.
inline SyntheticSet read_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.csv");
  if (!is) throw std::runtime_error("cannot read " + (dir / "manifest.csv").string());
  SyntheticSet set;
  std::string line;
  std::getline(is, line);
  if (line.rfind("image_id,identity,camera,path", 0) != 0)
    throw std::runtime_error((dir / "manifest.csv").string() + ": unexpected header");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string tok; std::getline(ls, tok, ',');) f.push_back(tok);
    if (f.size() < 4) throw std::runtime_error("manifest: malformed line '" + line + "'");
    set.image_ids.push_back(f[0]);
    set.identities.push_back(std::stoi(f[1]));
    set.cameras.push_back(std::stoi(f[2]));
    set.images.push_back(read_pnm((dir / f[3]).string()));
    if (f.size() > 4 && !f[4].empty()) set.masks.push_back(read_pnm((dir / f[4]).string()));
  }
  if (!set.images.empty()) {
    set.spec.height = set.images.front().height;
    set.spec.width = set.images.front().width;
  }
  return set;
}

}  // namespace pass
