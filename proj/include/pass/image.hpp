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
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pass {

/// Height x width x channels image, row-major HWC, values nominally in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  double& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Integer pixel rectangle.
struct Rect {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;

  int bottom() const { return top + height; }
  int right() const { return left + width; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

/// Bilinear resampling of `rect` to out_h x out_w (half-pixel centers, edge clamp).
inline Image crop_resize(const Image& src, const Rect& rect, int out_h, int out_w) {
  if (rect.height <= 0 || rect.width <= 0 || rect.top < 0 || rect.left < 0 ||
      rect.bottom() > src.height || rect.right() > src.width)
    throw std::invalid_argument("crop_resize: rectangle outside image");
  Image out(out_h, out_w, src.channels);
  const double sy = static_cast<double>(rect.height) / out_h;
  const double sx = static_cast<double>(rect.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(rect.height - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, rect.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(rect.width - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, rect.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < src.channels; ++c) {
        const double a = src.at(rect.top + y0, rect.left + x0, c);
        const double b = src.at(rect.top + y0, rect.left + x1, c);
        const double d = src.at(rect.top + y1, rect.left + x0, c);
        const double e = src.at(rect.top + y1, rect.left + x1, c);
        out.at(y, x, c) = (1 - wy) * ((1 - wx) * a + wx * b) + wy * ((1 - wx) * d + wx * e);
      }
    }
  }
  return out;
}

inline Image resize(const Image& src, int out_h, int out_w) {
  return crop_resize(src, Rect{0, 0, src.height, src.width}, out_h, out_w);
}

inline void flip_horizontal(Image& img) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width / 2; ++x)
      for (int c = 0; c < img.channels; ++c) std::swap(img.at(y, x, c), img.at(y, img.width - 1 - x, c));
}

inline void to_grayscale(Image& img) {
  if (img.channels != 3) return;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double g = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = g;
    }
}

/// Writes an 8-bit binary PPM (3 channels) or PGM (1 channel).
inline void write_pnm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  const bool color = img.channels == 3;
  os << (color ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < (color ? 3 : 1); ++c) {
        const double v = std::clamp(img.at(y, x, c), 0.0, 1.0);
        os.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
      }
}

inline Image read_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  is.get();
  if ((magic != "P6" && magic != "P5") || w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error(path + ": unsupported PNM file");
  const int ch = magic == "P6" ? 3 : 1;
  Image img(h, w, ch);
  for (double& v : img.pixels) {
    const int b = is.get();
    if (b < 0) throw std::runtime_error(path + ": truncated PNM data");
    v = b / 255.0;
  }
  return img;
}

}  // namespace pass
