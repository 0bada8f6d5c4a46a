#pragma once

#include <cmath>
#include <vector>

#include "d2gv/image.hpp"

namespace d2gv::testing {

/// Soft blobs over a smooth background; two are narrower than the scale-2
/// footprint threshold. Blobs translate and change color linearly in
/// normalized time t in [0, 1].
inline ImageD blob_frame(int w, int h, double t) {
  struct Blob {
    double x0, y0, vx, vy, sx, sy, c0[3], c1[3];
  };
  const Blob blobs[] = {
      {0.25, 0.30, 0.30, 0.10, 0.09, 0.06, {0.9, 0.2, 0.1}, {0.6, 0.5, 0.1}},
      {0.70, 0.65, -0.25, -0.05, 0.07, 0.11, {0.1, 0.3, 0.9}, {0.2, 0.8, 0.6}},
      {0.50, 0.80, 0.05, -0.35, 0.06, 0.06, {0.8, 0.8, 0.2}, {0.9, 0.3, 0.7}},
      // fine detail below the scale-2 Nyquist footprint
      {0.15, 0.75, 0.20, -0.10, 0.019, 0.019, {0.9, 0.9, 0.9}, {0.3, 0.9, 0.3}},
      {0.80, 0.20, -0.15, 0.20, 0.019, 0.025, {0.7, 0.1, 0.8}, {0.9, 0.6, 0.2}},
  };
  ImageD img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double u = (x + 0.5) / w, v = (y + 0.5) / h;
      double rgb[3] = {0.15 + 0.10 * u, 0.12 + 0.08 * v, 0.20 + 0.05 * (u + v)};
      for (const auto& b : blobs) {
        const double dx = (u - b.x0 - b.vx * t) / b.sx;
        const double dy = (v - b.y0 - b.vy * t) / b.sy;
        const double k = std::exp(-0.5 * (dx * dx + dy * dy));
        for (int c = 0; c < 3; ++c) rgb[c] += k * ((1 - t) * b.c0[c] + t * b.c1[c]);
      }
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = rgb[c];
    }
  }
  return img;
}

/// Frames at t = k / (count - 1).
inline std::vector<ImageD> blob_video(int w, int h, int count) {
  std::vector<ImageD> frames;
  for (int k = 0; k < count; ++k) frames.push_back(blob_frame(w, h, count > 1 ? double(k) / (count - 1) : 0.0));
  return frames;
}

}  // namespace d2gv::testing
