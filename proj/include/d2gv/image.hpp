#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace d2gv {

/// Row-major H x W x 3 linear-RGB pixel grid.
template <typename Scalar = float>
struct Image {
  int width = 0;
  int height = 0;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> pixels;

  Image() = default;
  Image(int w, int h) : width(w), height(h), pixels(Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(3 * w * h)) {
    if (w <= 0 || h <= 0) {
      throw std::invalid_argument("image dimensions must be positive, got " + std::to_string(w) + "x" +
                                  std::to_string(h));
    }
  }

  static Image constant(int w, int h, Scalar r, Scalar g, Scalar b) {
    Image img(w, h);
    for (int i = 0; i < w * h; ++i) {
      img.pixels[3 * i] = r;
      img.pixels[3 * i + 1] = g;
      img.pixels[3 * i + 2] = b;
    }
    return img;
  }

  Scalar& at(int x, int y, int ch) { return pixels[3 * (y * width + x) + ch]; }
  Scalar at(int x, int y, int ch) const { return pixels[3 * (y * width + x) + ch]; }

  bool same_shape(const Image& o) const { return width == o.width && height == o.height; }

  template <typename Other>
  Image<Other> cast() const {
    Image<Other> out;
    out.width = width;
    out.height = height;
    out.pixels = pixels.template cast<Other>();
    return out;
  }
};

using ImageBuffer = Image<float>;
using ImageD = Image<double>;

template <typename Scalar>
void require_same_shape(const Image<Scalar>& a, const Image<Scalar>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": image shape mismatch (" + std::to_string(a.width) + "x" +
                                std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                std::to_string(b.height) + ")");
  }
}

inline double srgb_to_linear(double v) {
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

inline double linear_to_srgb(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return v <= 0.0031308 ? v * 12.92 : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

/// Linear value -> clamped 8-bit sRGB code.
inline int encode_srgb8(double linear) {
  return static_cast<int>(std::lround(linear_to_srgb(linear) * 255.0));
}

/// Output size for rendering a full-resolution extent at downsample factor r.
inline int scaled_extent(int full, double r) {
  return static_cast<int>(std::ceil(static_cast<double>(full) / r - 1e-9));
}

/// Box (area) downsampling by factor r >= 1. Output pixel p averages the
/// full-resolution area [p*r, (p+1)*r) with fractional coverage weights,
/// clipped to the image.
template <typename Scalar>
Image<Scalar> area_downsample(const Image<Scalar>& src, double r) {
  if (r < 1.0) throw std::invalid_argument("area_downsample: factor must be >= 1");
  const int ow = scaled_extent(src.width, r);
  const int oh = scaled_extent(src.height, r);
  Image<Scalar> out(ow, oh);
  auto overlap = [](double lo, double hi, int px) {
    return std::max(0.0, std::min(hi, px + 1.0) - std::max(lo, static_cast<double>(px)));
  };
  for (int oy = 0; oy < oh; ++oy) {
    const double y0 = oy * r;
    const double y1 = std::min((oy + 1) * r, static_cast<double>(src.height));
    for (int ox = 0; ox < ow; ++ox) {
      const double x0 = ox * r;
      const double x1 = std::min((ox + 1) * r, static_cast<double>(src.width));
      double acc[3] = {0, 0, 0};
      double wsum = 0;
      for (int y = static_cast<int>(y0); y < static_cast<int>(std::ceil(y1)); ++y) {
        const double wy = overlap(y0, y1, y);
        if (wy <= 0) continue;
        for (int x = static_cast<int>(x0); x < static_cast<int>(std::ceil(x1)); ++x) {
          const double w = wy * overlap(x0, x1, x);
          if (w <= 0) continue;
          wsum += w;
          for (int ch = 0; ch < 3; ++ch) acc[ch] += w * src.at(x, y, ch);
        }
      }
      for (int ch = 0; ch < 3; ++ch) out.at(ox, oy, ch) = static_cast<Scalar>(acc[ch] / wsum);
    }
  }
  return out;
}

}  // namespace d2gv
