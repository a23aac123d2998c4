#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ctam/errors.hpp"
#include "ctam/tensor.hpp"

namespace ctam {

// One grayscale slice, row-major, intensities in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
  double at(int row, int col) const {
    return pixels[static_cast<std::size_t>(row) * width + col];
  }
  std::size_t size() const { return pixels.size(); }
};

// An ordered slice stack for one patient. Every slice shares one H and W.
struct Volume {
  std::string patient_id;
  std::vector<Image> slices;
};

inline void validate_volume(const Volume& volume) {
  detail::require(!volume.slices.empty(),
                  "volume '" + volume.patient_id + "': needs at least one slice");
  const int h = volume.slices.front().height;
  const int w = volume.slices.front().width;
  detail::require(h >= 1 && w >= 1, "volume '" + volume.patient_id + "': empty slice");
  for (std::size_t i = 0; i < volume.slices.size(); ++i) {
    const Image& s = volume.slices[i];
    detail::require(s.height == h && s.width == w,
                    "volume '" + volume.patient_id + "': slice " + std::to_string(i) + " is " +
                        std::to_string(s.height) + "x" + std::to_string(s.width) +
                        ", expected " + std::to_string(h) + "x" + std::to_string(w));
    detail::require(s.pixels.size() == static_cast<std::size_t>(h) * w,
                    "volume '" + volume.patient_id + "': slice " + std::to_string(i) +
                        " pixel count mismatch");
    for (double p : s.pixels)
      detail::require(p >= 0.0 && p <= 1.0, "volume '" + volume.patient_id + "': slice " +
                                                std::to_string(i) +
                                                " has pixel outside [0,1]");
  }
}

// Half-pixel-centered bilinear resampling.
inline Image resize_bilinear(const Image& src, int out_h, int out_w) {
  detail::require(src.height >= 1 && src.width >= 1, "resize_bilinear: empty source image");
  detail::require(out_h >= 1 && out_w >= 1, "resize_bilinear: target dimensions must be >= 1");
  if (src.height == out_h && src.width == out_w) return src;

  Image out(out_h, out_w);
  const double sy = static_cast<double>(src.height) / out_h;
  const double sx = static_cast<double>(src.width) / out_w;
  for (int r = 0; r < out_h; ++r) {
    double fy = (r + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int c = 0; c < out_w; ++c) {
      double fx = (c + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      const double top = src.at(y0, x0) * (1.0 - wx) + src.at(y0, x1) * wx;
      const double bot = src.at(y1, x0) * (1.0 - wx) + src.at(y1, x1) * wx;
      out.at(r, c) = top * (1.0 - wy) + bot * wy;
    }
  }
  return out;
}

inline Tensor image_to_tensor(const Image& img) {
  return Tensor::from_data({img.height, img.width, 1}, img.pixels);
}

}  // namespace ctam
