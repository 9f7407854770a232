#pragma once

#include <cstdint>
#include <vector>

#include "bers/errors.hpp"

namespace bers {

/// Single luminance frame, values in [0,1], row-major.
struct GrayFrame {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<double> intensity;

  GrayFrame() = default;
  GrayFrame(int64_t h, int64_t w) : height(h), width(w), intensity(h * w, 0.0) {}
  double& at(int64_t y, int64_t x) { return intensity[y * width + x]; }
  double at(int64_t y, int64_t x) const { return intensity[y * width + x]; }
};

/// T frames of H x W x 3 RGB, values in [0,1], frame-major then row-major
/// then channel (t,y,x,c).
struct VideoClip {
  int64_t frames = 0;
  int64_t height = 0;
  int64_t width = 0;
  std::vector<double> rgb;

  VideoClip() = default;
  VideoClip(int64_t t, int64_t h, int64_t w)
      : frames(t), height(h), width(w), rgb(t * h * w * 3, 0.0) {}
  double& at(int64_t t, int64_t y, int64_t x, int64_t c) {
    return rgb[((t * height + y) * width + x) * 3 + c];
  }
  double at(int64_t t, int64_t y, int64_t x, int64_t c) const {
    return rgb[((t * height + y) * width + x) * 3 + c];
  }
};

/// Rec.601 luma: 0.299 R + 0.587 G + 0.114 B.
GrayFrame luminance_frame(const VideoClip& clip, int64_t t);
std::vector<GrayFrame> luminance(const VideoClip& clip);

}  // namespace bers
