#include "protoseg/resample.hpp"

#include <algorithm>
#include <cmath>

namespace protoseg {

namespace {

struct Tap {
  int lo;
  int hi;
  double frac;
};

std::vector<Tap> make_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double x = (i + 0.5) * scale - 0.5;
    x = std::clamp(x, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(x));
    const int hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(i)] = {lo, hi, x - lo};
  }
  return taps;
}

}  // namespace

std::vector<double> resize_bilinear(std::span<const double> src, ImageSize from, ImageSize to) {
  if (from.height < 1 || from.width < 1 || to.height < 1 || to.width < 1) {
    throw Error("resize: sizes must be positive");
  }
  if (src.size() != static_cast<std::size_t>(from.height) * from.width) {
    throw Error("resize: source length does not match its size");
  }
  const auto rows = make_taps(from.height, to.height);
  const auto cols = make_taps(from.width, to.width);
  std::vector<double> out(static_cast<std::size_t>(to.height) * to.width);
  for (int y = 0; y < to.height; ++y) {
    const auto& ry = rows[static_cast<std::size_t>(y)];
    const double* top = src.data() + static_cast<std::size_t>(ry.lo) * from.width;
    const double* bottom = src.data() + static_cast<std::size_t>(ry.hi) * from.width;
    double* dst = out.data() + static_cast<std::size_t>(y) * to.width;
    for (int x = 0; x < to.width; ++x) {
      const auto& cx = cols[static_cast<std::size_t>(x)];
      const double t = std::lerp(top[cx.lo], top[cx.hi], cx.frac);
      const double b = std::lerp(bottom[cx.lo], bottom[cx.hi], cx.frac);
      dst[x] = std::lerp(t, b, ry.frac);
    }
  }
  return out;
}

ClassMask resize_nearest(const ClassMask& mask, ImageSize to) {
  if (to.height < 1 || to.width < 1) {
    throw Error("resize: sizes must be positive");
  }
  auto index = [](int i, int in, int out) {
    const int v = static_cast<int>(std::floor((i + 0.5) * in / out));
    return std::min(v, in - 1);
  };
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(to.height) * to.width);
  for (int y = 0; y < to.height; ++y) {
    const int sy = index(y, mask.height(), to.height);
    for (int x = 0; x < to.width; ++x) {
      labels[static_cast<std::size_t>(y) * to.width + x] = mask.at(sy, index(x, mask.width(), to.width));
    }
  }
  return ClassMask(to.height, to.width, std::move(labels));
}

}  // namespace protoseg
