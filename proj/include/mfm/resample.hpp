#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mfm/common.hpp"
#include "mfm/grid.hpp"

namespace mfm {

// Catmull-Rom cubic (bicubic with a = -0.5), support [-2, 2].
inline double catmull_rom(double t) {
  t = std::fabs(t);
  if (t <= 1.0) return ((1.5 * t - 2.5) * t) * t + 1.0;
  if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
  return 0.0;
}

// Half-sample symmetric reflection: [a b c] pads as b a | a b c | c b.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

namespace detail {

struct Taps {
  int first = 0;                 // first source index (unreflected)
  std::vector<double> weights;   // normalized to sum 1
};

// Tap table for one output axis. Center convention maps output pixel i to
// source coordinate (i+0.5)/scale - 0.5. When shrinking, the kernel is
// widened by 1/scale (anti-aliasing), matching the usual imresize behavior.
inline std::vector<Taps> make_taps(int src_n, int dst_n) {
  const double scale = static_cast<double>(dst_n) / src_n;
  const double fscale = std::max(1.0, 1.0 / scale);
  const double radius = 2.0 * fscale;
  std::vector<Taps> taps(dst_n);
  for (int i = 0; i < dst_n; ++i) {
    const double s = (i + 0.5) / scale - 0.5;
    const int lo = static_cast<int>(std::ceil(s - radius));
    const int hi = static_cast<int>(std::floor(s + radius));
    Taps t;
    t.first = lo;
    t.weights.resize(hi - lo + 1);
    double sum = 0.0;
    for (int p = lo; p <= hi; ++p) {
      const double w = catmull_rom((p - s) / fscale);
      t.weights[p - lo] = w;
      sum += w;
    }
    for (double& w : t.weights) w /= sum;
    taps[i] = t;
  }
  return taps;
}

}  // namespace detail

// Separable Catmull-Rom resampling with reflect boundary, row-major field.
inline std::vector<double> bicubic_resize(const std::vector<double>& src, int h,
                                          int w, int oh, int ow) {
  const auto tx = detail::make_taps(w, ow);
  const auto ty = detail::make_taps(h, oh);

  // rows first: h x ow
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    const double* row = src.data() + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < ow; ++x) {
      const auto& t = tx[x];
      double s = 0.0;
      for (std::size_t j = 0; j < t.weights.size(); ++j)
        s += t.weights[j] * row[reflect_index(t.first + static_cast<int>(j), w)];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }

  std::vector<double> dst(static_cast<std::size_t>(oh) * ow);
  for (int x = 0; x < ow; ++x) {
    for (int y = 0; y < oh; ++y) {
      const auto& t = ty[y];
      double s = 0.0;
      for (std::size_t j = 0; j < t.weights.size(); ++j)
        s += t.weights[j] *
             tmp[static_cast<std::size_t>(reflect_index(t.first + static_cast<int>(j), h)) * ow + x];
      dst[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  return dst;
}

// HR -> LR by anti-aliased bicubic downsampling; the degradation used to
// synthesize training pairs. Output clamped to [0,1].
inline SicGrid degrade(const SicGrid& hr, int r) {
  if (r < 2 || r > 4) throw ParamError("degrade: scale must be 2, 3 or 4");
  if (hr.height % r != 0 || hr.width % r != 0)
    throw ParamError("degrade: dims " + std::to_string(hr.height) + "x" +
                     std::to_string(hr.width) + " not divisible by " + std::to_string(r));
  SicGrid lr(hr.height / r, hr.width / r);
  lr.cell_size_km = hr.cell_size_km * r;
  lr.values = bicubic_resize(hr.values, hr.height, hr.width, lr.height, lr.width);
  for (double& v : lr.values) v = std::clamp(v, 0.0, 1.0);
  return lr;
}

// LR -> HR bicubic interpolation; the comparison baseline.
inline SicGrid bicubic_upsample(const SicGrid& lr, int r) {
  if (r < 2 || r > 4) throw ParamError("bicubic_upsample: scale must be 2, 3 or 4");
  SicGrid hr(lr.height * r, lr.width * r);
  hr.cell_size_km = lr.cell_size_km / r;
  hr.values = bicubic_resize(lr.values, lr.height, lr.width, hr.height, hr.width);
  for (double& v : hr.values) v = std::clamp(v, 0.0, 1.0);
  return hr;
}

}  // namespace mfm
