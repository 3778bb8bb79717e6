#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mfm/common.hpp"
#include "mfm/grid.hpp"
#include "mfm/rng.hpp"

namespace mfm {

// Knobs for the synthetic ice-edge generator. correlation_length is the
// 1/e distance of the field's spatial autocorrelation in cells;
// edge_sharpness steers how binary (icy/open-water) the field looks.
struct IceParams {
  double correlation_length = 6.0;
  double edge_sharpness = 8.0;
};

namespace detail {

inline void gaussian_blur_axis(std::vector<double>& f, int h, int w, double sigma,
                               bool rows) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;

  std::vector<double> out(f.size());
  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i - 1;
      if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
  };
  if (rows) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int j = -radius; j <= radius; ++j)
          s += k[j + radius] * f[static_cast<std::size_t>(y) * w + reflect(x + j, w)];
        out[static_cast<std::size_t>(y) * w + x] = s;
      }
  } else {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int j = -radius; j <= radius; ++j)
          s += k[j + radius] * f[static_cast<std::size_t>(reflect(y + j, h)) * w + x];
        out[static_cast<std::size_t>(y) * w + x] = s;
      }
  }
  f = std::move(out);
}

}  // namespace detail

// Smoothed white noise squashed through a logistic, giving coherent [0,1]
// fields with ice-edge-like transition zones. Deterministic per seed.
// Blurring white noise with a Gaussian of std sigma yields autocorrelation
// exp(-d^2 / (4 sigma^2)), whose 1/e distance is 2 sigma, so sigma = L/2.
inline SicGrid synth_field(int size, std::uint64_t seed,
                           const IceParams& params = IceParams{}) {
  if (size < 16) throw ParamError("synth_field: size must be >= 16");
  if (params.correlation_length <= 0.0)
    throw ParamError("synth_field: correlation_length must be positive");

  Rng rng(seed);
  std::vector<double> f(static_cast<std::size_t>(size) * size);
  for (double& v : f) v = rng.normal();

  const double sigma = params.correlation_length / 2.0;
  detail::gaussian_blur_axis(f, size, size, sigma, true);
  detail::gaussian_blur_axis(f, size, size, sigma, false);

  // standardize so edge_sharpness acts on a unit-variance field
  double mean = 0.0;
  for (double v : f) mean += v;
  mean /= static_cast<double>(f.size());
  double var = 0.0;
  for (double v : f) var += (v - mean) * (v - mean);
  var /= static_cast<double>(f.size());
  const double inv_std = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;

  SicGrid g(size, size);
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double z = (f[i] - mean) * inv_std;
    g.values[i] = 1.0 / (1.0 + std::exp(-params.edge_sharpness * z));
  }
  return g;
}

}  // namespace mfm
