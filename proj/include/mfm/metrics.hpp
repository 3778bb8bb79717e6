#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfm/common.hpp"
#include "mfm/grid.hpp"

namespace mfm {

// 10*log10(peak^2 / MSE) over non-masked cells (union of both masks).
// Identical grids return the +infinity sentinel.
inline double psnr(const SicGrid& a, const SicGrid& b, double peak = 1.0) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError("psnr: grid shapes differ");
  double se = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (a.masked(y, x) || b.masked(y, x)) continue;
      const double d = a.at(y, x) - b.at(y, x);
      se += d * d;
      ++n;
    }
  if (n == 0) throw ParamError("psnr: no overlapping valid cells");
  const double mse = se / static_cast<double>(n);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {

inline const std::vector<double>& ssim_window() {
  // 11x11 Gaussian, sigma 1.5, normalized
  static const std::vector<double> w = [] {
    std::vector<double> k(121);
    double sum = 0.0;
    for (int y = -5; y <= 5; ++y)
      for (int x = -5; x <= 5; ++x) {
        const double v = std::exp(-(x * x + y * y) / (2.0 * 1.5 * 1.5));
        k[(y + 5) * 11 + (x + 5)] = v;
        sum += v;
      }
    for (double& v : k) v /= sum;
    return k;
  }();
  return w;
}

}  // namespace detail

// Mean local SSIM over all fully-interior 11x11 windows (Gaussian weights,
// sigma 1.5, K1=0.01, K2=0.03, data range L=1).
inline double ssim(const SicGrid& a, const SicGrid& b) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError("ssim: grid shapes differ");
  if (a.height < 11 || a.width < 11)
    throw ParamError("ssim: grids must be at least 11x11");

  constexpr double c1 = 0.01 * 0.01;  // (K1*L)^2
  constexpr double c2 = 0.03 * 0.03;  // (K2*L)^2
  const auto& w = detail::ssim_window();

  double total = 0.0;
  std::size_t count = 0;
  for (int cy = 5; cy < a.height - 5; ++cy)
    for (int cx = 5; cx < a.width - 5; ++cx) {
      double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
      int k = 0;
      for (int dy = -5; dy <= 5; ++dy)
        for (int dx = -5; dx <= 5; ++dx, ++k) {
          const double va = a.at(cy + dy, cx + dx);
          const double vb = b.at(cy + dy, cx + dx);
          mx += w[k] * va;
          my += w[k] * vb;
          xx += w[k] * va * va;
          yy += w[k] * vb * vb;
          xy += w[k] * va * vb;
        }
      const double vx = xx - mx * mx;
      const double vy = yy - my * my;
      const double cxy = xy - mx * my;
      const double s = ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) /
                       ((mx * mx + my * my + c1) * (vx + vy + c2));
      total += s;
      ++count;
    }
  return total / static_cast<double>(count);
}

struct ImageScore {
  double psnr = 0.0;
  double ssim = 0.0;
};

// Per-image and aggregated scores for one (split, scale) evaluation.
struct MetricsRecord {
  std::string split;
  int scale = 0;
  std::vector<ImageScore> per_image;
  double mean_psnr = 0.0;    // over finite entries only
  double median_psnr = 0.0;  // over finite entries only
  double mean_ssim = 0.0;
  std::size_t n = 0;
  std::size_t n_infinite = 0;

  std::string to_csv() const {
    std::ostringstream out;
    out.precision(10);
    out << "index,psnr_db,ssim\n";
    for (std::size_t i = 0; i < per_image.size(); ++i) {
      out << i << ',';
      if (std::isinf(per_image[i].psnr))
        out << "inf";
      else
        out << per_image[i].psnr;
      out << ',' << per_image[i].ssim << '\n';
    }
    return out.str();
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"split", split},
                          {"scale", scale},
                          {"mean_psnr_db", mean_psnr},
                          {"median_psnr_db", median_psnr},
                          {"mean_ssim", mean_ssim},
                          {"n", n},
                          {"n_infinite_psnr", n_infinite}};
  }
};

// Scores model_outputs against ground_truths pairwise. Infinite PSNR entries
// are excluded from the mean/median and counted separately.
inline MetricsRecord evaluate(const std::vector<SicGrid>& model_outputs,
                              const std::vector<SicGrid>& ground_truths) {
  if (model_outputs.empty()) throw ParamError("evaluate: empty input lists");
  if (model_outputs.size() != ground_truths.size())
    throw ParamError("evaluate: list lengths differ: " +
                     std::to_string(model_outputs.size()) + " vs " +
                     std::to_string(ground_truths.size()));

  MetricsRecord rec;
  rec.n = model_outputs.size();
  std::vector<double> finite_psnr;
  double ssim_sum = 0.0;
  for (std::size_t i = 0; i < model_outputs.size(); ++i) {
    ImageScore s;
    s.psnr = psnr(model_outputs[i], ground_truths[i]);
    s.ssim = ssim(model_outputs[i], ground_truths[i]);
    if (std::isinf(s.psnr))
      ++rec.n_infinite;
    else
      finite_psnr.push_back(s.psnr);
    ssim_sum += s.ssim;
    rec.per_image.push_back(s);
  }
  rec.mean_ssim = ssim_sum / static_cast<double>(rec.n);
  if (!finite_psnr.empty()) {
    double sum = 0.0;
    for (double v : finite_psnr) sum += v;
    rec.mean_psnr = sum / static_cast<double>(finite_psnr.size());
    std::sort(finite_psnr.begin(), finite_psnr.end());
    const std::size_t m = finite_psnr.size();
    rec.median_psnr = m % 2 ? finite_psnr[m / 2]
                            : 0.5 * (finite_psnr[m / 2 - 1] + finite_psnr[m / 2]);
  } else {
    rec.mean_psnr = std::numeric_limits<double>::infinity();
    rec.median_psnr = std::numeric_limits<double>::infinity();
  }
  return rec;
}

}  // namespace mfm
