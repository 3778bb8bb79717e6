#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mfm/common.hpp"
#include "mfm/grid.hpp"
#include "mfm/resample.hpp"
#include "mfm/rng.hpp"

namespace mfm {

// HR patch with its bicubic-degraded LR counterpart at one scale.
struct SrPair {
  SicGrid hr;
  SicGrid lr;
  int scale = 2;
};

inline SrPair make_sr_pair(SicGrid hr, int r) {
  SrPair p;
  p.lr = degrade(hr, r);
  p.hr = std::move(hr);
  p.scale = r;
  return p;
}

// Patch selection rule standing in for "contains the ice edge": the fraction
// of cells with SIC strictly inside (0.15, 0.85) must land in
// [min_frac, max_frac].
struct EdgeFilter {
  bool enabled = false;
  double min_frac = 0.0;
  double max_frac = 1.0;

  static EdgeFilter none() { return EdgeFilter{}; }
  static EdgeFilter ice_edge(double min_frac, double max_frac = 1.0) {
    return EdgeFilter{true, min_frac, max_frac};
  }
};

// Raster-order patches of size patch x patch at the given stride. Patches
// touching nodata cells are dropped; the edge filter, when enabled, keeps
// only patches whose intermediate-SIC fraction is within its band.
inline std::vector<SicGrid> extract_patches(const SicGrid& g, int patch, int stride,
                                            const EdgeFilter& filter = EdgeFilter::none()) {
  if (patch < 1 || patch > g.height || patch > g.width)
    throw ParamError("extract_patches: patch " + std::to_string(patch) +
                     " exceeds grid " + std::to_string(g.height) + "x" +
                     std::to_string(g.width));
  if (stride < 1) throw ParamError("extract_patches: stride must be >= 1");

  std::vector<SicGrid> out;
  for (int y0 = 0; y0 + patch <= g.height; y0 += stride) {
    for (int x0 = 0; x0 + patch <= g.width; x0 += stride) {
      bool touches_nodata = false;
      int edge_cells = 0;
      for (int y = 0; y < patch && !touches_nodata; ++y)
        for (int x = 0; x < patch; ++x) {
          if (g.masked(y0 + y, x0 + x)) {
            touches_nodata = true;
            break;
          }
          const double v = g.at(y0 + y, x0 + x);
          if (v > 0.15 && v < 0.85) ++edge_cells;
        }
      if (touches_nodata) continue;
      if (filter.enabled) {
        const double frac =
            static_cast<double>(edge_cells) / (static_cast<double>(patch) * patch);
        if (frac < filter.min_frac || frac > filter.max_frac) continue;
      }
      SicGrid p(patch, patch);
      p.cell_size_km = g.cell_size_km;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x) p.at(y, x) = g.at(y0 + y, x0 + x);
      out.push_back(std::move(p));
    }
  }
  return out;
}

// Deterministic shuffled split into (train, val); disjoint and exhaustive.
template <class T>
std::pair<std::vector<T>, std::vector<T>> split_dataset(const std::vector<T>& items,
                                                        double train_frac,
                                                        std::uint64_t seed) {
  if (items.empty()) throw ParamError("split_dataset: empty input");
  if (!(train_frac > 0.0 && train_frac < 1.0))
    throw ParamError("split_dataset: train_frac must be in (0,1)");

  std::vector<std::size_t> idx(items.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.below(i)]);

  const std::size_t n_train =
      static_cast<std::size_t>(static_cast<double>(items.size()) * train_frac);
  std::pair<std::vector<T>, std::vector<T>> out;
  for (std::size_t i = 0; i < idx.size(); ++i)
    (i < n_train ? out.first : out.second).push_back(items[idx[i]]);
  return out;
}

}  // namespace mfm
