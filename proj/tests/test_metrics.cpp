#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mfm/metrics.hpp"
#include "mfm/resample.hpp"
#include "mfm/rng.hpp"
#include "mfm/synth.hpp"

using mfm::SicGrid;

namespace {

// Independent two-pass MSE: accumulate mean of diffs first, then squared
// residuals about it... psnr uses plain MSE, so the oracle does sum of
// squares in long double for an independent accumulation path.
double psnr_oracle(const SicGrid& a, const SicGrid& b) {
  long double se = 0.0L;
  std::size_t n = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      const long double d = static_cast<long double>(a.at(y, x)) - b.at(y, x);
      se += d * d;
      ++n;
    }
  const double mse = static_cast<double>(se / n);
  return 10.0 * std::log10(1.0 / mse);
}

// Direct windowed SSIM with two-pass weighted moments (different algebra
// from the library's E[x^2]-mu^2 single pass).
double ssim_oracle(const SicGrid& a, const SicGrid& b) {
  std::vector<double> w(121);
  double wsum = 0;
  for (int y = -5; y <= 5; ++y)
    for (int x = -5; x <= 5; ++x) {
      w[(y + 5) * 11 + (x + 5)] = std::exp(-(x * x + y * y) / 4.5);
      wsum += w[(y + 5) * 11 + (x + 5)];
    }
  for (double& v : w) v /= wsum;

  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  int count = 0;
  for (int cy = 5; cy < a.height - 5; ++cy)
    for (int cx = 5; cx < a.width - 5; ++cx) {
      double mx = 0, my = 0;
      int k = 0;
      for (int dy = -5; dy <= 5; ++dy)
        for (int dx = -5; dx <= 5; ++dx, ++k) {
          mx += w[k] * a.at(cy + dy, cx + dx);
          my += w[k] * b.at(cy + dy, cx + dx);
        }
      double vx = 0, vy = 0, cov = 0;
      k = 0;
      for (int dy = -5; dy <= 5; ++dy)
        for (int dx = -5; dx <= 5; ++dx, ++k) {
          const double da = a.at(cy + dy, cx + dx) - mx;
          const double db = b.at(cy + dy, cx + dx) - my;
          vx += w[k] * da * da;
          vy += w[k] * db * db;
          cov += w[k] * da * db;
        }
      total += ((2 * mx * my + c1) * (2 * cov + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / count;
}

SicGrid noisy(const SicGrid& base, double amplitude, std::uint64_t seed) {
  SicGrid out = base;
  mfm::Rng rng(seed);
  for (double& v : out.values) v += amplitude * (2.0 * rng.uniform() - 1.0);
  return out;
}

}  // namespace

TEST_CASE("psnr closed forms") {
  SicGrid a(16, 16, 0.5);
  CHECK(std::isinf(mfm::psnr(a, a)));

  SicGrid b(16, 16, 0.6);  // MSE = 0.01
  CHECK(mfm::psnr(a, b) == Catch::Approx(20.0).margin(1e-9));
  CHECK(mfm::psnr(b, a) == mfm::psnr(a, b));

  SicGrid wrong(8, 16, 0.5);
  CHECK_THROWS_AS(mfm::psnr(a, wrong), mfm::ShapeError);
}

TEST_CASE("psnr matches direct MSE oracle") {
  auto a = mfm::synth_field(32, 1);
  auto b = mfm::synth_field(32, 2);
  CHECK(mfm::psnr(a, b) == Catch::Approx(psnr_oracle(a, b)).margin(1e-9));
}

TEST_CASE("psnr respects nodata masks") {
  SicGrid a(16, 16, 0.5);
  SicGrid b(16, 16, 0.5);
  b.at(3, 3) = 1.0;  // large error at one cell
  const double with_err = mfm::psnr(a, b);
  CHECK(with_err < 40.0);
  b.mask.assign(b.values.size(), 0);
  b.mask[3 * 16 + 3] = 1;  // mask it out
  CHECK(std::isinf(mfm::psnr(a, b)));
}

TEST_CASE("psnr strictly decreases along a noise sweep") {
  auto base = mfm::synth_field(48, 3);
  // keep values interior so noise is never clamped away
  for (double& v : base.values) v = 0.3 + 0.4 * v;
  double prev = std::numeric_limits<double>::infinity();
  for (int i = 1; i <= 10; ++i) {
    const double amp = 0.01 * i;
    const double p = mfm::psnr(noisy(base, amp, 77), base);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("ssim closed forms and symmetry") {
  auto x = mfm::synth_field(32, 5);
  CHECK(mfm::ssim(x, x) == Catch::Approx(1.0).margin(1e-9));

  auto y = mfm::synth_field(32, 6);
  CHECK(std::fabs(mfm::ssim(x, y) - mfm::ssim(y, x)) <= 1e-12);
  CHECK(mfm::ssim(x, y) >= -1.0);
  CHECK(mfm::ssim(x, y) <= 1.0);

  SicGrid tiny(8, 8, 0.5);
  CHECK_THROWS_AS(mfm::ssim(tiny, tiny), mfm::ParamError);
}

TEST_CASE("ssim of inverted half-plane image is negative") {
  SicGrid x(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int c = 0; c < 32; ++c) x.at(y, c) = c < 16 ? 0.0 : 1.0;
  SicGrid inv = x;
  for (double& v : inv.values) v = 1.0 - v;
  CHECK(mfm::ssim(x, inv) < 0.0);
}

TEST_CASE("ssim matches direct windowed oracle") {
  auto a = mfm::synth_field(32, 8);
  auto b = mfm::synth_field(32, 9);
  CHECK(mfm::ssim(a, b) == Catch::Approx(ssim_oracle(a, b)).margin(1e-9));
}

TEST_CASE("bicubic_upsample baseline properties") {
  SECTION("constant field") {
    SicGrid g(12, 12, 0.42);
    for (int r : {2, 3, 4}) {
      auto up = mfm::bicubic_upsample(g, r);
      CHECK(up.height == 12 * r);
      for (double v : up.values) CHECK(v == Catch::Approx(0.42).margin(1e-12));
    }
  }

  SECTION("commutes with interior constant shifts") {
    auto g = mfm::synth_field(16, 10);
    for (double& v : g.values) v = 0.3 + 0.3 * v;  // interior
    const double c = 0.1;
    SicGrid shifted = g;
    for (double& v : shifted.values) v += c;
    auto up = mfm::bicubic_upsample(g, 2);
    auto up_shifted = mfm::bicubic_upsample(shifted, 2);
    for (std::size_t i = 0; i < up.values.size(); ++i)
      CHECK(up_shifted.values[i] - up.values[i] == Catch::Approx(c).margin(1e-9));
  }

  SECTION("recovers a band-limited sinusoid after degrade") {
    SicGrid g(48, 48);
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 48; ++x)
        g.at(y, x) = 0.5 + 0.25 * std::sin(2 * M_PI * x / 24.0) * std::sin(2 * M_PI * y / 24.0);
    auto lr = mfm::degrade(g, 2);
    auto up = mfm::bicubic_upsample(lr, 2);
    double se = 0;
    for (std::size_t i = 0; i < g.values.size(); ++i) {
      const double d = up.values[i] - g.values[i];
      se += d * d;
    }
    CHECK(std::sqrt(se / g.values.size()) < 1e-2);
  }
}

TEST_CASE("evaluate aggregates and excludes infinite entries") {
  SicGrid gt(16, 16, 0.5);

  SECTION("single identical pair") {
    auto rec = mfm::evaluate({gt}, {gt});
    CHECK(rec.n == 1);
    CHECK(rec.n_infinite == 1);
    CHECK(rec.mean_ssim == Catch::Approx(1.0).margin(1e-9));
    CHECK(std::isinf(rec.per_image[0].psnr));
  }

  SECTION("mean is the arithmetic mean of per-image dB") {
    SicGrid p20(16, 16, 0.6);                       // MSE 0.01 -> 20 dB
    SicGrid p30(16, 16, 0.5 + std::sqrt(0.001));    // MSE 0.001 -> 30 dB
    auto rec = mfm::evaluate({p20, p30}, {gt, gt});
    CHECK(rec.mean_psnr == Catch::Approx(25.0).margin(1e-9));
    CHECK(rec.n_infinite == 0);
  }

  SECTION("record matches independent per-image recomputation") {
    std::vector<SicGrid> outs, gts;
    for (std::uint64_t s = 0; s < 4; ++s) {
      outs.push_back(mfm::synth_field(24, 100 + s));
      gts.push_back(mfm::synth_field(24, 200 + s));
    }
    auto rec = mfm::evaluate(outs, gts);
    REQUIRE(rec.per_image.size() == 4);
    double psum = 0, ssum = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(rec.per_image[i].psnr == Catch::Approx(mfm::psnr(outs[i], gts[i])).margin(1e-12));
      CHECK(rec.per_image[i].ssim == Catch::Approx(mfm::ssim(outs[i], gts[i])).margin(1e-12));
      psum += rec.per_image[i].psnr;
      ssum += rec.per_image[i].ssim;
    }
    CHECK(rec.mean_psnr == Catch::Approx(psum / 4).margin(1e-9));
    CHECK(rec.mean_ssim == Catch::Approx(ssum / 4).margin(1e-9));
  }

  SECTION("errors") {
    CHECK_THROWS_AS(mfm::evaluate({}, {}), mfm::ParamError);
    CHECK_THROWS_AS(mfm::evaluate({gt}, {gt, gt}), mfm::ParamError);
  }

  SECTION("csv and json serialization") {
    auto rec = mfm::evaluate({gt}, {gt});
    rec.split = "val";
    rec.scale = 2;
    const std::string csv = rec.to_csv();
    CHECK(csv.find("index,psnr_db,ssim") == 0);
    CHECK(csv.find("inf") != std::string::npos);
    auto j = rec.to_json();
    CHECK(j["split"] == "val");
    CHECK(j["scale"] == 2);
    CHECK(j["n_infinite_psnr"] == 1);
  }
}
