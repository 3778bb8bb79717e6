#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mfm/common.hpp"
#include "mfm/tape.hpp"
#include "mfm/tensor.hpp"

namespace mfm {

// 3x3/1x1 convolution weights. kernel shape is (kh, kw, in_ch, out_ch),
// bias is (1,1,1,out_ch); padding is always dilation*(k-1)/2 so spatial
// dims are preserved.
template <Scalar Real>
struct ConvWeights {
  Tensor<Real> kernel;
  Tensor<Real> bias;
  int dilation = 1;

  ConvWeights() = default;
  ConvWeights(Tensor<Real> k, Tensor<Real> b, int d = 1)
      : kernel(std::move(k)), bias(std::move(b)), dilation(d) {}

  int kh() const { return kernel.shape.b; }
  int kw() const { return kernel.shape.h; }
  int in_ch() const { return kernel.shape.w; }
  int out_ch() const { return kernel.shape.c; }
};

namespace detail {

template <Scalar Real>
inline bool want_grad(const Tensor<Real>& t, const Tape<Real>* tape) {
  return tape != nullptr && tape->tracks(t);
}

// y += a * x over disjoint buffers; the restrict qualifiers let the
// vectorizer emit straight FMA code for the convolution inner loops.
template <Scalar Real>
inline void axpy(int n, Real a, const Real* __restrict x, Real* __restrict y) {
  for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: stride-1 zero-padded dilated convolution, spatial shape preserved.
// ---------------------------------------------------------------------------

template <Scalar Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const ConvWeights<Real>& w) {
  const int B = x.shape.b, H = x.shape.h, W = x.shape.w, IC = x.shape.c;
  const int KH = w.kh(), KW = w.kw(), OC = w.out_ch();
  const int d = w.dilation;

  if (d < 1) throw ParamError("conv2d: dilation must be >= 1, got " + std::to_string(d));
  if (KH % 2 == 0 || KW % 2 == 0)
    throw ParamError("conv2d: kernel dims must be odd, got " + w.kernel.shape.str());
  if (IC != w.in_ch())
    throw ShapeError("conv2d: input has " + std::to_string(IC) +
                     " channels, kernel expects " + std::to_string(w.in_ch()));
  if (w.bias.shape.c != OC || w.bias.numel() != static_cast<std::size_t>(OC))
    throw ShapeError("conv2d: bias shape " + w.bias.shape.str() +
                     " does not match out_ch " + std::to_string(OC));

  const int ch = (KH - 1) / 2, cw = (KW - 1) / 2;

  auto y = Tensor<Real>::uninitialized(Shape(B, H, W, OC));
  const Real* in = x.data().data();
  const Real* ker = w.kernel.data().data();
  const Real* bias = w.bias.data().data();
  Real* out = y.data().data();

  // one output row at a time; tap bounds hoisted so inner loops are
  // branch-free axpy over contiguous out channels
#pragma omp parallel
  {
    std::vector<Real> rowacc(static_cast<std::size_t>(W) * OC);
#pragma omp for
    for (int row = 0; row < B * H; ++row) {
      const int b = row / H, yy = row % H;
      for (int xx = 0; xx < W; ++xx)
        for (int oc = 0; oc < OC; ++oc) rowacc[static_cast<std::size_t>(xx) * OC + oc] = bias[oc];
      for (int ky = 0; ky < KH; ++ky) {
        const int iy = yy + d * (ky - ch);
        if (iy < 0 || iy >= H) continue;
        const Real* inrow = in + (static_cast<std::size_t>(b) * H + iy) * W * IC;
        for (int kx = 0; kx < KW; ++kx) {
          const int off = d * (kx - cw);
          const int xlo = std::max(0, -off);
          const int xhi = std::min(W - 1, W - 1 - off);
          const Real* kp = ker + (static_cast<std::size_t>(ky) * KW + kx) * IC * OC;
          for (int ic = 0; ic < IC; ++ic) {
            const Real* krow = kp + static_cast<std::size_t>(ic) * OC;
            for (int xx = xlo; xx <= xhi; ++xx)
              detail::axpy(OC, inrow[static_cast<std::size_t>(xx + off) * IC + ic],
                           krow, rowacc.data() + static_cast<std::size_t>(xx) * OC);
          }
        }
      }
      Real* op = out + (static_cast<std::size_t>(b) * H + yy) * W * OC;
      std::copy(rowacc.begin(), rowacc.end(), op);
    }
  }

  auto* tape = Tape<Real>::active();
  const bool gx = detail::want_grad(x, tape);
  const bool gk = detail::want_grad(w.kernel, tape);
  const bool gb = detail::want_grad(w.bias, tape);
  if (tape && (gx || gk || gb)) {
    y.mark_on_tape(tape->id());
    Tensor<Real> xc = x, kc = w.kernel, bc = w.bias, yc = y;
    tape->record([xc, kc, bc, yc, d, gx, gk, gb]() mutable {
      if (!yc.has_grad()) return;
      const int B = xc.shape.b, H = xc.shape.h, W = xc.shape.w, IC = xc.shape.c;
      const int KH = kc.shape.b, KW = kc.shape.h, OC = kc.shape.c;
      const int ch = (KH - 1) / 2, cw = (KW - 1) / 2;
      const Real* gout = yc.grad_view().data();

      if (gx) {
        // transpose kernel to [ky][kx][oc][ic] so the inner loop is contiguous
        std::vector<Real> kt(static_cast<std::size_t>(KH) * KW * OC * IC);
        const Real* ker = kc.data().data();
        for (int ky = 0; ky < KH; ++ky)
          for (int kx = 0; kx < KW; ++kx)
            for (int ic = 0; ic < IC; ++ic)
              for (int oc = 0; oc < OC; ++oc)
                kt[(((static_cast<std::size_t>(ky) * KW + kx) * OC + oc) * IC) + ic] =
                    ker[(((static_cast<std::size_t>(ky) * KW + kx) * IC + ic) * OC) + oc];

        xc.ensure_grad();
        Real* gin = xc.grad().data();
#pragma omp parallel
        {
          std::vector<Real> rowacc(static_cast<std::size_t>(W) * IC);
#pragma omp for
          for (int row = 0; row < B * H; ++row) {
            const int b = row / H, yy = row % H;
            std::fill(rowacc.begin(), rowacc.end(), Real(0));
            for (int ky = 0; ky < KH; ++ky) {
              const int oy = yy - d * (ky - ch);
              if (oy < 0 || oy >= H) continue;
              const Real* grow = gout + (static_cast<std::size_t>(b) * H + oy) * W * OC;
              for (int kx = 0; kx < KW; ++kx) {
                const int off = d * (kx - cw);  // ox = xx - off
                const int xlo = std::max(0, off);
                const int xhi = std::min(W - 1, W - 1 + off);
                const Real* tp = kt.data() + (static_cast<std::size_t>(ky) * KW + kx) * OC * IC;
                for (int oc = 0; oc < OC; ++oc) {
                  const Real* trow = tp + static_cast<std::size_t>(oc) * IC;
                  for (int xx = xlo; xx <= xhi; ++xx)
                    detail::axpy(IC, grow[static_cast<std::size_t>(xx - off) * OC + oc],
                                 trow, rowacc.data() + static_cast<std::size_t>(xx) * IC);
                }
              }
            }
            Real* dst = gin + (static_cast<std::size_t>(b) * H + yy) * W * IC;
            for (std::size_t i = 0; i < rowacc.size(); ++i) dst[i] += rowacc[i];
          }
        }
      }

      if (gk) {
        // one streaming pass over the activations; the whole kernel gradient
        // stays cache-resident
        kc.ensure_grad();
        Real* gker = kc.grad().data();
        const Real* in = xc.data().data();
        for (int b = 0; b < B; ++b)
          for (int oy = 0; oy < H; ++oy) {
            const Real* gprow = gout + (static_cast<std::size_t>(b) * H + oy) * W * OC;
            for (int ky = 0; ky < KH; ++ky) {
              const int iy = oy + d * (ky - ch);
              if (iy < 0 || iy >= H) continue;
              const Real* irow = in + (static_cast<std::size_t>(b) * H + iy) * W * IC;
              for (int kx = 0; kx < KW; ++kx) {
                const int off = d * (kx - cw);
                const int xlo = std::max(0, -off);
                const int xhi = std::min(W - 1, W - 1 - off);
                Real* gtap = gker + (static_cast<std::size_t>(ky) * KW + kx) * IC * OC;
                for (int ox = xlo; ox <= xhi; ++ox) {
                  const Real* ip = irow + static_cast<std::size_t>(ox + off) * IC;
                  const Real* gp = gprow + static_cast<std::size_t>(ox) * OC;
                  for (int ic = 0; ic < IC; ++ic)
                    detail::axpy(OC, ip[ic], gp, gtap + static_cast<std::size_t>(ic) * OC);
                }
              }
            }
          }
      }

      if (gb) {
        bc.ensure_grad();
        Real* gbias = bc.grad().data();
        const std::size_t n = static_cast<std::size_t>(B) * H * W;
        for (std::size_t i = 0; i < n; ++i) {
          const Real* gp = gout + i * OC;
          for (int oc = 0; oc < OC; ++oc) gbias[oc] += gp[oc];
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// conv1d_channel: 1-D zero-padded convolution along the channel axis of a
// (b,1,1,C) descriptor; single in/out channel. kernel shape (1,1,1,K).
// ---------------------------------------------------------------------------

template <Scalar Real>
struct Conv1dWeights {
  Tensor<Real> kernel;  // (1,1,1,K), K odd
  Tensor<Real> bias;    // (1,1,1,1)
};

template <Scalar Real>
Tensor<Real> conv1d_channel(const Tensor<Real>& v, const Conv1dWeights<Real>& w) {
  if (v.shape.h != 1 || v.shape.w != 1)
    throw ShapeError("conv1d_channel: expected 1x1 spatial input, got " + v.shape.str());
  const int K = static_cast<int>(w.kernel.numel());
  if (K % 2 == 0) throw ParamError("conv1d_channel: kernel size must be odd");
  const int B = v.shape.b, C = v.shape.c, off = K / 2;

  Tensor<Real> y(Shape(B, 1, 1, C));
  const Real* in = v.data().data();
  const Real* ker = w.kernel.data().data();
  const Real bias = w.bias.scalar();
  Real* out = y.data().data();
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      Real s = bias;
      for (int j = 0; j < K; ++j) {
        const int cc = c + j - off;
        if (cc >= 0 && cc < C) s += ker[j] * in[static_cast<std::size_t>(b) * C + cc];
      }
      out[static_cast<std::size_t>(b) * C + c] = s;
    }

  auto* tape = Tape<Real>::active();
  const bool gv = detail::want_grad(v, tape);
  const bool gk = detail::want_grad(w.kernel, tape);
  const bool gb = detail::want_grad(w.bias, tape);
  if (tape && (gv || gk || gb)) {
    y.mark_on_tape(tape->id());
    Tensor<Real> vc = v, kc = w.kernel, bc = w.bias, yc = y;
    tape->record([vc, kc, bc, yc, gv, gk, gb]() mutable {
      if (!yc.has_grad()) return;
      const int B = vc.shape.b, C = vc.shape.c;
      const int K = static_cast<int>(kc.numel()), off = K / 2;
      const Real* g = yc.grad_view().data();
      if (gv) {
        vc.ensure_grad();
        Real* gin = vc.grad().data();
        const Real* ker = kc.data().data();
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            Real s = 0;
            for (int j = 0; j < K; ++j) {
              const int oc = c - (j - off);
              if (oc >= 0 && oc < C) s += ker[j] * g[static_cast<std::size_t>(b) * C + oc];
            }
            gin[static_cast<std::size_t>(b) * C + c] += s;
          }
      }
      if (gk) {
        kc.ensure_grad();
        Real* gker = kc.grad().data();
        const Real* in = vc.data().data();
        for (int j = 0; j < K; ++j) {
          Real s = 0;
          for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
              const int cc = c + j - off;
              if (cc >= 0 && cc < C)
                s += in[static_cast<std::size_t>(b) * C + cc] * g[static_cast<std::size_t>(b) * C + c];
            }
          gker[j] += s;
        }
      }
      if (gb) {
        bc.ensure_grad();
        Real s = 0;
        const std::size_t n = static_cast<std::size_t>(B) * C;
        for (std::size_t i = 0; i < n; ++i) s += g[i];
        bc.grad()[0] += s;
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// global_avg_pool: per-channel spatial mean -> (b,1,1,C).
// ---------------------------------------------------------------------------

template <Scalar Real>
Tensor<Real> global_avg_pool(const Tensor<Real>& x) {
  const int B = x.shape.b, H = x.shape.h, W = x.shape.w, C = x.shape.c;
  Tensor<Real> y(Shape(B, 1, 1, C));
  const Real* in = x.data().data();
  Real* out = y.data().data();
  const Real inv = Real(1) / static_cast<Real>(static_cast<std::size_t>(H) * W);
  for (int b = 0; b < B; ++b) {
    Real* op = out + static_cast<std::size_t>(b) * C;
    for (int i = 0; i < H * W; ++i) {
      const Real* ip = in + (static_cast<std::size_t>(b) * H * W + i) * C;
      for (int c = 0; c < C; ++c) op[c] += ip[c];
    }
    for (int c = 0; c < C; ++c) op[c] *= inv;
  }

  auto* tape = Tape<Real>::active();
  if (detail::want_grad(x, tape)) {
    y.mark_on_tape(tape->id());
    Tensor<Real> xc = x, yc = y;
    tape->record([xc, yc]() mutable {
      if (!yc.has_grad()) return;
      const int B = xc.shape.b, H = xc.shape.h, W = xc.shape.w, C = xc.shape.c;
      const Real inv = Real(1) / static_cast<Real>(static_cast<std::size_t>(H) * W);
      xc.ensure_grad();
      Real* gin = xc.grad().data();
      const Real* g = yc.grad_view().data();
      for (int b = 0; b < B; ++b) {
        const Real* gp = g + static_cast<std::size_t>(b) * C;
        for (int i = 0; i < H * W; ++i) {
          Real* dst = gin + (static_cast<std::size_t>(b) * H * W + i) * C;
          for (int c = 0; c < C; ++c) dst[c] += gp[c] * inv;
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// pixel_shuffle: (b,h,w,c) -> (b,h*r,w*r,c/r^2). Output (y*r+dy, x*r+dx, c)
// reads input channel c*r^2 + dy*r + dx at (y, x).
// ---------------------------------------------------------------------------

template <Scalar Real>
Tensor<Real> pixel_shuffle(const Tensor<Real>& x, int r) {
  if (r < 1) throw ParamError("pixel_shuffle: r must be >= 1");
  const int B = x.shape.b, H = x.shape.h, W = x.shape.w, C = x.shape.c;
  if (C % (r * r) != 0)
    throw ShapeError("pixel_shuffle: channels " + std::to_string(C) +
                     " not divisible by r^2 = " + std::to_string(r * r));
  const int OC = C / (r * r);
  auto y = Tensor<Real>::uninitialized(Shape(B, H * r, W * r, OC));
  const Real* in = x.data().data();
  Real* out = y.data().data();
  for (int b = 0; b < B; ++b)
    for (int yy = 0; yy < H; ++yy)
      for (int xx = 0; xx < W; ++xx) {
        const Real* ip = in + (((static_cast<std::size_t>(b) * H + yy) * W + xx) * C);
        for (int c = 0; c < OC; ++c)
          for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx)
              out[(((static_cast<std::size_t>(b) * H * r + yy * r + dy) * (W * r) +
                    xx * r + dx) * OC) + c] = ip[c * r * r + dy * r + dx];
      }

  auto* tape = Tape<Real>::active();
  if (detail::want_grad(x, tape)) {
    y.mark_on_tape(tape->id());
    Tensor<Real> xc = x, yc = y;
    const int rr = r;
    tape->record([xc, yc, rr]() mutable {
      if (!yc.has_grad()) return;
      const int B = xc.shape.b, H = xc.shape.h, W = xc.shape.w, C = xc.shape.c;
      const int OC = C / (rr * rr);
      xc.ensure_grad();
      Real* gin = xc.grad().data();
      const Real* g = yc.grad_view().data();
      for (int b = 0; b < B; ++b)
        for (int yy = 0; yy < H; ++yy)
          for (int xx = 0; xx < W; ++xx) {
            Real* dst = gin + (((static_cast<std::size_t>(b) * H + yy) * W + xx) * C);
            for (int c = 0; c < OC; ++c)
              for (int dy = 0; dy < rr; ++dy)
                for (int dx = 0; dx < rr; ++dx)
                  dst[c * rr * rr + dy * rr + dx] +=
                      g[(((static_cast<std::size_t>(b) * H * rr + yy * rr + dy) * (W * rr) +
                          xx * rr + dx) * OC) + c];
          }
    });
  }
  return y;
}

// Inverse rearrangement of pixel_shuffle (space-to-depth), used by tests and
// available for completeness; differentiable the same way.
template <Scalar Real>
Tensor<Real> pixel_unshuffle(const Tensor<Real>& x, int r) {
  if (r < 1) throw ParamError("pixel_unshuffle: r must be >= 1");
  const int B = x.shape.b, H = x.shape.h, W = x.shape.w, C = x.shape.c;
  if (H % r != 0 || W % r != 0)
    throw ShapeError("pixel_unshuffle: spatial dims not divisible by r");
  const int OH = H / r, OW = W / r, OC = C * r * r;
  auto y = Tensor<Real>::uninitialized(Shape(B, OH, OW, OC));
  const Real* in = x.data().data();
  Real* out = y.data().data();
  for (int b = 0; b < B; ++b)
    for (int yy = 0; yy < OH; ++yy)
      for (int xx = 0; xx < OW; ++xx) {
        Real* op = out + (((static_cast<std::size_t>(b) * OH + yy) * OW + xx) * OC);
        for (int c = 0; c < C; ++c)
          for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx)
              op[c * r * r + dy * r + dx] =
                  in[(((static_cast<std::size_t>(b) * H + yy * r + dy) * W + xx * r + dx) * C) + c];
      }

  auto* tape = Tape<Real>::active();
  if (detail::want_grad(x, tape)) {
    y.mark_on_tape(tape->id());
    Tensor<Real> xc = x, yc = y;
    const int rr = r;
    tape->record([xc, yc, rr]() mutable {
      if (!yc.has_grad()) return;
      const int B = xc.shape.b, H = xc.shape.h, W = xc.shape.w, C = xc.shape.c;
      const int OH = H / rr, OW = W / rr, OC = C * rr * rr;
      xc.ensure_grad();
      Real* gin = xc.grad().data();
      const Real* g = yc.grad_view().data();
      for (int b = 0; b < B; ++b)
        for (int yy = 0; yy < OH; ++yy)
          for (int xx = 0; xx < OW; ++xx) {
            const Real* gp = g + (((static_cast<std::size_t>(b) * OH + yy) * OW + xx) * OC);
            for (int c = 0; c < C; ++c)
              for (int dy = 0; dy < rr; ++dy)
                for (int dx = 0; dx < rr; ++dx)
                  gin[(((static_cast<std::size_t>(b) * H + yy * rr + dy) * W + xx * rr + dx) * C) + c] +=
                      gp[c * rr * rr + dy * rr + dx];
          }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// channel_shuffle: reshape channels to (groups, C/groups), transpose,
// flatten. Output channel j*groups + g reads input channel g*(C/groups) + j.
// ---------------------------------------------------------------------------

template <Scalar Real>
Tensor<Real> channel_shuffle(const Tensor<Real>& x, int groups) {
  if (groups < 1) throw ParamError("channel_shuffle: groups must be >= 1");
  const int C = x.shape.c;
  if (C % groups != 0)
    throw ShapeError("channel_shuffle: channels " + std::to_string(C) +
                     " not divisible by groups " + std::to_string(groups));
  const int cpg = C / groups;
  const std::size_t n = x.numel() / C;

  auto y = Tensor<Real>::uninitialized(x.shape);
  const Real* in = x.data().data();
  Real* out = y.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const Real* ip = in + i * C;
    Real* op = out + i * C;
    for (int oc = 0; oc < C; ++oc) {
      const int j = oc / groups, g = oc % groups;
      op[oc] = ip[g * cpg + j];
    }
  }

  auto* tape = Tape<Real>::active();
  if (detail::want_grad(x, tape)) {
    y.mark_on_tape(tape->id());
    Tensor<Real> xc = x, yc = y;
    tape->record([xc, yc, groups]() mutable {
      if (!yc.has_grad()) return;
      const int C = xc.shape.c, cpg = C / groups;
      const std::size_t n = xc.numel() / C;
      xc.ensure_grad();
      Real* gin = xc.grad().data();
      const Real* g = yc.grad_view().data();
      for (std::size_t i = 0; i < n; ++i) {
        const Real* gp = g + i * C;
        Real* dst = gin + i * C;
        for (int oc = 0; oc < C; ++oc) {
          const int j = oc / groups, gi = oc % groups;
          dst[gi * cpg + j] += gp[oc];
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// layer_norm: normalize across channels at each spatial position, then
// affine scale-shift. gamma/beta are (1,1,1,C).
// ---------------------------------------------------------------------------

template <Scalar Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma,
                        const Tensor<Real>& beta, Real eps = Real(1e-6)) {
  const int C = x.shape.c;
  if (static_cast<int>(gamma.numel()) != C || static_cast<int>(beta.numel()) != C)
    throw ShapeError("layer_norm: gamma/beta length must equal channels " + std::to_string(C));

  const std::size_t n = x.numel() / C;
  Tensor<Real> y(x.shape);
  std::vector<Real> xhat(x.numel());  // kept for backward via capture
  {
    const Real* in = x.data().data();
    const Real* gm = gamma.data().data();
    const Real* bt = beta.data().data();
    Real* out = y.data().data();
    for (std::size_t i = 0; i < n; ++i) {
      const Real* ip = in + i * C;
      Real mu = 0;
      for (int c = 0; c < C; ++c) mu += ip[c];
      mu /= static_cast<Real>(C);
      Real var = 0;
      for (int c = 0; c < C; ++c) {
        const Real dv = ip[c] - mu;
        var += dv * dv;
      }
      var /= static_cast<Real>(C);
      const Real s = Real(1) / std::sqrt(var + eps);
      Real* hp = xhat.data() + i * C;
      Real* op = out + i * C;
      for (int c = 0; c < C; ++c) {
        hp[c] = (ip[c] - mu) * s;
        op[c] = gm[c] * hp[c] + bt[c];
      }
    }
  }

  auto* tape = Tape<Real>::active();
  const bool gx = detail::want_grad(x, tape);
  const bool gg = detail::want_grad(gamma, tape);
  const bool gb = detail::want_grad(beta, tape);
  if (tape && (gx || gg || gb)) {
    y.mark_on_tape(tape->id());
    Tensor<Real> xc = x, gmc = gamma, btc = beta, yc = y;
    auto xh = std::make_shared<std::vector<Real>>(std::move(xhat));
    tape->record([xc, gmc, btc, yc, xh, eps, gx, gg, gb]() mutable {
      if (!yc.has_grad()) return;
      const int C = xc.shape.c;
      const std::size_t n = xc.numel() / C;
      const Real* g = yc.grad_view().data();
      const Real* hp0 = xh->data();
      const Real* gm = gmc.data().data();

      if (gg) gmc.ensure_grad();
      if (gb) btc.ensure_grad();
      if (gx) xc.ensure_grad();
      Real* ggam = gg ? gmc.grad().data() : nullptr;
      Real* gbet = gb ? btc.grad().data() : nullptr;
      Real* gin = gx ? xc.grad().data() : nullptr;

      // recompute per-position 1/sqrt(var+eps) from x
      const Real* in = xc.data().data();
      for (std::size_t i = 0; i < n; ++i) {
        const Real* gp = g + i * C;
        const Real* hp = hp0 + i * C;
        if (gg || gb) {
          for (int c = 0; c < C; ++c) {
            if (gg) ggam[c] += gp[c] * hp[c];
            if (gb) gbet[c] += gp[c];
          }
        }
        if (gx) {
          const Real* ip = in + i * C;
          Real mu = 0;
          for (int c = 0; c < C; ++c) mu += ip[c];
          mu /= static_cast<Real>(C);
          Real var = 0;
          for (int c = 0; c < C; ++c) {
            const Real dv = ip[c] - mu;
            var += dv * dv;
          }
          var /= static_cast<Real>(C);
          const Real s = Real(1) / std::sqrt(var + eps);
          Real m1 = 0, m2 = 0;  // mean(ghat), mean(ghat * xhat)
          for (int c = 0; c < C; ++c) {
            const Real gh = gp[c] * gm[c];
            m1 += gh;
            m2 += gh * hp[c];
          }
          m1 /= static_cast<Real>(C);
          m2 /= static_cast<Real>(C);
          Real* dst = gin + i * C;
          for (int c = 0; c < C; ++c) {
            const Real gh = gp[c] * gm[c];
            dst[c] += s * (gh - m1 - hp[c] * m2);
          }
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

namespace detail {

template <Scalar Real>
inline Real gelu_tanh(Real x) {
  // tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))
  const Real a = Real(0.7978845608028654);  // sqrt(2/pi)
  const Real b = Real(0.044715);
  return Real(0.5) * x * (Real(1) + std::tanh(a * (x + b * x * x * x)));
}

template <Scalar Real>
inline Real gelu_tanh_dx(Real x) {
  const Real a = Real(0.7978845608028654);
  const Real b = Real(0.044715);
  const Real t = std::tanh(a * (x + b * x * x * x));
  const Real du = a * (Real(1) + Real(3) * b * x * x);
  return Real(0.5) * (Real(1) + t) + Real(0.5) * x * (Real(1) - t * t) * du;
}

template <Scalar Real>
inline Real sigmoid_s(Real x) {
  return Real(1) / (Real(1) + std::exp(-x));
}

}  // namespace detail

template <Scalar Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
  constexpr Real a = Real(0.7978845608028654);  // sqrt(2/pi)
  constexpr Real b = Real(0.044715);
  auto y = Tensor<Real>::uninitialized(x.shape);
  const Real* in = x.data().data();
  Real* out = y.data().data();
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.numel());
  auto* tape = Tape<Real>::active();
  const bool track = detail::want_grad(x, tape);

  // keep tanh(u) around when a backward pass will need it
  auto tcache = track ? std::make_shared<std::vector<Real>>(x.numel())
                      : std::shared_ptr<std::vector<Real>>();
  Real* tc = tcache ? tcache->data() : nullptr;
#pragma omp parallel for
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const Real v = in[i];
    const Real t = std::tanh(a * (v + b * v * v * v));
    if (tc) tc[i] = t;
    out[i] = Real(0.5) * v * (Real(1) + t);
  }

  if (track) {
    y.mark_on_tape(tape->id());
    Tensor<Real> xc = x, yc = y;
    tape->record([xc, yc, tcache]() mutable {
      if (!yc.has_grad()) return;
      xc.ensure_grad();
      Real* gin = xc.grad().data();
      const Real* g = yc.grad_view().data();
      const Real* in = xc.data().data();
      const Real* tc = tcache->data();
      const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(xc.numel());
#pragma omp parallel for
      for (std::ptrdiff_t i = 0; i < n; ++i) {
        const Real v = in[i];
        const Real t = tc[i];
        const Real du = a * (Real(1) + Real(3) * b * v * v);
        gin[i] += g[i] * (Real(0.5) * (Real(1) + t) +
                          Real(0.5) * v * (Real(1) - t * t) * du);
      }
    });
  }
  return y;
}

template <Scalar Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  auto y = Tensor<Real>::uninitialized(x.shape);
  const Real* in = x.data().data();
  Real* out = y.data().data();
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.numel());
#pragma omp parallel for
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = detail::sigmoid_s(in[i]);

  auto* tape = Tape<Real>::active();
  if (detail::want_grad(x, tape)) {
    y.mark_on_tape(tape->id());
    Tensor<Real> xc = x, yc = y;
    tape->record([xc, yc]() mutable {
      if (!yc.has_grad()) return;
      xc.ensure_grad();
      Real* gin = xc.grad().data();
      const Real* g = yc.grad_view().data();
      const Real* out = yc.data().data();
      const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(xc.numel());
#pragma omp parallel for
      for (std::ptrdiff_t i = 0; i < n; ++i) gin[i] += g[i] * out[i] * (Real(1) - out[i]);
    });
  }
  return y;
}

// PReLU with a single learnable scalar alpha per call site; alpha is a
// (1,1,1,1) tensor so it participates in autodiff.
template <Scalar Real>
Tensor<Real> prelu(const Tensor<Real>& x, const Tensor<Real>& alpha) {
  if (!alpha.is_scalar()) throw ShapeError("prelu: alpha must be a scalar tensor");
  const Real a = alpha.scalar();
  auto y = Tensor<Real>::uninitialized(x.shape);
  const Real* in = x.data().data();
  Real* out = y.data().data();
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = in[i] >= Real(0) ? in[i] : a * in[i];

  auto* tape = Tape<Real>::active();
  const bool gx = detail::want_grad(x, tape);
  const bool ga = detail::want_grad(alpha, tape);
  if (tape && (gx || ga)) {
    y.mark_on_tape(tape->id());
    Tensor<Real> xc = x, ac = alpha, yc = y;
    tape->record([xc, ac, yc, gx, ga]() mutable {
      if (!yc.has_grad()) return;
      const Real* g = yc.grad_view().data();
      const Real* in = xc.data().data();
      const std::size_t n = xc.numel();
      if (gx) {
        xc.ensure_grad();
        Real* gin = xc.grad().data();
        const Real a = ac.scalar();
        for (std::size_t i = 0; i < n; ++i)
          gin[i] += g[i] * (in[i] >= Real(0) ? Real(1) : a);
      }
      if (ga) {
        ac.ensure_grad();
        Real s = 0;
        for (std::size_t i = 0; i < n; ++i)
          if (in[i] < Real(0)) s += g[i] * in[i];
        ac.grad()[0] += s;
      }
    });
  }
  return y;
}

enum class ActKind { gelu, sigmoid, prelu };

// Dispatcher over the activation kinds used by the model. prelu needs its
// learnable alpha tensor.
template <Scalar Real>
Tensor<Real> activation(const Tensor<Real>& x, ActKind kind,
                        const Tensor<Real>* alpha = nullptr) {
  switch (kind) {
    case ActKind::gelu:
      return gelu(x);
    case ActKind::sigmoid:
      return sigmoid(x);
    case ActKind::prelu:
      if (!alpha) throw ParamError("activation: prelu requires alpha");
      return prelu(x, *alpha);
  }
  throw ParamError("activation: unknown kind");
}

// ---------------------------------------------------------------------------
// broadcast elementwise add / mul
// ---------------------------------------------------------------------------

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* what) {
  auto dim = [&](int da, int db) {
    if (da == db) return da;
    if (da == 1) return db;
    if (db == 1) return da;
    throw ShapeError(std::string(what) + ": incompatible shapes " + a.str() +
                     " vs " + b.str());
  };
  return Shape(dim(a.b, b.b), dim(a.h, b.h), dim(a.w, b.w), dim(a.c, b.c));
}

// index of (b,y,x,c) into a tensor of shape s, collapsing broadcast dims
inline std::size_t bidx(const Shape& s, int b, int y, int x, int c) {
  const int bb = s.b == 1 ? 0 : b;
  const int yy = s.h == 1 ? 0 : y;
  const int xx = s.w == 1 ? 0 : x;
  const int cc = s.c == 1 ? 0 : c;
  return ((static_cast<std::size_t>(bb) * s.h + yy) * s.w + xx) * s.c + cc;
}

}  // namespace detail

enum class EwOp { add, mul };

template <Scalar Real>
Tensor<Real> elementwise(const Tensor<Real>& a, const Tensor<Real>& b, EwOp op) {
  const Shape os = detail::broadcast_shape(a.shape, b.shape, "elementwise");
  auto y = Tensor<Real>::uninitialized(os);
  const Real* pa = a.data().data();
  const Real* pb = b.data().data();
  Real* out = y.data().data();
  std::size_t i = 0;
  for (int bb = 0; bb < os.b; ++bb)
    for (int yy = 0; yy < os.h; ++yy)
      for (int xx = 0; xx < os.w; ++xx)
        for (int cc = 0; cc < os.c; ++cc, ++i) {
          const Real va = pa[detail::bidx(a.shape, bb, yy, xx, cc)];
          const Real vb = pb[detail::bidx(b.shape, bb, yy, xx, cc)];
          out[i] = op == EwOp::add ? va + vb : va * vb;
        }

  auto* tape = Tape<Real>::active();
  const bool ga = detail::want_grad(a, tape);
  const bool gb = detail::want_grad(b, tape);
  if (tape && (ga || gb)) {
    y.mark_on_tape(tape->id());
    Tensor<Real> ac = a, bc = b, yc = y;
    tape->record([ac, bc, yc, op, ga, gb]() mutable {
      if (!yc.has_grad()) return;
      const Shape os = yc.shape;
      const Real* g = yc.grad_view().data();
      if (ga) ac.ensure_grad();
      if (gb) bc.ensure_grad();
      Real* pga = ga ? ac.grad().data() : nullptr;
      Real* pgb = gb ? bc.grad().data() : nullptr;
      const Real* pa = ac.data().data();
      const Real* pb = bc.data().data();
      std::size_t i = 0;
      for (int bb = 0; bb < os.b; ++bb)
        for (int yy = 0; yy < os.h; ++yy)
          for (int xx = 0; xx < os.w; ++xx)
            for (int cc = 0; cc < os.c; ++cc, ++i) {
              const Real gv = g[i];
              if (op == EwOp::add) {
                if (ga) pga[detail::bidx(ac.shape, bb, yy, xx, cc)] += gv;
                if (gb) pgb[detail::bidx(bc.shape, bb, yy, xx, cc)] += gv;
              } else {
                if (ga)
                  pga[detail::bidx(ac.shape, bb, yy, xx, cc)] +=
                      gv * pb[detail::bidx(bc.shape, bb, yy, xx, cc)];
                if (gb)
                  pgb[detail::bidx(bc.shape, bb, yy, xx, cc)] +=
                      gv * pa[detail::bidx(ac.shape, bb, yy, xx, cc)];
              }
            }
    });
  }
  return y;
}

template <Scalar Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  return elementwise(a, b, EwOp::add);
}

template <Scalar Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  return elementwise(a, b, EwOp::mul);
}

// ---------------------------------------------------------------------------
// concat_channels
// ---------------------------------------------------------------------------

template <Scalar Real>
Tensor<Real> concat_channels(const std::vector<Tensor<Real>>& xs) {
  if (xs.empty()) throw ParamError("concat_channels: empty input list");
  const Shape s0 = xs[0].shape;
  int ctot = 0;
  for (const auto& t : xs) {
    if (t.shape.b != s0.b || t.shape.h != s0.h || t.shape.w != s0.w)
      throw ShapeError("concat_channels: spatial/batch dims differ: " + s0.str() +
                       " vs " + t.shape.str());
    ctot += t.shape.c;
  }

  auto y = Tensor<Real>::uninitialized(Shape(s0.b, s0.h, s0.w, ctot));
  Real* out = y.data().data();
  const std::size_t n = static_cast<std::size_t>(s0.b) * s0.h * s0.w;
  int coff = 0;
  for (const auto& t : xs) {
    const Real* in = t.data().data();
    const int c = t.shape.c;
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < c; ++k) out[i * ctot + coff + k] = in[i * c + k];
    coff += c;
  }

  auto* tape = Tape<Real>::active();
  bool any = false;
  std::vector<bool> want(xs.size());
  if (tape)
    for (std::size_t k = 0; k < xs.size(); ++k) {
      want[k] = tape->tracks(xs[k]);
      any = any || want[k];
    }
  if (tape && any) {
    y.mark_on_tape(tape->id());
    std::vector<Tensor<Real>> cs = xs;
    Tensor<Real> yc = y;
    tape->record([cs, yc, want, ctot]() mutable {
      if (!yc.has_grad()) return;
      const Real* g = yc.grad_view().data();
      const Shape s0 = cs[0].shape;
      const std::size_t n = static_cast<std::size_t>(s0.b) * s0.h * s0.w;
      int coff = 0;
      for (std::size_t k = 0; k < cs.size(); ++k) {
        const int c = cs[k].shape.c;
        if (want[k]) {
          cs[k].ensure_grad();
          Real* gin = cs[k].grad().data();
          for (std::size_t i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) gin[i * c + j] += g[i * ctot + coff + j];
        }
        coff += c;
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// reductions & misc
// ---------------------------------------------------------------------------

template <Scalar Real>
Tensor<Real> reduce_sum(const Tensor<Real>& x) {
  Tensor<Real> y(Shape(1, 1, 1, 1));
  Real s = 0;
  for (Real v : x.data()) s += v;
  y.data()[0] = s;

  auto* tape = Tape<Real>::active();
  if (detail::want_grad(x, tape)) {
    y.mark_on_tape(tape->id());
    Tensor<Real> xc = x, yc = y;
    tape->record([xc, yc]() mutable {
      if (!yc.has_grad()) return;
      const Real g = yc.grad_view()[0];
      xc.ensure_grad();
      for (Real& v : xc.grad()) v += g;
    });
  }
  return y;
}

// Mean absolute error with sign subgradient (0 at ties).
template <Scalar Real>
Tensor<Real> l1_loss(const Tensor<Real>& pred, const Tensor<Real>& target) {
  check_same_shape(pred, target, "l1_loss");
  const std::size_t n = pred.numel();
  Tensor<Real> y(Shape(1, 1, 1, 1));
  Real s = 0;
  const Real* pp = pred.data().data();
  const Real* pt = target.data().data();
  for (std::size_t i = 0; i < n; ++i) s += std::fabs(pp[i] - pt[i]);
  y.data()[0] = s / static_cast<Real>(n);

  auto* tape = Tape<Real>::active();
  const bool gp = detail::want_grad(pred, tape);
  const bool gt = detail::want_grad(target, tape);
  if (tape && (gp || gt)) {
    y.mark_on_tape(tape->id());
    Tensor<Real> pc = pred, tc = target, yc = y;
    tape->record([pc, tc, yc, gp, gt]() mutable {
      if (!yc.has_grad()) return;
      const Real g = yc.grad_view()[0];
      const std::size_t n = pc.numel();
      const Real inv = g / static_cast<Real>(n);
      const Real* pp = pc.data().data();
      const Real* pt = tc.data().data();
      if (gp) pc.ensure_grad();
      if (gt) tc.ensure_grad();
      Real* gpd = gp ? pc.grad().data() : nullptr;
      Real* gtd = gt ? tc.grad().data() : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        const Real d = pp[i] - pt[i];
        const Real sgn = d > Real(0) ? Real(1) : (d < Real(0) ? Real(-1) : Real(0));
        if (gp) gpd[i] += inv * sgn;
        if (gt) gtd[i] -= inv * sgn;
      }
    });
  }
  return y;
}

// Inference-only clamp; not recorded on the tape.
template <Scalar Real>
Tensor<Real> clamp01(const Tensor<Real>& x) {
  auto y = Tensor<Real>::uninitialized(x.shape);
  const Real* in = x.data().data();
  Real* out = y.data().data();
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i)
    out[i] = in[i] < Real(0) ? Real(0) : (in[i] > Real(1) ? Real(1) : in[i]);
  return y;
}

}  // namespace mfm
