#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mfm/common.hpp"
#include "mfm/ops.hpp"
#include "mfm/rng.hpp"
#include "mfm/tensor.hpp"

namespace mfm {

// Architecture hyperparameters. The channel count must divide evenly into
// the DAGM squeeze width (C/reduction) and the shuffle groups (one group
// per dilation branch).
struct ModelConfig {
  int channels = 36;
  int blocks = 8;
  int scale = 2;
  int reduction = 4;
  int ecam_kernel = 3;
  std::vector<int> dilations = {1, 2, 3, 4};

  int groups() const { return static_cast<int>(dilations.size()); }

  void validate() const {
    if (channels < 4) throw ParamError("config: channels must be >= 4");
    if (blocks < 1) throw ParamError("config: blocks must be >= 1");
    if (scale < 2 || scale > 4) throw ParamError("config: scale must be 2, 3 or 4");
    if (reduction < 1 || channels % reduction != 0)
      throw ParamError("config: channels must be divisible by reduction");
    if (dilations.empty()) throw ParamError("config: dilations must be non-empty");
    for (int d : dilations)
      if (d < 1) throw ParamError("config: dilations must be >= 1");
    if (channels % groups() != 0)
      throw ParamError("config: channels must be divisible by the dilation-branch count");
    if (ecam_kernel < 1 || ecam_kernel % 2 == 0)
      throw ParamError("config: ecam_kernel must be odd and >= 1");
  }

  bool operator==(const ModelConfig&) const = default;
};

// Named weight collection with stable insertion order (the canonical order
// used by init, the optimizer, and the checkpoint format).
template <Scalar Real>
class Parameters {
 public:
  Tensor<Real>& add(const std::string& name, Tensor<Real> t) {
    if (index_.count(name)) throw ParamError("parameters: duplicate name " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor<Real>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ParamError("parameters: no such parameter " + name);
    return items_[it->second].second;
  }
  Tensor<Real>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ParamError("parameters: no such parameter " + name);
    return items_[it->second].second;
  }

  std::vector<std::pair<std::string, Tensor<Real>>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor<Real>>>& items() const { return items_; }

  std::size_t size() const { return items_.size(); }

  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
  }

  void set_requires_grad(bool v) {
    for (auto& [name, t] : items_) t.set_requires_grad(v);
  }

  void zero_grad() {
    for (auto& [name, t] : items_) t.zero_grad();
  }

  Parameters clone() const {
    Parameters p;
    for (const auto& [name, t] : items_) {
      Tensor<Real> c = t.clone();
      c.set_requires_grad(t.requires_grad());
      p.add(name, std::move(c));
    }
    return p;
  }

 private:
  std::vector<std::pair<std::string, Tensor<Real>>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

template <Scalar Real>
ConvWeights<Real> conv_w(const Parameters<Real>& p, const std::string& prefix,
                         int dilation = 1) {
  return ConvWeights<Real>(p.at(prefix + ".kernel"), p.at(prefix + ".bias"), dilation);
}

template <Scalar Real>
Conv1dWeights<Real> conv1d_w(const Parameters<Real>& p, const std::string& prefix) {
  return Conv1dWeights<Real>{p.at(prefix + ".kernel"), p.at(prefix + ".bias")};
}

}  // namespace detail

inline constexpr double kLayerNormEps = 1e-6;
inline constexpr double kPReluInit = 0.25;

// ---------------------------------------------------------------------------
// module forwards
// ---------------------------------------------------------------------------

// Channel attention: X * sigmoid(psi2(psi1(GAP(X)))), psi_i 1-D channel convs.
template <Scalar Real>
Tensor<Real> ecam_forward(const Tensor<Real>& x, const Parameters<Real>& p,
                          const std::string& prefix) {
  auto pooled = global_avg_pool(x);
  auto a1 = conv1d_channel(pooled, detail::conv1d_w(p, prefix + "psi1"));
  auto a2 = conv1d_channel(a1, detail::conv1d_w(p, prefix + "psi2"));
  auto att = sigmoid(a2);
  return mul(x, att);
}

// Multi-scale fusion: shuffle, four dilated 3x3 branches, concat, 1x1 fuse,
// then GELU-gated modulation of the shuffled feature.
template <Scalar Real>
Tensor<Real> msfm_forward(const Tensor<Real>& x, const Parameters<Real>& p,
                          const std::string& prefix, const ModelConfig& cfg) {
  auto xs = channel_shuffle(x, cfg.groups());
  std::vector<Tensor<Real>> branches;
  branches.reserve(cfg.dilations.size());
  for (std::size_t i = 0; i < cfg.dilations.size(); ++i)
    branches.push_back(conv2d(
        xs, detail::conv_w(p, prefix + "branch" + std::to_string(i), cfg.dilations[i])));
  auto fused = conv2d(concat_channels(branches), detail::conv_w(p, prefix + "fuse"));
  return mul(xs, gelu(fused));
}

// Dual-attention gate: a 1-channel spatial sigmoid map plus a C-channel
// sigmoid vector gate the 3x3-refined feature; a residual GELU 1x1 closes.
template <Scalar Real>
Tensor<Real> dagm_forward(const Tensor<Real>& x, const Parameters<Real>& p,
                          const std::string& prefix, const ModelConfig& cfg) {
  (void)cfg;
  auto xh = conv2d(x, detail::conv_w(p, prefix + "conv"));

  auto s = conv2d(xh, detail::conv_w(p, prefix + "sp1"));
  s = prelu(s, p.at(prefix + "sp_alpha"));
  auto f_s = sigmoid(conv2d(s, detail::conv_w(p, prefix + "sp2")));  // (b,H,W,1)

  auto c = global_avg_pool(xh);
  c = conv2d(c, detail::conv_w(p, prefix + "ch1"));
  c = prelu(c, p.at(prefix + "ch_alpha"));
  auto f_c = sigmoid(conv2d(c, detail::conv_w(p, prefix + "ch2")));  // (b,1,1,C)

  auto gated = mul(add(f_s, f_c), xh);
  return conv2d(gelu(add(gated, x)), detail::conv_w(p, prefix + "out"));
}

// One modulation block: X + LN(DAGM(MSFM(ECAM(X)))).
template <Scalar Real>
Tensor<Real> block_forward(const Tensor<Real>& x, const Parameters<Real>& p,
                           const std::string& prefix, const ModelConfig& cfg) {
  auto y = ecam_forward(x, p, prefix + "ecam.");
  y = msfm_forward(y, p, prefix + "msfm.", cfg);
  y = dagm_forward(y, p, prefix + "dagm.", cfg);
  y = layer_norm(y, p.at(prefix + "ln.gamma"), p.at(prefix + "ln.beta"),
                 Real(kLayerNormEps));
  return add(x, y);
}

// Full network: shallow 3x3 conv, N blocks, global residual, 3x3 conv to r^2
// channels, pixel shuffle. Output is clamped to [0,1] unless training, where
// the raw values are kept for gradient flow.
template <Scalar Real>
Tensor<Real> net_forward(const Tensor<Real>& x, const Parameters<Real>& p,
                         const ModelConfig& cfg, bool training = false) {
  if (x.shape.c != 1)
    throw ShapeError("net_forward: expected single-channel input, got " +
                     x.shape.str());
  auto shallow = conv2d(x, detail::conv_w(p, "head"));
  auto deep = shallow;
  for (int i = 0; i < cfg.blocks; ++i)
    deep = block_forward(deep, p, "block" + std::to_string(i) + ".", cfg);
  deep = add(deep, shallow);
  auto up = pixel_shuffle(conv2d(deep, detail::conv_w(p, "tail")), cfg.scale);
  return training ? up : clamp01(up);
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

// Canonical parameter inventory: names and shapes in creation order. This
// is the single source of truth shared by init and the checkpoint manifest
// validation. Conv kernels are (kh,kw,ic,oc); the ECAM 1-D kernels use
// (1,1,k,1) so fan-in is uniformly the product of the leading three dims.
inline std::vector<std::pair<std::string, Shape>> parameter_shapes(
    const ModelConfig& cfg) {
  cfg.validate();
  const int C = cfg.channels;
  const int Cr = C / cfg.reduction;
  const int G = cfg.groups();

  std::vector<std::pair<std::string, Shape>> out;
  auto conv = [&](const std::string& name, int kh, int kw, int ic, int oc) {
    out.emplace_back(name + ".kernel", Shape(kh, kw, ic, oc));
    out.emplace_back(name + ".bias", Shape(1, 1, 1, oc));
  };

  conv("head", 3, 3, 1, C);
  for (int i = 0; i < cfg.blocks; ++i) {
    const std::string b = "block" + std::to_string(i) + ".";
    conv(b + "ecam.psi1", 1, 1, cfg.ecam_kernel, 1);
    conv(b + "ecam.psi2", 1, 1, cfg.ecam_kernel, 1);
    for (int j = 0; j < G; ++j) conv(b + "msfm.branch" + std::to_string(j), 3, 3, C, C);
    conv(b + "msfm.fuse", 1, 1, G * C, C);
    conv(b + "dagm.conv", 3, 3, C, C);
    conv(b + "dagm.sp1", 1, 1, C, Cr);
    out.emplace_back(b + "dagm.sp_alpha", Shape(1, 1, 1, 1));
    conv(b + "dagm.sp2", 1, 1, Cr, 1);
    conv(b + "dagm.ch1", 1, 1, C, Cr);
    out.emplace_back(b + "dagm.ch_alpha", Shape(1, 1, 1, 1));
    conv(b + "dagm.ch2", 1, 1, Cr, C);
    conv(b + "dagm.out", 1, 1, C, C);
    out.emplace_back(b + "ln.gamma", Shape(1, 1, 1, C));
    out.emplace_back(b + "ln.beta", Shape(1, 1, 1, C));
  }
  conv("tail", 3, 3, C, cfg.scale * cfg.scale);
  return out;
}

// He fan-in normal kernels, zero biases, LN gamma=1/beta=0, PReLU alpha=0.25.
// Parameter creation order is canonical and deterministic per seed.
template <Scalar Real>
Parameters<Real> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Parameters<Real> p;
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    Tensor<Real> t(shape);
    if (name.ends_with(".kernel")) {
      const double fan_in = static_cast<double>(shape.b) * shape.h * shape.w;
      const double std_dev = std::sqrt(2.0 / fan_in);
      for (auto& v : t.data()) v = static_cast<Real>(rng.normal() * std_dev);
    } else if (name.ends_with("ln.gamma")) {
      std::fill(t.data().begin(), t.data().end(), Real(1));
    } else if (name.ends_with("_alpha")) {
      t.data()[0] = Real(kPReluInit);
    }
    // biases and ln.beta stay zero
    p.add(name, std::move(t));
  }
  p.set_requires_grad(true);
  return p;
}

// Closed-form scalar count implied by the layer inventory above.
inline std::size_t parameter_count(const ModelConfig& cfg) {
  const std::size_t C = cfg.channels;
  const std::size_t Cr = C / cfg.reduction;
  const std::size_t G = cfg.groups();
  const std::size_t k = cfg.ecam_kernel;
  const std::size_t r2 = static_cast<std::size_t>(cfg.scale) * cfg.scale;

  const std::size_t ecam = 2 * (k + 1);
  const std::size_t msfm = G * (9 * C * C + C) + (G * C * C + C);
  const std::size_t dagm = (9 * C * C + C)            // 3x3 refine
                           + (C * Cr + Cr) + 1        // sp1 + alpha
                           + (Cr * 1 + 1)             // sp2
                           + (C * Cr + Cr) + 1        // ch1 + alpha
                           + (Cr * C + C)             // ch2
                           + (C * C + C);             // out
  const std::size_t ln = 2 * C;
  const std::size_t head = 9 * 1 * C + C;
  const std::size_t tail = 9 * C * r2 + r2;

  return head + cfg.blocks * (ecam + msfm + dagm + ln) + tail;
}

}  // namespace mfm
