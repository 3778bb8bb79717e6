#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mfm/common.hpp"
#include "mfm/data.hpp"
#include "mfm/metrics.hpp"
#include "mfm/model.hpp"
#include "mfm/ops.hpp"
#include "mfm/rng.hpp"
#include "mfm/tape.hpp"

namespace mfm {

struct TrainConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch = 8;
  int steps = 2000;
  std::uint64_t seed = 0;
  double grad_clip = 0.0;  // max global grad norm; 0 disables clipping
  int val_every = 200;

  void validate() const {
    if (!(lr > 0.0)) throw ParamError("train config: lr must be positive");
    if (batch < 1) throw ParamError("train config: batch must be >= 1");
    if (steps < 0) throw ParamError("train config: steps must be >= 0");
    if (val_every < 1) throw ParamError("train config: val_every must be >= 1");
    if (grad_clip < 0.0) throw ParamError("train config: grad_clip must be >= 0");
  }
};

// Cosine decay to zero over the full run; s is the 1-based step number.
inline double lr_at_step(const TrainConfig& cfg, std::uint64_t s) {
  if (cfg.steps <= 1) return cfg.lr;
  const double t = static_cast<double>(s - 1) / static_cast<double>(cfg.steps);
  return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

// First/second moment buffers aligned with the Parameters order.
template <Scalar Real>
struct AdamState {
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;
  std::uint64_t t = 0;

  void init(const Parameters<Real>& p) {
    m.clear();
    v.clear();
    for (const auto& [name, tensor] : p.items()) {
      m.emplace_back(tensor.numel(), Real(0));
      v.emplace_back(tensor.numel(), Real(0));
    }
    t = 0;
  }

  bool matches(const Parameters<Real>& p) const {
    if (m.size() != p.size()) return false;
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m[i].size() != p.items()[i].second.numel()) return false;
    return true;
  }
};

// One bias-corrected Adam update. An absent gradient slot counts as a zero
// gradient (moments decay, the parameter holds still at fresh state).
template <Scalar Real>
void adam_step(Parameters<Real>& params, AdamState<Real>& state, double lr_t,
               const TrainConfig& cfg) {
  if (!state.matches(params)) throw ParamError("adam_step: state/parameter mismatch");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const Real b1 = static_cast<Real>(cfg.beta1);
  const Real b2 = static_cast<Real>(cfg.beta2);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, tensor] = params.items()[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    const bool has_g = tensor.has_grad();
    const Real* g = has_g ? tensor.grad_view().data() : nullptr;
    Real* w = tensor.data().data();
    for (std::size_t j = 0; j < m.size(); ++j) {
      const Real gj = has_g ? g[j] : Real(0);
      if (!finite(gj))
        throw NumericError("adam_step: non-finite gradient in parameter " + name);
      m[j] = b1 * m[j] + (Real(1) - b1) * gj;
      v[j] = b2 * v[j] + (Real(1) - b2) * gj * gj;
      const double mhat = static_cast<double>(m[j]) / bc1;
      const double vhat = static_cast<double>(v[j]) / bc2;
      w[j] -= static_cast<Real>(lr_t * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

// Scales all gradients so the global L2 norm is at most max_norm.
template <Scalar Real>
double clip_gradients(Parameters<Real>& params, double max_norm) {
  double sq = 0.0;
  for (auto& [name, t] : params.items()) {
    if (!t.has_grad()) continue;
    for (Real g : t.grad_view()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const Real s = static_cast<Real>(max_norm / norm);
    for (auto& [name, t] : params.items()) {
      if (!t.has_grad()) continue;
      for (Real& g : t.grad()) g *= s;
    }
  }
  return norm;
}

struct HistoryRow {
  std::uint64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  bool has_val = false;
  double val_psnr = 0.0;
  double val_ssim = 0.0;
};

inline std::string history_to_csv(const std::vector<HistoryRow>& rows) {
  std::ostringstream out;
  out.precision(12);
  out << "step,loss,lr,val_psnr,val_ssim\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.loss << ',' << r.lr << ',';
    if (r.has_val) out << r.val_psnr;
    out << ',';
    if (r.has_val) out << r.val_ssim;
    out << '\n';
  }
  return out.str();
}

// Everything needed to continue a run exactly where it stopped.
template <Scalar Real>
struct TrainState {
  AdamState<Real> adam;
  std::uint64_t step = 0;
  std::string sampler_rng;
  double best_psnr = -std::numeric_limits<double>::infinity();
  double best_ssim = 0.0;
  std::uint64_t best_step = 0;
  bool has_best = false;
  Parameters<Real> best_params;
};

template <Scalar Real>
struct TrainResult {
  Parameters<Real> params;       // best-validation weights (final if no val ran)
  Parameters<Real> final_params; // weights after the last step, for resuming
  TrainState<Real> state;
  std::vector<HistoryRow> history;
};

namespace detail {

template <Scalar Real>
Tensor<Real> grid_to_tensor(const SicGrid& g) {
  Tensor<Real> t(Shape(1, g.height, g.width, 1));
  for (std::size_t i = 0; i < g.values.size(); ++i)
    t.data()[i] = static_cast<Real>(g.values[i]);
  return t;
}

template <Scalar Real>
SicGrid tensor_to_grid(const Tensor<Real>& t, double cell_size_km) {
  SicGrid g(t.shape.h, t.shape.w);
  g.cell_size_km = cell_size_km;
  for (std::size_t i = 0; i < g.values.size(); ++i)
    g.values[i] = static_cast<double>(t.data()[i]);
  return g;
}

}  // namespace detail

// Runs sample -> forward -> L1 -> backward -> Adam for cfg.steps steps with
// deterministic seeded sampling, periodic validation, and best-PSNR tracking
// (ties resolved toward the later step). Pass a TrainState from a checkpoint
// to resume; the continued trajectory matches the unbroken run exactly.
// stop_after > 0 halts the loop early at that step while keeping the lr
// schedule pinned to cfg.steps, producing a resumable mid-run state.
template <Scalar Real>
TrainResult<Real> train(const ModelConfig& model_cfg, const TrainConfig& cfg,
                        Parameters<Real> params, const std::vector<SrPair>& train_pairs,
                        const std::vector<SrPair>& val_pairs,
                        const TrainState<Real>* resume = nullptr,
                        std::uint64_t stop_after = 0) {
  model_cfg.validate();
  cfg.validate();
  if (train_pairs.empty()) throw ParamError("train: empty training set");
  for (const auto& p : train_pairs) {
    if (p.scale != model_cfg.scale)
      throw ParamError("train: pair scale " + std::to_string(p.scale) +
                       " does not match model scale " + std::to_string(model_cfg.scale));
    if (p.hr.height != train_pairs[0].hr.height || p.hr.width != train_pairs[0].hr.width)
      throw ParamError("train: training patches must share one size");
  }

  const int lh = train_pairs[0].lr.height, lw = train_pairs[0].lr.width;
  const int hh = train_pairs[0].hr.height, hw = train_pairs[0].hr.width;

  // cache tensor views of the dataset
  std::vector<Tensor<Real>> lr_cache, hr_cache;
  lr_cache.reserve(train_pairs.size());
  for (const auto& p : train_pairs) {
    lr_cache.push_back(detail::grid_to_tensor<Real>(p.lr));
    hr_cache.push_back(detail::grid_to_tensor<Real>(p.hr));
  }

  TrainResult<Real> result;
  TrainState<Real>& st = result.state;
  Rng sampler(cfg.seed);
  if (resume) {
    st = *resume;
    if (!st.adam.matches(params)) throw FormatError("train: resume state mismatch");
    sampler.load_state(st.sampler_rng);
  } else {
    st.adam.init(params);
  }

  params.set_requires_grad(true);

  const int b = cfg.batch;
  Tensor<Real> lr_batch(Shape(b, lh, lw, 1));
  Tensor<Real> hr_batch(Shape(b, hh, hw, 1));

  const std::uint64_t until =
      stop_after > 0 ? std::min<std::uint64_t>(stop_after, cfg.steps)
                     : static_cast<std::uint64_t>(cfg.steps);
  for (std::uint64_t s = st.step + 1; s <= until; ++s) {
    for (int k = 0; k < b; ++k) {
      const std::size_t pick = sampler.below(train_pairs.size());
      std::copy(lr_cache[pick].data().begin(), lr_cache[pick].data().end(),
                lr_batch.data().begin() + static_cast<std::size_t>(k) * lh * lw);
      std::copy(hr_cache[pick].data().begin(), hr_cache[pick].data().end(),
                hr_batch.data().begin() + static_cast<std::size_t>(k) * hh * hw);
    }

    double loss_value;
    {
      Tape<Real> tape;
      typename Tape<Real>::Scope scope(tape);
      auto pred = net_forward(lr_batch, params, model_cfg, true);
      auto loss = l1_loss(pred, hr_batch);
      loss_value = static_cast<double>(loss.scalar());
      if (!std::isfinite(loss_value))
        throw NumericError("train: non-finite loss at step " + std::to_string(s));
      params.zero_grad();
      tape.backward(loss);
    }
    if (cfg.grad_clip > 0.0) clip_gradients(params, cfg.grad_clip);
    adam_step(params, st.adam, lr_at_step(cfg, s), cfg);
    st.step = s;

    HistoryRow row;
    row.step = s;
    row.loss = loss_value;
    row.lr = lr_at_step(cfg, s);

    const bool last = s == static_cast<std::uint64_t>(cfg.steps);
    if (!val_pairs.empty() && (s % static_cast<std::uint64_t>(cfg.val_every) == 0 || last)) {
      std::vector<SicGrid> outs, gts;
      for (const auto& vp : val_pairs) {
        auto x = detail::grid_to_tensor<Real>(vp.lr);
        auto y = net_forward(x, params, model_cfg, false);
        outs.push_back(detail::tensor_to_grid(y, vp.hr.cell_size_km));
        gts.push_back(vp.hr);
      }
      auto rec = evaluate(outs, gts);
      row.has_val = true;
      row.val_psnr = rec.mean_psnr;
      row.val_ssim = rec.mean_ssim;
      if (!st.has_best || rec.mean_psnr >= st.best_psnr) {
        st.has_best = true;
        st.best_psnr = rec.mean_psnr;
        st.best_ssim = rec.mean_ssim;
        st.best_step = s;
        st.best_params = params.clone();
      }
    }
    result.history.push_back(row);
  }

  st.sampler_rng = sampler.save_state();
  result.final_params = params;
  result.params = st.has_best ? st.best_params.clone() : params;
  return result;
}

}  // namespace mfm
