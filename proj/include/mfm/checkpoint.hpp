#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfm/common.hpp"
#include "mfm/io_util.hpp"
#include "mfm/model.hpp"
#include "mfm/train.hpp"

namespace mfm {

// Binary checkpoint: header (magic, version, ModelConfig, parameter manifest
// of name/shape/offset) followed by raw little-endian f32 weights, then an
// optional training-state section (Adam moments, sampler RNG, best weights)
// that makes a run resumable. Weight round-trips are bit-exact in f32.
//
// Layout (all integers little-endian):
//   "MFMC" | u32 version
//   i32 channels, blocks, scale, reduction, ecam_kernel, n_dil, dil[n_dil]
//   u32 n_params; per param: u32 name_len, name, u32 dims[4], u64 offset
//   u64 data_bytes | f32 weights...
//   u8 has_state; if 1:
//     u64 step, u64 adam_t, f64 best_psnr, f64 best_ssim, u64 best_step,
//     u8 has_best, f32 adam_m[...], f32 adam_v[...], f32 best_weights[...],
//     u32 rng_len, rng text

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <Scalar Real>
struct Checkpoint {
  ModelConfig config;
  Parameters<Real> params;  // weights after the last completed step
  bool has_state = false;
  TrainState<Real> state;
};

namespace detail {

template <Scalar Real>
void put_param_data(std::string& out, const Parameters<Real>& p) {
  for (const auto& [name, t] : p.items())
    for (Real v : t.data()) put_f32_le(out, static_cast<float>(v));
}

struct ByteReader {
  const unsigned char* p;
  std::size_t size;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (pos + n > size)
      throw ParseError(std::string("checkpoint: truncated reading ") + what +
                       " at byte " + std::to_string(pos));
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    const std::uint32_t v = get_u32_le(p + pos);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    const std::uint64_t v = get_u64_le(p + pos);
    pos += 8;
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    const double v = get_f64_le(p + pos);
    pos += 8;
    return v;
  }
  float f32(const char* what) {
    need(4, what);
    const float v = get_f32_le(p + pos);
    pos += 4;
    return v;
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return p[pos++];
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(p + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace detail

template <Scalar Real>
void save_checkpoint(const Parameters<Real>& params, const ModelConfig& cfg,
                     const TrainState<Real>* state, const std::string& path) {
  std::string out = "MFMC";
  detail::put_u32_le(out, kCheckpointVersion);
  detail::put_u32_le(out, static_cast<std::uint32_t>(cfg.channels));
  detail::put_u32_le(out, static_cast<std::uint32_t>(cfg.blocks));
  detail::put_u32_le(out, static_cast<std::uint32_t>(cfg.scale));
  detail::put_u32_le(out, static_cast<std::uint32_t>(cfg.reduction));
  detail::put_u32_le(out, static_cast<std::uint32_t>(cfg.ecam_kernel));
  detail::put_u32_le(out, static_cast<std::uint32_t>(cfg.dilations.size()));
  for (int d : cfg.dilations) detail::put_u32_le(out, static_cast<std::uint32_t>(d));

  detail::put_u32_le(out, static_cast<std::uint32_t>(params.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params.items()) {
    detail::put_u32_le(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32_le(out, static_cast<std::uint32_t>(t.shape.b));
    detail::put_u32_le(out, static_cast<std::uint32_t>(t.shape.h));
    detail::put_u32_le(out, static_cast<std::uint32_t>(t.shape.w));
    detail::put_u32_le(out, static_cast<std::uint32_t>(t.shape.c));
    detail::put_u64_le(out, offset);
    offset += t.numel() * 4;
  }
  detail::put_u64_le(out, offset);
  detail::put_param_data(out, params);

  if (state) {
    out.push_back(1);
    detail::put_u64_le(out, state->step);
    detail::put_u64_le(out, state->adam.t);
    detail::put_f64_le(out, state->best_psnr);
    detail::put_f64_le(out, state->best_ssim);
    detail::put_u64_le(out, state->best_step);
    out.push_back(state->has_best ? 1 : 0);
    for (const auto& mv : state->adam.m)
      for (Real v : mv) detail::put_f32_le(out, static_cast<float>(v));
    for (const auto& vv : state->adam.v)
      for (Real v : vv) detail::put_f32_le(out, static_cast<float>(v));
    if (state->has_best) detail::put_param_data(out, state->best_params);
    detail::put_u32_le(out, static_cast<std::uint32_t>(state->sampler_rng.size()));
    out += state->sampler_rng;
  } else {
    out.push_back(0);
  }

  detail::write_file_bytes(path, out);
}

template <Scalar Real>
Checkpoint<Real> load_checkpoint(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  detail::ByteReader r{reinterpret_cast<const unsigned char*>(bytes.data()),
                       bytes.size()};

  if (r.str(4, "magic") != "MFMC")
    throw FormatError("checkpoint: bad magic in " + path);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));

  Checkpoint<Real> ck;
  ck.config.channels = static_cast<int>(r.u32("channels"));
  ck.config.blocks = static_cast<int>(r.u32("blocks"));
  ck.config.scale = static_cast<int>(r.u32("scale"));
  ck.config.reduction = static_cast<int>(r.u32("reduction"));
  ck.config.ecam_kernel = static_cast<int>(r.u32("ecam_kernel"));
  const std::uint32_t n_dil = r.u32("n_dilations");
  if (n_dil == 0 || n_dil > 16) throw FormatError("checkpoint: bad dilation count");
  ck.config.dilations.clear();
  for (std::uint32_t i = 0; i < n_dil; ++i)
    ck.config.dilations.push_back(static_cast<int>(r.u32("dilation")));
  ck.config.validate();

  // The manifest must agree exactly with what the stored config implies;
  // a header edited after the fact fails here rather than reshaping.
  const auto expected = parameter_shapes(ck.config);
  const std::uint32_t n_params = r.u32("param_count");
  if (n_params != expected.size())
    throw FormatError("checkpoint: manifest has " + std::to_string(n_params) +
                      " parameters, config implies " + std::to_string(expected.size()));

  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const std::uint32_t name_len = r.u32("name length");
    const std::string name = r.str(name_len, "name");
    Shape s;
    s.b = static_cast<int>(r.u32("dim"));
    s.h = static_cast<int>(r.u32("dim"));
    s.w = static_cast<int>(r.u32("dim"));
    s.c = static_cast<int>(r.u32("dim"));
    const std::uint64_t off = r.u64("offset");
    if (name != expected[i].first || !(s == expected[i].second) || off != offset)
      throw FormatError("checkpoint: manifest entry '" + name +
                        "' disagrees with config (expected '" + expected[i].first +
                        "' " + expected[i].second.str() + ")");
    ck.params.add(name, Tensor<Real>(s));
    offset += s.numel() * 4;
  }
  const std::uint64_t data_bytes = r.u64("data size");
  if (data_bytes != offset)
    throw FormatError("checkpoint: data section size disagrees with manifest");

  for (auto& [name, t] : ck.params.items())
    for (auto& v : t.data()) v = static_cast<Real>(r.f32("weights"));
  ck.params.set_requires_grad(true);

  const std::uint8_t has_state = r.u8("state flag");
  if (has_state) {
    ck.has_state = true;
    auto& st = ck.state;
    st.step = r.u64("step");
    st.adam.init(ck.params);
    st.adam.t = r.u64("adam t");
    st.best_psnr = r.f64("best psnr");
    st.best_ssim = r.f64("best ssim");
    st.best_step = r.u64("best step");
    st.has_best = r.u8("best flag") != 0;
    for (auto& mv : st.adam.m)
      for (auto& v : mv) v = static_cast<Real>(r.f32("adam m"));
    for (auto& vv : st.adam.v)
      for (auto& v : vv) v = static_cast<Real>(r.f32("adam v"));
    if (st.has_best) {
      st.best_params = ck.params.clone();
      for (auto& [name, t] : st.best_params.items())
        for (auto& v : t.data()) v = static_cast<Real>(r.f32("best weights"));
    }
    const std::uint32_t rng_len = r.u32("rng length");
    st.sampler_rng = r.str(rng_len, "rng state");
  }
  return ck;
}

}  // namespace mfm
