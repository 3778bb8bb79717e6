// mfm: synthesize data, train, evaluate, and run single-image
// super-resolution on sea-ice-concentration grids.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "mfm/checkpoint.hpp"
#include "mfm/data.hpp"
#include "mfm/grid.hpp"
#include "mfm/metrics.hpp"
#include "mfm/model.hpp"
#include "mfm/png.hpp"
#include "mfm/resample.hpp"
#include "mfm/run_config.hpp"
#include "mfm/synth.hpp"
#include "mfm/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::string pad4(int i) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%04d", i);
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

json load_manifest(const std::string& data_dir) {
  const auto path = fs::path(data_dir) / "manifest.json";
  if (!fs::exists(path))
    throw mfm::IoError("no manifest.json in " + data_dir);
  json m = json::parse(mfm::detail::read_file_bytes(path.string()));
  if (!m.contains("entries") || m["entries"].empty())
    throw mfm::FormatError("manifest has no entries: " + path.string());
  return m;
}

// The weights to run inference with: best-validation when the checkpoint
// carries them, otherwise the final weights.
const mfm::Parameters<float>& inference_params(const mfm::Checkpoint<float>& ck) {
  return (ck.has_state && ck.state.has_best) ? ck.state.best_params : ck.params;
}

mfm::Tensor<float> grid_to_tensor(const mfm::SicGrid& g) {
  mfm::Tensor<float> t(mfm::Shape(1, g.height, g.width, 1));
  for (std::size_t i = 0; i < g.values.size(); ++i)
    t.data()[i] = static_cast<float>(g.values[i]);
  return t;
}

mfm::SicGrid tensor_to_grid(const mfm::Tensor<float>& t, double cell_size_km) {
  mfm::SicGrid g(t.shape.h, t.shape.w);
  g.cell_size_km = cell_size_km;
  for (std::size_t i = 0; i < g.values.size(); ++i)
    g.values[i] = static_cast<double>(t.data()[i]);
  return g;
}

mfm::SicGrid run_model(const mfm::SicGrid& lr, const mfm::Parameters<float>& params,
                       const mfm::ModelConfig& cfg) {
  auto y = mfm::net_forward(grid_to_tensor(lr), params, cfg, false);
  return tensor_to_grid(y, lr.cell_size_km / cfg.scale);
}

// ---------------------------------------------------------------------------

int cmd_synth(int n, int size, std::uint64_t seed, const std::string& scales_arg,
              const std::string& out_dir) {
  auto scales = mfm::detail::parse_int_list(scales_arg);
  if (scales.empty()) throw mfm::ParamError("synth: no scales given");
  for (int r : scales) {
    if (r < 2 || r > 4) throw mfm::ParamError("synth: scale must be 2, 3 or 4");
    if (size % r != 0)
      throw mfm::ParamError("synth: size " + std::to_string(size) +
                            " not divisible by scale " + std::to_string(r));
  }
  if (n < 1) throw mfm::ParamError("synth: n must be >= 1");
  fs::create_directories(out_dir);

  json manifest;
  manifest["seed"] = seed;
  manifest["size"] = size;
  manifest["n"] = n;
  manifest["scales"] = scales;
  manifest["entries"] = json::array();

  for (int i = 0; i < n; ++i) {
    auto field = mfm::synth_field(size, seed + static_cast<std::uint64_t>(i));
    const std::string hr_name = "hr_" + pad4(i) + ".f32";
    const auto hr_path = (fs::path(out_dir) / hr_name).string();
    mfm::save_grid(field, hr_path, mfm::GridFormat::flat_f32);

    // degrade the stored (quantized) grid so the on-disk pair is consistent
    auto hr_stored = mfm::load_grid(hr_path, mfm::GridFormat::flat_f32);
    json entry;
    entry["hr"] = hr_name;
    entry["seed"] = seed + static_cast<std::uint64_t>(i);
    entry["lr"] = json::object();
    for (int r : scales) {
      auto lr = mfm::degrade(hr_stored, r);
      const std::string lr_name = "lr_x" + std::to_string(r) + "_" + pad4(i) + ".f32";
      mfm::save_grid(lr, (fs::path(out_dir) / lr_name).string(),
                     mfm::GridFormat::flat_f32);
      entry["lr"][std::to_string(r)] = lr_name;
    }
    manifest["entries"].push_back(entry);
  }

  mfm::detail::write_file_bytes((fs::path(out_dir) / "manifest.json").string(),
                                manifest.dump(2) + "\n");
  std::printf("synth: wrote %d grids (+%zu LR each) to %s\n", n, scales.size(),
              out_dir.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& resume_path,
              int steps_override, std::int64_t seed_override) {
  auto rc = mfm::load_run_config(config_path);
  if (steps_override >= 0) rc.train.steps = steps_override;
  if (seed_override >= 0) rc.train.seed = static_cast<std::uint64_t>(seed_override);
  rc.validate();

  const json manifest = load_manifest(data_dir);
  std::vector<mfm::SrPair> all_pairs;
  for (const auto& entry : manifest["entries"]) {
    auto hr = mfm::load_grid((fs::path(data_dir) / entry["hr"].get<std::string>()).string(),
                             mfm::GridFormat::flat_f32);
    auto filter = rc.data_edge_min_frac > 0.0
                      ? mfm::EdgeFilter::ice_edge(rc.data_edge_min_frac)
                      : mfm::EdgeFilter::none();
    const int patch = std::min({rc.data_patch, hr.height, hr.width});
    for (auto& p : mfm::extract_patches(hr, patch, patch, filter))
      all_pairs.push_back(mfm::make_sr_pair(std::move(p), rc.model.scale));
  }
  if (all_pairs.empty()) throw mfm::FormatError("train: no usable patches in " + data_dir);

  auto [train_pairs, val_pairs] =
      mfm::split_dataset(all_pairs, rc.data_train_frac, rc.train.seed);
  std::printf("train: %zu train / %zu val patches, scale x%d\n", train_pairs.size(),
              val_pairs.size(), rc.model.scale);

  fs::create_directories(out_dir);
  mfm::detail::write_file_bytes((fs::path(out_dir) / "config.resolved").string(),
                                mfm::serialize_run_config(rc));

  mfm::Parameters<float> params;
  const mfm::TrainState<float>* resume = nullptr;
  mfm::Checkpoint<float> ck;
  if (!resume_path.empty()) {
    ck = mfm::load_checkpoint<float>(resume_path);
    if (!(ck.config == rc.model))
      throw mfm::FormatError("train: checkpoint config disagrees with " + config_path);
    if (!ck.has_state)
      throw mfm::FormatError("train: checkpoint has no training state to resume");
    params = ck.params;
    resume = &ck.state;
    std::printf("train: resuming from step %llu\n",
                static_cast<unsigned long long>(ck.state.step));
  } else {
    params = mfm::init_parameters<float>(rc.model, rc.train.seed);
  }

  auto result = mfm::train(rc.model, rc.train, params, train_pairs, val_pairs, resume);

  mfm::save_checkpoint<float>(result.final_params, rc.model, &result.state,
                              (fs::path(out_dir) / "checkpoint.mfm").string());
  mfm::detail::write_file_bytes((fs::path(out_dir) / "history.csv").string(),
                                mfm::history_to_csv(result.history));

  if (result.state.has_best)
    std::printf("train: done, best val PSNR %.3f dB at step %llu\n",
                result.state.best_psnr,
                static_cast<unsigned long long>(result.state.best_step));
  else
    std::printf("train: done (%zu steps, no validation)\n", result.history.size());
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, bool baseline,
             const std::string& out_dir) {
  auto ck = mfm::load_checkpoint<float>(ckpt_path);
  const auto& params = inference_params(ck);
  const json manifest = load_manifest(data_dir);
  const std::string scale_key = std::to_string(ck.config.scale);

  std::vector<mfm::SicGrid> lrs, hrs;
  std::string name_list;
  for (const auto& entry : manifest["entries"]) {
    if (!entry["lr"].contains(scale_key))
      throw mfm::FormatError("eval: dataset has no x" + scale_key +
                             " inputs for this checkpoint");
    const std::string hr_name = entry["hr"].get<std::string>();
    const std::string lr_name = entry["lr"][scale_key].get<std::string>();
    hrs.push_back(mfm::load_grid((fs::path(data_dir) / hr_name).string(),
                                 mfm::GridFormat::flat_f32));
    lrs.push_back(mfm::load_grid((fs::path(data_dir) / lr_name).string(),
                                 mfm::GridFormat::flat_f32));
    name_list += hr_name + "|" + lr_name + ";";
  }
  const std::uint64_t inputs_hash = fnv1a(name_list);

  fs::create_directories(out_dir);
  json report;
  report["scale"] = ck.config.scale;
  report["inputs_hash"] = inputs_hash;
  report["n_images"] = hrs.size();
  report["rows"] = json::array();

  std::vector<mfm::SicGrid> model_out;
  for (const auto& lr : lrs) model_out.push_back(run_model(lr, params, ck.config));
  auto model_rec = mfm::evaluate(model_out, hrs);
  model_rec.split = "eval";
  model_rec.scale = ck.config.scale;
  {
    json row = model_rec.to_json();
    row["method"] = "mfm-net";
    row["inputs_hash"] = inputs_hash;
    report["rows"].push_back(row);
  }
  mfm::detail::write_file_bytes((fs::path(out_dir) / "metrics_model.csv").string(),
                                model_rec.to_csv());
  std::printf("%-10s x%d  PSNR %8.4f dB   SSIM %.4f   (n=%zu)\n", "mfm-net",
              ck.config.scale, model_rec.mean_psnr, model_rec.mean_ssim, hrs.size());

  if (baseline) {
    std::vector<mfm::SicGrid> bic_out;
    for (const auto& lr : lrs) bic_out.push_back(mfm::bicubic_upsample(lr, ck.config.scale));
    auto bic_rec = mfm::evaluate(bic_out, hrs);
    bic_rec.split = "eval";
    bic_rec.scale = ck.config.scale;
    json row = bic_rec.to_json();
    row["method"] = "bicubic";
    row["inputs_hash"] = inputs_hash;
    report["rows"].push_back(row);
    mfm::detail::write_file_bytes((fs::path(out_dir) / "metrics_bicubic.csv").string(),
                                  bic_rec.to_csv());
    std::printf("%-10s x%d  PSNR %8.4f dB   SSIM %.4f   (n=%zu)\n", "bicubic",
                ck.config.scale, bic_rec.mean_psnr, bic_rec.mean_ssim, hrs.size());
  }

  mfm::detail::write_file_bytes((fs::path(out_dir) / "metrics.json").string(),
                                report.dump(2) + "\n");
  return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& in_path,
              const std::string& out_path, bool export_png) {
  auto ck = mfm::load_checkpoint<float>(ckpt_path);
  auto lr = mfm::load_grid(in_path, mfm::format_from_path(in_path));
  if (lr.height > 4096 || lr.width > 4096)
    throw mfm::ParamError("infer: input larger than the 4096^2 budget");
  if (lr.has_mask())
    throw mfm::FormatError("infer: input grid has nodata cells; fill them first");

  auto sr = run_model(lr, inference_params(ck), ck.config);
  mfm::save_grid(sr, out_path, mfm::format_from_path(out_path));
  std::printf("infer: %dx%d -> %dx%d (x%d)\n", lr.height, lr.width, sr.height,
              sr.width, ck.config.scale);

  if (export_png) {
    const auto stem = fs::path(out_path).parent_path() /
                      fs::path(out_path).stem();
    mfm::write_png_gray8(stem.string() + ".png", sr.width, sr.height,
                         mfm::grid_to_gray8(sr));
    auto bicubic = mfm::bicubic_upsample(lr, ck.config.scale);
    mfm::write_png_side_by_side(stem.string() + "_compare.png", bicubic, sr);
    std::printf("infer: previews at %s.png and %s_compare.png\n",
                stem.string().c_str(), stem.string().c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MFM-Net sea-ice super-resolution pipeline"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic SIC dataset");
  int n = 16, size = 48;
  std::uint64_t seed = 0;
  std::string scales = "2";
  std::string synth_out;
  synth->add_option("--n", n, "number of HR fields");
  synth->add_option("--size", size, "HR field size in cells");
  synth->add_option("--seed", seed, "base seed");
  synth->add_option("--scales", scales, "comma-separated scales, e.g. 2,3,4");
  synth->add_option("--out", synth_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train a model");
  std::string config_path, data_dir, train_out, resume_path;
  int steps_override = -1;
  std::int64_t seed_override = -1;
  train->add_option("--config", config_path, "key = value config file")->required();
  train->add_option("--data", data_dir, "dataset directory (from synth)")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--resume", resume_path, "checkpoint to resume from");
  train->add_option("--steps", steps_override, "override train.steps");
  train->add_option("--seed", seed_override, "override train.seed");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_out = ".";
  bool baseline = false;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_flag("--baseline", baseline, "also score the bicubic baseline");
  eval->add_option("--out", eval_out, "report directory");

  // infer
  auto* infer = app.add_subcommand("infer", "super-resolve one grid");
  std::string infer_ckpt, infer_in, infer_out;
  bool export_png = false;
  infer->add_option("--ckpt", infer_ckpt, "checkpoint file")->required();
  infer->add_option("--in", infer_in, "input grid (.f32/.pgm/.csv)")->required();
  infer->add_option("--out", infer_out, "output grid path")->required();
  infer->add_flag("--png", export_png, "write PNG preview and comparison");

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return cmd_synth(n, size, seed, scales, synth_out);
    if (train->parsed())
      return cmd_train(config_path, data_dir, train_out, resume_path, steps_override,
                       seed_override);
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, baseline, eval_out);
    if (infer->parsed()) return cmd_infer(infer_ckpt, infer_in, infer_out, export_png);
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  } catch (const mfm::NumericError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const mfm::ParamError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const mfm::Error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
}
