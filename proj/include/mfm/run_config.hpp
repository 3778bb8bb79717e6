#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "mfm/common.hpp"
#include "mfm/io_util.hpp"
#include "mfm/model.hpp"
#include "mfm/train.hpp"

namespace mfm {

// Resolved run configuration: model + training + data-prep knobs. Parsed
// from a `key = value` text file; serializing materializes every default so
// a run can be reproduced from its snapshot alone.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  int data_patch = 48;
  double data_train_frac = 0.9;
  double data_edge_min_frac = 0.0;  // 0 disables the ice-edge filter

  void validate() const {
    model.validate();
    train.validate();
    if (data_patch < 8) throw ParamError("config: data.patch must be >= 8");
    if (data_patch % model.scale != 0)
      throw ParamError("config: data.patch must be divisible by model.scale");
    if (!(data_train_frac > 0.0 && data_train_frac < 1.0))
      throw ParamError("config: data.train_frac must be in (0,1)");
  }
};

namespace detail {

inline const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = {
      "model.channels",  "model.blocks",     "model.scale",
      "model.reduction", "model.ecam_kernel", "model.dilations",
      "train.lr",        "train.beta1",      "train.beta2",
      "train.eps",       "train.batch",      "train.steps",
      "train.seed",      "train.val_every",  "train.grad_clip",
      "data.patch",      "data.train_frac",  "data.edge_min_frac"};
  return keys;
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(std::stoi(item));
  }
  return out;
}

}  // namespace detail

inline void apply_config_key(RunConfig& rc, const std::string& key,
                             const std::string& value) {
  try {
    if (key == "model.channels") rc.model.channels = std::stoi(value);
    else if (key == "model.blocks") rc.model.blocks = std::stoi(value);
    else if (key == "model.scale") rc.model.scale = std::stoi(value);
    else if (key == "model.reduction") rc.model.reduction = std::stoi(value);
    else if (key == "model.ecam_kernel") rc.model.ecam_kernel = std::stoi(value);
    else if (key == "model.dilations") rc.model.dilations = detail::parse_int_list(value);
    else if (key == "train.lr") rc.train.lr = std::stod(value);
    else if (key == "train.beta1") rc.train.beta1 = std::stod(value);
    else if (key == "train.beta2") rc.train.beta2 = std::stod(value);
    else if (key == "train.eps") rc.train.eps = std::stod(value);
    else if (key == "train.batch") rc.train.batch = std::stoi(value);
    else if (key == "train.steps") rc.train.steps = std::stoi(value);
    else if (key == "train.seed") rc.train.seed = std::stoull(value);
    else if (key == "train.val_every") rc.train.val_every = std::stoi(value);
    else if (key == "train.grad_clip") rc.train.grad_clip = std::stod(value);
    else if (key == "data.patch") rc.data_patch = std::stoi(value);
    else if (key == "data.train_frac") rc.data_train_frac = std::stod(value);
    else if (key == "data.edge_min_frac") rc.data_edge_min_frac = std::stod(value);
    else {
      std::string valid;
      for (const auto& k : detail::run_config_keys()) valid += "\n  " + k;
      throw ParamError("config: unknown key '" + key + "'. Valid keys:" + valid);
    }
  } catch (const std::invalid_argument&) {
    throw ParamError("config: bad value '" + value + "' for key " + key);
  } catch (const std::out_of_range&) {
    throw ParamError("config: value out of range '" + value + "' for key " + key);
  }
}

inline RunConfig parse_run_config(const std::string& text) {
  RunConfig rc;
  std::istringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("config: line " + std::to_string(lineno) +
                       " is not 'key = value': " + line);
    apply_config_key(rc, detail::trim(line.substr(0, eq)),
                     detail::trim(line.substr(eq + 1)));
  }
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  return parse_run_config(detail::read_file_bytes(path));
}

// Every key materialized; reparsing the output reproduces this config.
inline std::string serialize_run_config(const RunConfig& rc) {
  std::ostringstream out;
  out.precision(17);
  out << "model.channels = " << rc.model.channels << "\n";
  out << "model.blocks = " << rc.model.blocks << "\n";
  out << "model.scale = " << rc.model.scale << "\n";
  out << "model.reduction = " << rc.model.reduction << "\n";
  out << "model.ecam_kernel = " << rc.model.ecam_kernel << "\n";
  out << "model.dilations = ";
  for (std::size_t i = 0; i < rc.model.dilations.size(); ++i) {
    if (i) out << ",";
    out << rc.model.dilations[i];
  }
  out << "\n";
  out << "train.lr = " << rc.train.lr << "\n";
  out << "train.beta1 = " << rc.train.beta1 << "\n";
  out << "train.beta2 = " << rc.train.beta2 << "\n";
  out << "train.eps = " << rc.train.eps << "\n";
  out << "train.batch = " << rc.train.batch << "\n";
  out << "train.steps = " << rc.train.steps << "\n";
  out << "train.seed = " << rc.train.seed << "\n";
  out << "train.val_every = " << rc.train.val_every << "\n";
  out << "train.grad_clip = " << rc.train.grad_clip << "\n";
  out << "data.patch = " << rc.data_patch << "\n";
  out << "data.train_frac = " << rc.data_train_frac << "\n";
  out << "data.edge_min_frac = " << rc.data_edge_min_frac << "\n";
  return out.str();
}

}  // namespace mfm
