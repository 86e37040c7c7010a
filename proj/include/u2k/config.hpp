// Line-oriented experiment configuration: "section.key = value" per line,
// '#' comments, no nesting. Unknown keys are rejected so typos surface as
// config errors.
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "u2k/common.hpp"
#include "u2k/degradation.hpp"
#include "u2k/u2k_core.hpp"

namespace u2k {

class KvConfig {
 public:
  static KvConfig parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail_io("config: cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_text(ss.str(), path);
  }

  static KvConfig parse_text(const std::string& text, const std::string& origin = "<inline>") {
    KvConfig cfg;
    cfg.origin_ = origin;
    std::istringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
      ++lineno;
      std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      auto eq = t.find('=');
      if (eq == std::string::npos)
        fail_config(strfmt("config: line %d is not 'section.key = value'", lineno));
      std::string key = trim(t.substr(0, eq));
      std::string val = trim(t.substr(eq + 1));
      if (key.find('.') == std::string::npos)
        fail_config(strfmt("config: key '%s' must be section.key (line %d)", key.c_str(), lineno));
      cfg.values_[key] = val;
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require_str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) fail_config("config: missing required key '" + key + "'");
    return it->second;
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      long long v = std::stoll(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      fail_config("config: key '" + key + "' is not an integer: " + it->second);
    }
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      fail_config("config: key '" + key + "' is not a number: " + it->second);
    }
  }

  void set(const std::string& key, const std::string& val) { values_[key] = val; }

  std::vector<std::string> keys_with_section(const std::string& section) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (k.rfind(section + ".", 0) == 0) out.push_back(k);
    return out;
  }

  const std::map<std::string, std::string>& all() const { return values_; }
  const std::string& origin() const { return origin_; }

 private:
  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
  std::string origin_;
};

// Builds a degradation spec from one config section (known., unknown., or a
// sweep cell section). bands_hsi comes from the data section.
inline DegradationSpec degradation_from_config(const KvConfig& cfg, const std::string& section,
                                               int bands_hsi, const std::string& config_dir) {
  DegradationSpec spec;
  spec.scale = int(cfg.get_int(section + ".scale", 4));
  require(spec.scale >= 1, ErrorKind::Config, "config: " + section + ".scale must be >= 1");

  std::string kind = cfg.get_str(section + ".psf_kind", "gaussian");
  int size = int(cfg.get_int(section + ".psf_size", 7));
  if (kind == "gaussian") {
    spec.psf = make_gaussian_psf(size, cfg.get_double(section + ".psf_sigma", 2.0));
  } else if (kind == "box") {
    spec.psf = make_box_psf(size);
  } else if (kind == "disk") {
    spec.psf = make_disk_psf(size, cfg.get_double(section + ".psf_radius", double(size / 2)));
  } else if (kind == "motion") {
    spec.psf = make_motion_psf(size, int(cfg.get_int(section + ".psf_length", size)),
                               cfg.get_double(section + ".psf_angle", 0.0));
  } else if (kind == "delta") {
    spec.psf = make_delta_psf(size);
  } else if (kind == "file") {
    std::string path = cfg.require_str(section + ".psf_file");
    std::filesystem::path p(path);
    if (p.is_relative()) p = std::filesystem::path(config_dir) / p;
    require(std::filesystem::exists(p), ErrorKind::Config,
            "config: " + section + ".psf_file does not exist: " + p.string());
    spec.psf = load_psf(p.string());
  } else {
    fail_config("config: unknown " + section + ".psf_kind '" + kind + "'");
  }

  std::string srf_kind = cfg.get_str(section + ".srf_kind", "synth");
  int bands_msi = int(cfg.get_int(section + ".srf_bands", 3));
  if (srf_kind == "synth") {
    spec.srf = synth_srf(bands_msi, bands_hsi, cfg.get_double(section + ".srf_width", 1.0));
  } else if (srf_kind == "file") {
    std::string path = cfg.require_str(section + ".srf_file");
    std::filesystem::path p(path);
    if (p.is_relative()) p = std::filesystem::path(config_dir) / p;
    require(std::filesystem::exists(p), ErrorKind::Config,
            "config: " + section + ".srf_file does not exist: " + p.string());
    spec.srf = load_srf(p.string());
    require(spec.srf.bands_hsi() == bands_hsi, ErrorKind::Config,
            "config: " + section + ".srf_file band count does not match data.bands");
  } else {
    fail_config("config: unknown " + section + ".srf_kind '" + srf_kind + "'");
  }

  if (cfg.has(section + ".snr_x")) spec.snr_x_db = cfg.get_double(section + ".snr_x", 0.0);
  if (cfg.has(section + ".snr_y")) spec.snr_y_db = cfg.get_double(section + ".snr_y", 0.0);
  return spec;
}

inline std::string degradation_tag(const DegradationSpec& spec) {
  std::string s = psf_kind_name(spec.psf.kind);
  s += std::to_string(spec.psf.size);
  s += "_srf" + std::to_string(spec.srf.bands_msi()) + "x" + std::to_string(spec.srf.bands_hsi());
  s += "_s" + std::to_string(spec.scale);
  return s;
}

struct Experiment {
  // data
  int h = 64, w = 64, bands = 16, endmembers = 8;
  int n_train = 12, n_test = 4;
  std::uint64_t data_seed = 1;
  int patch = 32, stride = 16;
  // degradations
  DegradationSpec known, unknown;
  // training
  PretrainConfig pretrain;
  U2kConfig u2k;
  int test_cube_index = 0;
  int snapshot_every = 10;
  int ablate_seeds = 3;
  // io
  std::string out_dir = "runs/out";
  std::string config_dir = ".";
  int threads = 0;  // 0 = auto
  std::vector<std::pair<std::string, DegradationSpec>> sweep_cells;

  KvConfig raw;
};

inline void validate_section_keys(const KvConfig& cfg, const std::string& section,
                                  const std::set<std::string>& allowed) {
  for (const std::string& key : cfg.keys_with_section(section)) {
    std::string sub = key.substr(section.size() + 1);
    require(allowed.count(sub) > 0, ErrorKind::Config, "config: unknown key '" + key + "'");
  }
}

inline Experiment load_experiment(const KvConfig& cfg, const std::string& config_dir = ".") {
  static const std::set<std::string> kDegKeys = {"psf_kind", "psf_size",  "psf_sigma", "psf_radius",
                                                 "psf_length", "psf_angle", "psf_file",  "srf_kind",
                                                 "srf_bands", "srf_width", "srf_file",  "scale"};
  validate_section_keys(cfg, "data",
                        {"h", "w", "bands", "endmembers", "train_cubes", "test_cubes", "seed",
                         "patch", "stride"});
  validate_section_keys(cfg, "pretrain", {"epochs", "lr", "batch", "seed"});
  validate_section_keys(cfg, "u2k",
                        {"lambda", "mu", "k_dw", "epochs_a", "epochs_b", "steps_a", "n_dw_inner",
                         "dw_decay", "lr", "lr_spectral", "batch", "crop", "seed", "opt",
                         "test_cube", "snapshot_every"});
  validate_section_keys(cfg, "out", {"dir"});
  validate_section_keys(cfg, "run", {"threads"});
  validate_section_keys(cfg, "sweep", {"cells"});
  validate_section_keys(cfg, "ablate", {"seeds"});
  {
    auto deg_plus_noise = [&](const std::string& section) {
      std::set<std::string> k = kDegKeys;
      k.insert("snr_x");
      k.insert("snr_y");
      validate_section_keys(cfg, section, k);
    };
    deg_plus_noise("known");
    deg_plus_noise("unknown");
  }

  Experiment e;
  e.raw = cfg;
  e.config_dir = config_dir;
  e.h = int(cfg.get_int("data.h", e.h));
  e.w = int(cfg.get_int("data.w", e.w));
  e.bands = int(cfg.get_int("data.bands", e.bands));
  e.endmembers = int(cfg.get_int("data.endmembers", e.endmembers));
  e.n_train = int(cfg.get_int("data.train_cubes", e.n_train));
  e.n_test = int(cfg.get_int("data.test_cubes", e.n_test));
  e.data_seed = std::uint64_t(cfg.get_int("data.seed", 1));
  e.patch = int(cfg.get_int("data.patch", e.patch));
  e.stride = int(cfg.get_int("data.stride", e.stride));

  e.known = degradation_from_config(cfg, "known", e.bands, config_dir);
  e.unknown = degradation_from_config(cfg, "unknown", e.bands, config_dir);
  require(e.known.srf.bands_msi() == e.unknown.srf.bands_msi(), ErrorKind::Config,
          "config: known and unknown SRFs must share the MSI band count");
  require(e.known.scale == e.unknown.scale, ErrorKind::Config,
          "config: known and unknown scales must match (the scale is not blind)");

  e.pretrain.epochs = int(cfg.get_int("pretrain.epochs", 200));
  e.pretrain.lr = cfg.get_double("pretrain.lr", 1e-3);
  e.pretrain.batch = int(cfg.get_int("pretrain.batch", 16));
  e.pretrain.seed = std::uint64_t(cfg.get_int("pretrain.seed", 7));
  e.pretrain.patch = e.patch;
  e.pretrain.stride = e.stride;

  e.u2k.lambda_dt = cfg.get_double("u2k.lambda", 1.0);
  e.u2k.mu_con = cfg.get_double("u2k.mu", 1.0);
  e.u2k.k_dw = int(cfg.get_int("u2k.k_dw", 15));
  e.u2k.epochs_a = int(cfg.get_int("u2k.epochs_a", 100));
  e.u2k.epochs_b = int(cfg.get_int("u2k.epochs_b", 10));
  e.u2k.steps_a = int(cfg.get_int("u2k.steps_a", 8));
  e.u2k.n_dw_inner = int(cfg.get_int("u2k.n_dw_inner", 5));
  e.u2k.dw_decay = cfg.get_double("u2k.dw_decay", 0.1);
  e.u2k.lr = cfg.get_double("u2k.lr", 0.01);
  e.u2k.lr_spectral = cfg.get_double("u2k.lr_spectral", 1e-3);
  e.u2k.batch = int(cfg.get_int("u2k.batch", 16));
  e.u2k.crop = int(cfg.get_int("u2k.crop", 32));
  e.u2k.seed = std::uint64_t(cfg.get_int("u2k.seed", 11));
  e.u2k.patch = e.patch;
  e.u2k.stride = e.stride;
  std::string opt = cfg.get_str("u2k.opt", "gao");
  if (opt == "gao") e.u2k.opt = OptStrategy::Gao;
  else if (opt == "ao") e.u2k.opt = OptStrategy::Ao;
  else if (opt == "naive") e.u2k.opt = OptStrategy::Naive;
  else fail_config("config: u2k.opt must be naive, ao or gao");
  e.test_cube_index = int(cfg.get_int("u2k.test_cube", 0));
  e.snapshot_every = int(cfg.get_int("u2k.snapshot_every", 10));
  e.ablate_seeds = int(cfg.get_int("ablate.seeds", 3));

  e.out_dir = cfg.get_str("out.dir", "runs/out");
  e.threads = int(cfg.get_int("run.threads", 0));

  // invariants
  require(e.h % e.known.scale == 0 && e.w % e.known.scale == 0, ErrorKind::Config,
          "config: scale must divide data.h and data.w");
  require(e.patch % e.known.scale == 0, ErrorKind::Config,
          "config: scale must divide data.patch");
  require(e.patch <= std::min(e.h, e.w), ErrorKind::Config,
          "config: data.patch exceeds cube extent");
  require(e.stride >= 1, ErrorKind::Config, "config: data.stride must be >= 1");
  require(e.u2k.k_dw % 2 == 1, ErrorKind::Config, "config: u2k.k_dw must be odd");
  require(e.u2k.k_dw >= e.unknown.psf.size, ErrorKind::Config,
          "config: u2k.k_dw must cover the unknown kernel");
  require(e.test_cube_index >= 0 && e.test_cube_index < e.n_test, ErrorKind::Config,
          "config: u2k.test_cube out of range");
  require(e.u2k.crop + e.u2k.k_dw - 1 <= std::min(e.h, e.w), ErrorKind::Config,
          "config: u2k.crop plus the wrapper margin exceeds the cube extent");
  require(e.pretrain.epochs >= 1 && e.u2k.epochs_a >= 1 && e.u2k.epochs_b >= 1, ErrorKind::Config,
          "config: epochs must be >= 1");
  require(e.ablate_seeds >= 1, ErrorKind::Config, "config: ablate.seeds must be >= 1");

  // sweep cells: comma-separated section names; "matched" means the known spec
  std::string cells = cfg.get_str("sweep.cells", "");
  if (!cells.empty()) {
    std::istringstream ss(cells);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cell.erase(0, cell.find_first_not_of(" \t"));
      cell.erase(cell.find_last_not_of(" \t") + 1);
      if (cell.empty()) continue;
      if (cell == "matched") {
        e.sweep_cells.emplace_back("matched", e.known);
      } else {
        require(!cfg.keys_with_section(cell).empty(), ErrorKind::Config,
                "config: sweep cell section '" + cell + "' is empty");
        std::set<std::string> k = kDegKeys;
        k.insert("snr_x");
        k.insert("snr_y");
        validate_section_keys(cfg, cell, k);
        e.sweep_cells.emplace_back(cell, degradation_from_config(cfg, cell, e.bands, config_dir));
      }
    }
  }

  // reject sections that are neither core nor named as sweep cells
  std::set<std::string> sections = {"data", "known", "unknown", "pretrain", "u2k",
                                    "out",  "run",   "sweep",   "ablate"};
  for (const auto& [name, spec] : e.sweep_cells) sections.insert(name);
  for (const auto& [key, val] : cfg.all()) {
    std::string section = key.substr(0, key.find('.'));
    require(sections.count(section) > 0, ErrorKind::Config,
            "config: unknown section in key '" + key + "'");
  }
  return e;
}

}  // namespace u2k
