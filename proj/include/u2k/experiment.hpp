// Command drivers behind the CLI: data generation, pretraining, adaptation,
// fusion, evaluation, degradation sweeps and ablations. Every artifact is
// written beneath the configured output directory; files are staged with a
// ".partial" suffix and renamed once complete, so an aborted run leaves only
// ".partial" leftovers.
#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "u2k/config.hpp"
#include "u2k/hsi_data.hpp"
#include "u2k/metrics.hpp"
#include "u2k/snapshot.hpp"
#include "u2k/u2k_core.hpp"

namespace u2k {

namespace fs = std::filesystem;

// --- output helpers ----------------------------------------------------------

inline std::string out_path(const Experiment& e, const std::string& rel) {
  fs::path p = fs::path(e.out_dir) / rel;
  fs::create_directories(p.parent_path());
  return p.string();
}

// Stage-and-rename writer; on failure the ".partial" file remains behind.
inline void write_file_atomic(const std::string& path,
                              const std::function<void(const std::string&)>& writer) {
  std::string tmp = path + ".partial";
  writer(tmp);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail_io("cannot finalize " + path + ": " + ec.message());
}

inline void write_text_atomic(const std::string& path, const std::string& content) {
  write_file_atomic(path, [&](const std::string& tmp) {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) fail_io("cannot open for write: " + tmp);
    f << content;
    if (!f) fail_io("short write: " + tmp);
  });
}

// False-color preview: three bands mapped to RGB, full range stretched to
// 8 bits, binary PPM.
inline void write_preview_ppm(const Tensor<float>& cube, const std::string& path) {
  require(cube.rank() == 3, ErrorKind::Config, "preview: cube required");
  int h = cube.dim(0), w = cube.dim(1), b = cube.dim(2);
  int bands[3] = {b - 1, b / 2, 0};
  write_file_atomic(path, [&](const std::string& tmp) {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) fail_io("cannot open for write: " + tmp);
    f << "P6\n" << w << " " << h << "\n255\n";
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        for (int c = 0; c < 3; ++c) {
          float v = cube.at3(i, j, bands[c]);
          v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
          f.put(char(int(v * 255.0f + 0.5f)));
        }
    if (!f) fail_io("short write: " + tmp);
  });
}

template <typename T>
inline Tensor<T> upsample_bilinear_tensor(const Tensor<T>& x, int s) {
  Graph<T> g;
  int in = g.input(x.dims());
  int out = g.upsample_bilinear(in, s);
  g.set_input(in, x);
  g.forward();
  return g.value(out);
}

// --- dataset access ----------------------------------------------------------

inline std::string manifest_path(const Experiment& e) { return out_path(e, "data/manifest.txt"); }

template <typename T>
struct NamedCubes {
  std::vector<Tensor<T>> data;
  std::vector<std::string> names;
};

template <typename T>
inline NamedCubes<T> load_role_cubes(const Experiment& e, const std::string& role) {
  DatasetManifest m = read_manifest(manifest_path(e));
  NamedCubes<T> out;
  for (const std::string& path : m.paths(role)) {
    HsiCube c = read_cube(path);
    require(c.h() % e.known.scale == 0 && c.w() % e.known.scale == 0, ErrorKind::Config,
            "cube " + c.name + " extents are not divisible by the scale");
    out.data.push_back(c.data.template cast<T>());
    out.names.push_back(c.name);
  }
  require(!out.data.empty(), ErrorKind::Config, "manifest has no '" + role + "' cubes");
  return out;
}

// --- gen-data ------------------------------------------------------------------

inline void run_gen_data(const Experiment& e) {
  DatasetManifest m;
  m.patch = e.patch;
  m.stride = e.stride;
  m.seed = e.data_seed;
  Rng rng(e.data_seed);
  auto emit = [&](const std::string& role, int count) {
    for (int i = 0; i < count; ++i) {
      std::uint64_t seed = rng.fork(role).fork(std::uint64_t(i)).next_u64();
      HsiCube cube = synth_hsi(seed, e.h, e.w, e.bands, e.endmembers);
      cube.name = strfmt("%s_%02d", role.c_str(), i);
      std::string path = out_path(e, "data/" + cube.name + ".hsc");
      write_file_atomic(path, [&](const std::string& tmp) { write_cube(cube, tmp); });
      m.entries.push_back({role, path});
    }
  };
  emit("train", e.n_train);
  emit("test", e.n_test);
  write_file_atomic(manifest_path(e), [&](const std::string& tmp) { write_manifest(m, tmp); });
}

// --- pretrain -------------------------------------------------------------------

inline std::string fusion_weights_path(const Experiment& e) {
  return out_path(e, "pretrain/fusion.u2kw");
}

template <typename T>
inline FusionNet<T> make_fusion_net(const Experiment& e) {
  return FusionNet<T>(e.bands, e.known.srf.bands_msi(), e.known.scale,
                      Rng(e.pretrain.seed).fork("fusion_init").next_u64());
}

template <typename T>
inline void run_pretrain(const Experiment& e) {
  NamedCubes<T> train = load_role_cubes<T>(e, "train");
  FusionNet<T> net = make_fusion_net<T>(e);
  std::string csv = "epoch,loss\n";
  pretrain<T>(net, train.data, e.known, e.pretrain, [&](int epoch, double loss) {
    csv += strfmt("%d,%.6g\n", epoch, loss);
    // rolling snapshot: on divergence the last finished epoch survives
    write_file_atomic(fusion_weights_path(e), [&](const std::string& tmp) {
      auto ps = net.params();
      save_snapshot(tmp, std::vector<const Param<T>*>(ps.begin(), ps.end()));
    });
  });
  write_text_atomic(out_path(e, "pretrain/loss.csv"), csv);
}

template <typename T>
inline FusionNet<T> load_fusion_net(const Experiment& e) {
  FusionNet<T> net = make_fusion_net<T>(e);
  std::string path = fusion_weights_path(e);
  require(fs::exists(path), ErrorKind::Config,
          "pretrained fusion weights not found (run `pretrain` first): " + path);
  apply_snapshot(load_snapshot(path), net.params());
  net.freeze();
  return net;
}

// --- adaptation -------------------------------------------------------------------

struct AdaptVariant {
  std::string drop;  // "", "rec", "dt", "con"
  OptStrategy opt = OptStrategy::Gao;
  std::uint64_t seed = 11;

  std::string tag() const {
    std::string loss = drop.empty() ? "full" : "drop" + drop;
    return std::string(opt_strategy_name(opt)) + "_" + loss + "_s" + std::to_string(seed);
  }
};

inline U2kConfig variant_config(const Experiment& e, const AdaptVariant& v) {
  U2kConfig cfg = e.u2k;
  cfg.opt = v.opt;
  cfg.seed = v.seed;
  if (v.drop == "rec") cfg.coef_rec = 0.0;
  else if (v.drop == "dt") cfg.lambda_dt = 0.0;
  else if (v.drop == "con") cfg.mu_con = 0.0;
  else require(v.drop.empty(), ErrorKind::Config, "unknown --drop value '" + v.drop + "'");
  return cfg;
}

template <typename T>
struct AdaptOutcome {
  DwModule<T> dw;
  DtModule<T> dt;
  std::vector<EpochLog> logs;
};

// Runs one adaptation against the blind test pair generated from the
// configured unknown degradation, writing curves, weight snapshots and
// phi_k / phi_R exports under adapt/<tag>/.
template <typename T>
inline AdaptOutcome<T> run_adapt(const Experiment& e, FusionNet<T>& fnet, const AdaptVariant& v,
                                 const DegradationSpec& unknown, const std::string& dir_prefix) {
  NamedCubes<T> train = load_role_cubes<T>(e, "train");
  NamedCubes<T> test = load_role_cubes<T>(e, "test");
  const Tensor<T>& z_test = test.data[std::size_t(e.test_cube_index)];
  auto pair = apply_observation(z_test, unknown, Rng(e.u2k.seed).fork("test_noise").next_u64());

  U2kConfig cfg = variant_config(e, v);
  std::string dir = dir_prefix + "/" + v.tag();
  AdaptOutcome<T> out{
      DwModule<T>(cfg.k_dw, e.bands, e.known.srf.bands_msi(), Rng(cfg.seed).fork("dw_init").next_u64()),
      DtModule<T>(e.bands, e.known.srf.bands_msi(), Rng(cfg.seed).fork("dt_init").next_u64()),
      {}};

  std::string csv = "epoch,l_rec,l_dt,l_con,l_total\n";
  auto save_modules = [&] {
    write_file_atomic(out_path(e, dir + "/dw.u2kw"), [&](const std::string& tmp) {
      auto ps = out.dw.params();
      save_snapshot(tmp, std::vector<const Param<T>*>(ps.begin(), ps.end()));
    });
    write_file_atomic(out_path(e, dir + "/dt.u2kw"), [&](const std::string& tmp) {
      auto ps = out.dt.params();
      save_snapshot(tmp, std::vector<const Param<T>*>(ps.begin(), ps.end()));
    });
  };
  auto export_phi = [&](const std::string& suffix) {
    Psf phi_k;
    phi_k.size = cfg.k_dw;
    phi_k.kind = PsfKind::Custom;
    phi_k.weights = out.dw.eval_kernel().template cast<double>();
    Srf phi_r;
    phi_r.matrix = out.dw.eval_srf().template cast<double>();
    write_file_atomic(out_path(e, dir + "/phi_k" + suffix + ".psf"),
                      [&](const std::string& tmp) { save_psf(phi_k, tmp); });
    write_file_atomic(out_path(e, dir + "/phi_r" + suffix + ".srf"),
                      [&](const std::string& tmp) { save_srf(phi_r, tmp); });
  };

  out.logs = adapt<T>(out.dw, out.dt, fnet, train.data, e.known, pair.x, pair.y, cfg,
                      [&](int row, const EpochLog& l) {
                        csv += strfmt("%d,%.6g,%.6g,%.6g,%.6g\n", row, l.l_rec, l.l_dt, l.l_con,
                                      l.l_total);
                        save_modules();
                        if (e.snapshot_every > 0 && row % e.snapshot_every == 0)
                          export_phi(strfmt("_ep%03d", row));
                      });
  save_modules();
  export_phi("");
  write_text_atomic(out_path(e, dir + "/loss.csv"), csv);

  // recovery diagnostics against the generating degradation
  if (unknown.psf.size <= cfg.k_dw && (cfg.k_dw - unknown.psf.size) % 2 == 0) {
    std::string rec = "metric,value\n";
    rec += strfmt("kernel_max_abs_err,%.6g\n", kernel_recovery_error(out.dw, unknown.psf));
    rec += strfmt("srf_mean_row_l1,%.6g\n", srf_recovery_row_l1(out.dw, unknown.srf));
    write_text_atomic(out_path(e, dir + "/recovery.csv"), rec);
  }
  return out;
}

template <typename T>
inline AdaptOutcome<T> run_adapt(const Experiment& e, FusionNet<T>& fnet, const AdaptVariant& v) {
  return run_adapt(e, fnet, v, e.unknown, "adapt");
}

// Restores an adaptation result saved by run_adapt.
template <typename T>
inline AdaptOutcome<T> load_adapted(const Experiment& e, const AdaptVariant& v,
                                    const std::string& dir_prefix = "adapt") {
  std::string dir = dir_prefix + "/" + v.tag();
  AdaptOutcome<T> out{
      DwModule<T>(e.u2k.k_dw, e.bands, e.known.srf.bands_msi(),
                  Rng(v.seed).fork("dw_init").next_u64()),
      DtModule<T>(e.bands, e.known.srf.bands_msi(), Rng(v.seed).fork("dt_init").next_u64()),
      {}};
  std::string dw_path = out_path(e, dir + "/dw.u2kw");
  std::string dt_path = out_path(e, dir + "/dt.u2kw");
  require(fs::exists(dw_path) && fs::exists(dt_path), ErrorKind::Config,
          "adapted weights not found (run `adapt` first): " + dir);
  apply_snapshot(load_snapshot(dw_path), out.dw.params());
  apply_snapshot(load_snapshot(dt_path), out.dt.params());
  return out;
}

// --- fuse / eval -------------------------------------------------------------------

template <typename T>
struct FusionRun {
  std::vector<MetricReport> reports;
  std::vector<double> input_psnr;  // PSNR of the upsampled LR input vs GT
};

// Fuses every test cube under the given degradation, optionally writing the
// fused cubes and previews. dt == nullptr selects the unadapted baseline.
template <typename T>
inline FusionRun<T> fuse_test_cubes(const Experiment& e, FusionNet<T>& fnet, DtModule<T>* dt,
                                    const DegradationSpec& spec, const std::string& method,
                                    bool write_outputs, const std::string& out_subdir = "fuse") {
  NamedCubes<T> test = load_role_cubes<T>(e, "test");
  FusionRun<T> run;
  std::string tag = degradation_tag(spec);
  for (std::size_t i = 0; i < test.data.size(); ++i) {
    const Tensor<T>& z = test.data[i];
    auto pair = apply_observation(z, spec, Rng(e.u2k.seed).fork("test_noise").next_u64());
    Tensor<T> fused = dt ? u2k_infer(*dt, fnet, pair.x, pair.y) : fnet.fuse(pair.x, pair.y);
    run.reports.push_back(evaluate(z, fused, spec.scale, method, tag, test.names[i]));
    run.input_psnr.push_back(psnr(z, upsample_bilinear_tensor(pair.x, spec.scale)));
    if (write_outputs) {
      HsiCube out_cube;
      out_cube.data = fused.template cast<float>();
      out_cube.name = test.names[i] + "_" + method;
      std::string base = out_subdir + "/" + out_cube.name;
      write_file_atomic(out_path(e, base + ".hsc"),
                        [&](const std::string& tmp) { write_cube(out_cube, tmp); });
      write_preview_ppm(out_cube.data, out_path(e, base + ".ppm"));
    }
  }
  return run;
}

inline double mean_psnr(const std::vector<MetricReport>& rows) {
  double s = 0.0;
  for (const auto& r : rows) s += r.psnr;
  return s / double(rows.size());
}

template <typename T>
inline void run_eval(const Experiment& e, bool no_adapt) {
  FusionNet<T> fnet = load_fusion_net<T>(e);
  std::string csv = metric_csv_header() + "\n";
  if (no_adapt) {
    auto run = fuse_test_cubes<T>(e, fnet, nullptr, e.unknown, "baseline", false);
    for (const auto& r : run.reports) csv += metric_csv_row(r) + "\n";
    write_text_atomic(out_path(e, "eval/report_baseline.csv"), csv);
  } else {
    AdaptVariant v{"", e.u2k.opt, e.u2k.seed};
    AdaptOutcome<T> adapted = load_adapted<T>(e, v);
    auto run = fuse_test_cubes<T>(e, fnet, &adapted.dt, e.unknown, "u2k", false);
    for (const auto& r : run.reports) csv += metric_csv_row(r) + "\n";
    write_text_atomic(out_path(e, "eval/report_u2k.csv"), csv);
  }
}

template <typename T>
inline void run_fuse(const Experiment& e, bool no_adapt) {
  FusionNet<T> fnet = load_fusion_net<T>(e);
  if (no_adapt) {
    fuse_test_cubes<T>(e, fnet, nullptr, e.unknown, "baseline", true);
  } else {
    AdaptVariant v{"", e.u2k.opt, e.u2k.seed};
    AdaptOutcome<T> adapted = load_adapted<T>(e, v);
    fuse_test_cubes<T>(e, fnet, &adapted.dt, e.unknown, "u2k", true);
  }
}

// --- sweep ---------------------------------------------------------------------------

// Iterates the configured degradation cells: per cell, the unadapted
// baseline and a freshly adapted U2K run (seed = base + cell index), plus
// the max-min-normalized PSNR curves of both series.
template <typename T>
inline void run_sweep(const Experiment& e) {
  require(!e.sweep_cells.empty(), ErrorKind::Config, "config: sweep.cells is empty");
  FusionNet<T> fnet = load_fusion_net<T>(e);
  std::string csv = "cell,method,rmse,psnr,ssim,sam,ergas\n";
  std::vector<std::pair<double, double>> base_records, u2k_records;
  for (std::size_t ci = 0; ci < e.sweep_cells.size(); ++ci) {
    const auto& [name, spec] = e.sweep_cells[ci];
    AdaptVariant v{"", e.u2k.opt, e.u2k.seed + ci};
    AdaptOutcome<T> adapted = run_adapt<T>(e, fnet, v, spec, "sweep/" + name);
    auto base = fuse_test_cubes<T>(e, fnet, nullptr, spec, "baseline", false);
    auto u2k = fuse_test_cubes<T>(e, fnet, &adapted.dt, spec, "u2k", false);
    auto mean_of = [](const std::vector<MetricReport>& rows, auto field) {
      double s = 0.0;
      for (const auto& r : rows) s += r.*field;
      return s / double(rows.size());
    };
    auto emit = [&](const char* method, const std::vector<MetricReport>& rows) {
      csv += name + "," + method + "," + strfmt("%.6g", mean_of(rows, &MetricReport::rmse)) + "," +
             strfmt("%.6g", mean_of(rows, &MetricReport::psnr)) + "," +
             strfmt("%.6g", mean_of(rows, &MetricReport::ssim)) + "," +
             strfmt("%.6g", mean_of(rows, &MetricReport::sam)) + "," +
             strfmt("%.6g", mean_of(rows, &MetricReport::ergas)) + "\n";
    };
    emit("baseline", base.reports);
    emit("u2k", u2k.reports);
    double in_psnr = 0.0;
    for (double p : base.input_psnr) in_psnr += p;
    in_psnr /= double(base.input_psnr.size());
    base_records.emplace_back(in_psnr, mean_psnr(base.reports));
    u2k_records.emplace_back(in_psnr, mean_psnr(u2k.reports));
  }
  write_text_atomic(out_path(e, "sweep/sweep.csv"), csv);
  auto write_curve = [&](const std::string& file, const std::vector<std::pair<double, double>>& rec) {
    MmnCurve curve = mmn_psnr_sweep(rec);
    std::string body = "in_norm,out_norm\n";
    for (const auto& [a, b] : curve.points) body += strfmt("%.6g,%.6g\n", a, b);
    if (curve.degenerate_in || curve.degenerate_out) body += "# degenerate series\n";
    write_text_atomic(out_path(e, file), body);
  };
  write_curve("sweep/curve_baseline.csv", base_records);
  write_curve("sweep/curve_u2k.csv", u2k_records);
}

// --- ablate ---------------------------------------------------------------------------

// Loss-term and optimizer-strategy ablations over ablate.seeds seeds; the
// GAO full-loss cell is shared between the two tables.
template <typename T>
inline void run_ablate(const Experiment& e, const std::string& only_drop = "",
                       const std::string& only_opt = "") {
  FusionNet<T> fnet = load_fusion_net<T>(e);
  std::vector<std::string> drops = {"", "rec", "dt", "con"};
  if (!only_drop.empty()) drops = {"", only_drop};
  std::vector<OptStrategy> opts = {OptStrategy::Gao, OptStrategy::Ao, OptStrategy::Naive};
  if (only_opt == "gao") opts = {OptStrategy::Gao};
  else if (only_opt == "ao") opts = {OptStrategy::Gao, OptStrategy::Ao};
  else if (only_opt == "naive") opts = {OptStrategy::Gao, OptStrategy::Naive};

  struct Cell {
    MetricReport mean;
  };
  auto run_cell = [&](const AdaptVariant& v) {
    AdaptOutcome<T> adapted = run_adapt<T>(e, fnet, v, e.unknown, "ablate");
    auto run = fuse_test_cubes<T>(e, fnet, &adapted.dt, e.unknown, v.tag(), false);
    MetricReport mean;
    for (const auto& r : run.reports) {
      mean.rmse += r.rmse;
      mean.psnr += r.psnr;
      mean.ssim += r.ssim;
      mean.sam += r.sam;
      mean.ergas += r.ergas;
    }
    double n = double(run.reports.size());
    mean.rmse /= n;
    mean.psnr /= n;
    mean.ssim /= n;
    mean.sam /= n;
    mean.ergas /= n;
    return mean;
  };

  std::map<std::string, MetricReport> cache;
  auto cell = [&](const std::string& drop, OptStrategy opt, std::uint64_t seed) {
    AdaptVariant v{drop, opt, seed};
    auto it = cache.find(v.tag());
    if (it == cache.end()) it = cache.emplace(v.tag(), run_cell(v)).first;
    return it->second;
  };

  auto row = [&](const std::string& label, std::uint64_t seed, const MetricReport& m) {
    return label + "," + std::to_string(seed) + "," + strfmt("%.6g", m.rmse) + "," +
           strfmt("%.6g", m.psnr) + "," + strfmt("%.6g", m.ssim) + "," + strfmt("%.6g", m.sam) +
           "," + strfmt("%.6g", m.ergas) + "\n";
  };

  std::string losses = "variant,seed,rmse,psnr,ssim,sam,ergas\n";
  for (const std::string& drop : drops) {
    std::string label = drop.empty() ? "full" : "drop_" + drop;
    MetricReport acc;
    for (int si = 0; si < e.ablate_seeds; ++si) {
      MetricReport m = cell(drop, OptStrategy::Gao, e.u2k.seed + std::uint64_t(si));
      losses += row(label, e.u2k.seed + std::uint64_t(si), m);
      acc.rmse += m.rmse;
      acc.psnr += m.psnr;
      acc.ssim += m.ssim;
      acc.sam += m.sam;
      acc.ergas += m.ergas;
    }
    double n = double(e.ablate_seeds);
    acc.rmse /= n;
    acc.psnr /= n;
    acc.ssim /= n;
    acc.sam /= n;
    acc.ergas /= n;
    losses += row(label + "_mean", 0, acc);
  }
  write_text_atomic(out_path(e, "ablate/losses.csv"), losses);

  std::string opts_csv = "variant,seed,rmse,psnr,ssim,sam,ergas\n";
  for (OptStrategy opt : opts) {
    MetricReport acc;
    for (int si = 0; si < e.ablate_seeds; ++si) {
      MetricReport m = cell("", opt, e.u2k.seed + std::uint64_t(si));
      opts_csv += row(opt_strategy_name(opt), e.u2k.seed + std::uint64_t(si), m);
      acc.rmse += m.rmse;
      acc.psnr += m.psnr;
      acc.ssim += m.ssim;
      acc.sam += m.sam;
      acc.ergas += m.ergas;
    }
    double n = double(e.ablate_seeds);
    acc.rmse /= n;
    acc.psnr /= n;
    acc.ssim /= n;
    acc.sam /= n;
    acc.ergas /= n;
    opts_csv += row(std::string(opt_strategy_name(opt)) + "_mean", 0, acc);
  }
  write_text_atomic(out_path(e, "ablate/optimizers.csv"), opts_csv);
}

}  // namespace u2k
