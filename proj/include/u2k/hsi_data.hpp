// Synthetic hyperspectral cubes (linear mixing of smooth endmember spectra
// with smooth abundance maps), patch extraction, and the portable cube and
// manifest formats.
#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "u2k/common.hpp"
#include "u2k/degradation.hpp"
#include "u2k/ops.hpp"
#include "u2k/rng.hpp"
#include "u2k/tensor.hpp"

namespace u2k {

struct HsiCube {
  Tensor<float> data;  // [H, W, B], values in [0, 1]
  std::string name;
  std::string source;  // seed tag or file path

  int h() const { return data.dim(0); }
  int w() const { return data.dim(1); }
  int bands() const { return data.dim(2); }
};

struct SynthOptions {
  double spectrum_smooth_sigma = 3.0;  // band-axis smoothing of the slow spectral component
  double spectrum_ripple = 0.35;       // relative weight of the band-scale component
  double abundance_blur_sigma = 2.0;   // spatial smoothing of abundance fields
  double abundance_sharpness = 40.0;   // softmax temperature; higher = crisper regions
};

namespace detail {

inline Tensor<double> gaussian_kernel_1d(double sigma, int radius) {
  Tensor<double> k = Tensor<double>::vec(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-double(i * i) / (2.0 * sigma * sigma));
    k[std::size_t(i + radius)] = v;
    sum += v;
  }
  for (std::size_t i = 0; i < k.size(); ++i) k[i] /= sum;
  return k;
}

inline std::vector<double> smooth_replicate_1d(const std::vector<double>& x, double sigma) {
  if (sigma <= 0.0) return x;
  int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  Tensor<double> k = gaussian_kernel_1d(sigma, radius);
  std::vector<double> out(x.size(), 0.0);
  int n = int(x.size());
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int t = -radius; t <= radius; ++t)
      acc += k[std::size_t(t + radius)] * x[std::size_t(clampi(i + t, 0, n - 1))];
    out[std::size_t(i)] = acc;
  }
  return out;
}

}  // namespace detail

// Smooth positive endmember spectra: softplus of two-scale band-smoothed
// noise, scaled to a random peak in (0, 1]. The slow component dominates so
// few-band mixtures remain reconstructable; the band-scale ripple keeps
// narrow and wide spectral responses distinguishable on these mixtures.
inline std::vector<std::vector<double>> synth_endmember_spectra(Rng rng, int bands, int count,
                                                                const SynthOptions& opt = {}) {
  std::vector<std::vector<double>> spectra;
  for (int e = 0; e < count; ++e) {
    Rng r = rng.fork("spectrum").fork(std::uint64_t(e));
    std::vector<double> slow(std::size_t(bands), 0.0), fine(std::size_t(bands), 0.0);
    for (double& v : slow) v = r.normal();
    for (double& v : fine) v = r.normal();
    slow = detail::smooth_replicate_1d(slow, opt.spectrum_smooth_sigma);
    fine = detail::smooth_replicate_1d(fine, 0.6);
    auto unit_std = [](std::vector<double>& v) {
      double mean = 0.0, var = 0.0;
      for (double x : v) mean += x;
      mean /= double(v.size());
      for (double x : v) var += (x - mean) * (x - mean);
      var = std::sqrt(var / double(v.size()));
      if (var > 1e-12)
        for (double& x : v) x = (x - mean) / var;
    };
    unit_std(slow);
    unit_std(fine);
    std::vector<double> s(std::size_t(bands), 0.0);
    double mx = 0.0;
    for (int b = 0; b < bands; ++b) {
      double raw = 1.2 * (slow[std::size_t(b)] + opt.spectrum_ripple * fine[std::size_t(b)]);
      s[std::size_t(b)] = std::log1p(std::exp(raw));  // softplus
      mx = std::max(mx, s[std::size_t(b)]);
    }
    double peak = 0.35 + 0.65 * r.uniform();
    for (double& v : s) v *= peak / mx;
    spectra.push_back(std::move(s));
  }
  return spectra;
}

// Per-pixel abundances: softmax over endmembers of spatially blurred noise
// fields. Each pixel's abundances are nonnegative and sum to 1.
inline std::vector<Tensor<double>> synth_abundances(Rng rng, int h, int w, int count,
                                                    const SynthOptions& opt = {}) {
  std::vector<Tensor<double>> fields;
  for (int e = 0; e < count; ++e) {
    Rng r = rng.fork("abundance").fork(std::uint64_t(e));
    Tensor<double> f = Tensor<double>::cube(h, w, 1);
    f.fill_normal(r);
    if (opt.abundance_blur_sigma > 0.0) {
      int radius = std::max(1, int(std::ceil(2.5 * opt.abundance_blur_sigma)));
      int k = 2 * radius + 1;
      Tensor<double> g1 = detail::gaussian_kernel_1d(opt.abundance_blur_sigma, radius);
      Tensor<double> g2 = Tensor<double>::mat(k, k);
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) g2.at(i, j) = g1[std::size_t(i)] * g1[std::size_t(j)];
      f = conv2d_per_band(f, g2, Pad::ReplicateSame);
    }
    fields.push_back(std::move(f));
  }
  // softmax across endmembers, pixelwise
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double mx = -1e300;
      for (int e = 0; e < count; ++e)
        mx = std::max(mx, opt.abundance_sharpness * fields[std::size_t(e)].at3(i, j, 0));
      double sum = 0.0;
      for (int e = 0; e < count; ++e) {
        double v = std::exp(opt.abundance_sharpness * fields[std::size_t(e)].at3(i, j, 0) - mx);
        fields[std::size_t(e)].at3(i, j, 0) = v;
        sum += v;
      }
      for (int e = 0; e < count; ++e) fields[std::size_t(e)].at3(i, j, 0) /= sum;
    }
  return fields;
}

inline HsiCube synth_hsi(std::uint64_t seed, int h, int w, int bands, int n_endmembers,
                         const SynthOptions& opt = {}) {
  require(n_endmembers >= 1, ErrorKind::Config, "synth_hsi: need at least one endmember");
  require(h >= 4 && w >= 4 && bands >= 4, ErrorKind::Config, "synth_hsi: extents must be >= 4");
  Rng rng(seed);
  auto spectra = synth_endmember_spectra(rng, bands, n_endmembers, opt);
  auto abund = synth_abundances(rng, h, w, n_endmembers, opt);
  Tensor<double> cube = Tensor<double>::cube(h, w, bands);
  for (int b = 0; b < bands; ++b) {
    double* p = cube.plane(b);
    for (int e = 0; e < n_endmembers; ++e) {
      double sv = spectra[std::size_t(e)][std::size_t(b)];
      const double* a = abund[std::size_t(e)].plane(0);
      for (std::size_t i = 0; i < std::size_t(h) * std::size_t(w); ++i) p[i] += sv * a[i];
    }
  }
  double lo = cube.min_value(), hi = cube.max_value();
  double range = hi - lo;
  HsiCube out;
  out.data = Tensor<float>::cube(h, w, bands);
  for (std::size_t i = 0; i < cube.size(); ++i)
    out.data[i] = range > 1e-12 ? float((cube[i] - lo) / range) : 0.5f;
  out.name = "synth_" + std::to_string(seed);
  out.source = "seed:" + std::to_string(seed);
  return out;
}

// --- patches ---------------------------------------------------------------

inline std::vector<int> patch_offsets(int extent, int size, int stride) {
  std::vector<int> offs;
  for (int o = 0; o + size <= extent; o += stride) offs.push_back(o);
  if (offs.empty() || offs.back() + size < extent) offs.push_back(extent - size);  // edge-aligned tail
  return offs;
}

template <typename T>
inline std::vector<Tensor<T>> extract_patches(const Tensor<T>& cube, int size, int stride) {
  require(cube.rank() == 3, ErrorKind::Config, "extract_patches: cube must be 3-axis");
  require(size >= 1 && size <= std::min(cube.dim(0), cube.dim(1)), ErrorKind::Config,
          "extract_patches: patch size exceeds cube extent");
  require(stride >= 1, ErrorKind::Config, "extract_patches: stride must be >= 1");
  std::vector<Tensor<T>> out;
  for (int i0 : patch_offsets(cube.dim(0), size, stride))
    for (int j0 : patch_offsets(cube.dim(1), size, stride)) {
      Tensor<T> p = Tensor<T>::cube(size, size, cube.dim(2));
      for (int b = 0; b < cube.dim(2); ++b)
        for (int i = 0; i < size; ++i)
          std::copy(cube.plane(b) + (i0 + i) * cube.dim(1) + j0,
                    cube.plane(b) + (i0 + i) * cube.dim(1) + j0 + size,
                    p.plane(b) + i * size);
      out.push_back(std::move(p));
    }
  return out;
}

// --- cube files ------------------------------------------------------------
// magic "HSC1", u32 LE H, W, B, u8 dtype (0 = f32), payload band-sequential
// row-major f32 LE.

inline void write_cube(const HsiCube& cube, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) fail_io("cube: cannot open for write: " + path);
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> guard(f, std::fclose);
  auto w32 = [&](std::uint32_t v) {
    unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                          (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
    if (std::fwrite(b, 1, 4, f) != 4) fail_io("cube: short write");
  };
  if (std::fwrite("HSC1", 1, 4, f) != 4) fail_io("cube: short write");
  w32(std::uint32_t(cube.h()));
  w32(std::uint32_t(cube.w()));
  w32(std::uint32_t(cube.bands()));
  unsigned char dtype = 0;
  if (std::fwrite(&dtype, 1, 1, f) != 1) fail_io("cube: short write");
  for (std::size_t i = 0; i < cube.data.size(); ++i) {
    float v = cube.data[i];
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    w32(bits);
  }
}

inline HsiCube read_cube(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) fail_io("cube: cannot open: " + path);
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> guard(f, std::fclose);
  auto r32 = [&]() -> std::uint32_t {
    unsigned char b[4];
    if (std::fread(b, 1, 4, f) != 4) fail_io("cube: truncated payload in " + path);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
  };
  char magic[4];
  if (std::fread(magic, 1, 4, f) != 4) fail_io("cube: truncated payload in " + path);
  if (std::memcmp(magic, "HSC1", 4) != 0) fail_io("cube: bad magic in " + path);
  std::uint32_t h = r32(), w = r32(), b = r32();
  if (h == 0 || w == 0 || b == 0 || h > (1u << 20) || w > (1u << 20) || b > (1u << 16) ||
      double(h) * double(w) * double(b) > double(1u << 30))
    fail_io("cube: dims overflow in " + path);
  unsigned char dtype;
  if (std::fread(&dtype, 1, 1, f) != 1) fail_io("cube: truncated payload in " + path);
  if (dtype != 0) fail_io("cube: unsupported dtype in " + path);
  HsiCube cube;
  cube.data = Tensor<float>::cube(int(h), int(w), int(b));
  for (std::size_t i = 0; i < cube.data.size(); ++i) {
    std::uint32_t bits = r32();
    std::memcpy(&cube.data[i], &bits, 4);
  }
  cube.source = path;
  cube.name = std::filesystem::path(path).stem().string();
  return cube;
}

// --- manifest ----------------------------------------------------------------
// Line-oriented text: "# key=value" headers (patch, stride, seed), then one
// "role path" entry per cube; paths are relative to the manifest directory.

struct ManifestEntry {
  std::string role;  // "train" or "test"
  std::string path;  // resolved absolute/relative path
};

struct DatasetManifest {
  int patch = 32;
  int stride = 16;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;

  std::vector<std::string> paths(const std::string& role) const {
    std::vector<std::string> out;
    for (const auto& e : entries)
      if (e.role == role) out.push_back(e.path);
    return out;
  }
};

inline void write_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) fail_io("manifest: cannot open for write: " + path);
  f << "# patch=" << m.patch << "\n# stride=" << m.stride << "\n# seed=" << m.seed << "\n";
  auto base = std::filesystem::path(path).parent_path();
  for (const auto& e : m.entries)
    f << e.role << " " << std::filesystem::relative(e.path, base).string() << "\n";
  if (!f) fail_io("manifest: short write: " + path);
}

inline DatasetManifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail_io("manifest: cannot open: " + path);
  DatasetManifest m;
  auto base = std::filesystem::path(path).parent_path();
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(1, eq - 1);
      key.erase(0, key.find_first_not_of(" \t"));
      key.erase(key.find_last_not_of(" \t") + 1);
      std::string val = line.substr(eq + 1);
      if (key == "patch") m.patch = std::stoi(val);
      else if (key == "stride") m.stride = std::stoi(val);
      else if (key == "seed") m.seed = std::stoull(val);
      continue;
    }
    std::istringstream ss(line);
    ManifestEntry e;
    if (!(ss >> e.role >> e.path)) fail_io("manifest: malformed entry: " + line);
    if (e.role != "train" && e.role != "test") fail_io("manifest: unknown role '" + e.role + "'");
    e.path = (base / e.path).string();
    m.entries.push_back(std::move(e));
  }
  for (std::size_t i = 0; i < m.entries.size(); ++i)
    for (std::size_t j = i + 1; j < m.entries.size(); ++j)
      require(m.entries[i].path != m.entries[j].path, ErrorKind::Config,
              "manifest: duplicate cube " + m.entries[i].path);
  return m;
}

}  // namespace u2k
