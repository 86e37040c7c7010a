// Physical degradation model: point spread functions, spectral response
// functions, and the observation operator producing the LR-HSI / HR-MSI pair
// X = (Z * k) downsampled by s, Y = Z x3 R, with optional additive Gaussian
// noise at a requested SNR. Kernels and SRF rows live on the simplex
// (nonnegative, summing to one).
#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "u2k/common.hpp"
#include "u2k/ops.hpp"
#include "u2k/rng.hpp"
#include "u2k/tensor.hpp"

namespace u2k {

enum class PsfKind { Gaussian, Box, Disk, Motion, Custom };

inline const char* psf_kind_name(PsfKind k) {
  switch (k) {
    case PsfKind::Gaussian: return "gaussian";
    case PsfKind::Box: return "box";
    case PsfKind::Disk: return "disk";
    case PsfKind::Motion: return "motion";
    default: return "custom";
  }
}

struct Psf {
  int size = 1;
  PsfKind kind = PsfKind::Custom;
  Tensor<double> weights;  // [size, size], nonnegative, sums to 1

  template <typename T>
  Tensor<T> as() const {
    return weights.template cast<T>();
  }
};

struct Srf {
  Tensor<double> matrix;  // [B_msi, B_hsi], rows nonnegative, each summing to 1
  std::vector<double> wavelengths_nm;  // optional provenance, may be empty

  int bands_msi() const { return matrix.dim(0); }
  int bands_hsi() const { return matrix.dim(1); }
  template <typename T>
  Tensor<T> as() const {
    return matrix.template cast<T>();
  }
};

struct DegradationSpec {
  Psf psf;
  Srf srf;
  int scale = 1;
  std::optional<double> snr_x_db;  // absent = noiseless
  std::optional<double> snr_y_db;
};

inline void validate_psf(const Psf& p, double tol = 1e-6) {
  require(p.size >= 1 && p.size % 2 == 1, ErrorKind::Config, "psf: size must be odd and positive");
  require(p.weights.rank() == 2 && p.weights.dim(0) == p.size && p.weights.dim(1) == p.size,
          ErrorKind::Config, "psf: weight shape mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    require(p.weights[i] >= 0.0, ErrorKind::Config, "psf: negative entry");
    sum += p.weights[i];
  }
  require(std::abs(sum - 1.0) <= tol, ErrorKind::Config, "psf: entries must sum to 1");
}

inline void validate_srf(const Srf& r, double tol = 1e-6) {
  require(r.matrix.rank() == 2, ErrorKind::Config, "srf: matrix required");
  for (int m = 0; m < r.bands_msi(); ++m) {
    double sum = 0.0;
    for (int b = 0; b < r.bands_hsi(); ++b) {
      require(r.matrix.at(m, b) >= 0.0, ErrorKind::Config, "srf: negative entry");
      sum += r.matrix.at(m, b);
    }
    require(std::abs(sum - 1.0) <= tol, ErrorKind::Config, strfmt("srf: row %d must sum to 1", m));
  }
}

namespace detail {
inline void normalize_simplex(Tensor<double>& t) {
  double sum = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) sum += t[i];
  require(sum > 0.0, ErrorKind::Config, "kernel has zero mass");
  for (std::size_t i = 0; i < t.size(); ++i) t[i] /= sum;
}
}  // namespace detail

inline Psf make_gaussian_psf(int size, double sigma) {
  require(size >= 1 && size % 2 == 1, ErrorKind::Config, "make_gaussian_psf: even size rejected");
  require(sigma > 0.0, ErrorKind::Config, "make_gaussian_psf: sigma must be positive");
  Psf p;
  p.size = size;
  p.kind = PsfKind::Gaussian;
  p.weights = Tensor<double>::mat(size, size);
  int c = size / 2;
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      double d2 = double((i - c) * (i - c) + (j - c) * (j - c));
      p.weights.at(i, j) = std::exp(-d2 / (2.0 * sigma * sigma));
    }
  detail::normalize_simplex(p.weights);
  return p;
}

inline Psf make_box_psf(int size) {
  require(size >= 1 && size % 2 == 1, ErrorKind::Config, "make_box_psf: even size rejected");
  Psf p;
  p.size = size;
  p.kind = PsfKind::Box;
  p.weights = Tensor<double>::mat(size, size, 1.0 / double(size * size));
  return p;
}

inline Psf make_disk_psf(int size, double radius) {
  require(size >= 1 && size % 2 == 1, ErrorKind::Config, "make_disk_psf: even size rejected");
  require(radius >= 0.0, ErrorKind::Config, "make_disk_psf: negative radius");
  require(radius <= double(size / 2), ErrorKind::Config, "make_disk_psf: radius exceeds kernel size");
  Psf p;
  p.size = size;
  p.kind = PsfKind::Disk;
  p.weights = Tensor<double>::mat(size, size);
  int c = size / 2;
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      double d = std::sqrt(double((i - c) * (i - c) + (j - c) * (j - c)));
      p.weights.at(i, j) = d <= radius ? 1.0 : 0.0;
    }
  detail::normalize_simplex(p.weights);
  return p;
}

// 1-pixel-wide segment of the given length through the kernel center,
// rasterized by nearest-pixel sampling; angle in degrees, 0 = horizontal.
inline Psf make_motion_psf(int size, int length, double angle_deg) {
  require(size >= 1 && size % 2 == 1, ErrorKind::Config, "make_motion_psf: even size rejected");
  require(length >= 1, ErrorKind::Config, "make_motion_psf: length must be positive");
  require(length <= size, ErrorKind::Config, "make_motion_psf: length exceeds kernel size");
  Psf p;
  p.size = size;
  p.kind = PsfKind::Motion;
  p.weights = Tensor<double>::mat(size, size);
  int c = size / 2;
  double a = angle_deg * M_PI / 180.0;
  double dx = std::cos(a), dy = std::sin(a);
  for (int t = 0; t < length; ++t) {
    double d = double(t) - double(length - 1) / 2.0;
    int i = detail::clampi(int(std::lround(double(c) + d * dy)), 0, size - 1);
    int j = detail::clampi(int(std::lround(double(c) + d * dx)), 0, size - 1);
    p.weights.at(i, j) += 1.0;
  }
  detail::normalize_simplex(p.weights);
  return p;
}

inline Psf make_delta_psf(int size = 1) {
  require(size >= 1 && size % 2 == 1, ErrorKind::Config, "make_delta_psf: even size rejected");
  Psf p;
  p.size = size;
  p.kind = PsfKind::Custom;
  p.weights = Tensor<double>::mat(size, size);
  p.weights.at(size / 2, size / 2) = 1.0;
  return p;
}

// Evenly spaced Gaussian bumps over band index, one per MSI band; width is
// the bump standard deviation in band-index units. width -> 0 degenerates to
// one-hot rows (identity when B_msi == B_hsi).
inline Srf synth_srf(int b_msi, int b_hsi, double width) {
  require(b_msi >= 1 && b_hsi >= 1, ErrorKind::Config, "synth_srf: band counts must be positive");
  require(b_msi <= b_hsi, ErrorKind::Config, "synth_srf: B_msi must not exceed B_hsi");
  require(width >= 0.0, ErrorKind::Config, "synth_srf: negative width");
  Srf r;
  r.matrix = Tensor<double>::mat(b_msi, b_hsi);
  for (int m = 0; m < b_msi; ++m) {
    double center = (double(m) + 0.5) * double(b_hsi) / double(b_msi) - 0.5;
    if (width < 1e-9) {
      r.matrix.at(m, detail::clampi(int(std::lround(center)), 0, b_hsi - 1)) = 1.0;
    } else {
      for (int b = 0; b < b_hsi; ++b) {
        double d = double(b) - center;
        r.matrix.at(m, b) = std::exp(-d * d / (2.0 * width * width));
      }
      double sum = 0.0;
      for (int b = 0; b < b_hsi; ++b) sum += r.matrix.at(m, b);
      for (int b = 0; b < b_hsi; ++b) r.matrix.at(m, b) /= sum;
    }
  }
  return r;
}

inline Srf identity_srf(int bands) { return synth_srf(bands, bands, 0.0); }

// --- noise ---------------------------------------------------------------

// Adds zero-mean Gaussian noise scaled so that 10*log10(P_signal/P_noise)
// equals snr_db, with P_signal the mean square of the clean tensor.
template <typename T>
inline void add_noise_snr(Tensor<T>& t, double snr_db, Rng& rng) {
  require(snr_db > 0.0, ErrorKind::Config, "noise: SNR must be positive");
  double power = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) power += double(t[i]) * double(t[i]);
  power /= double(t.size());
  double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] += T(sigma * rng.normal());
}

template <typename T>
inline double measured_snr_db(const Tensor<T>& clean, const Tensor<T>& noisy) {
  double ps = 0.0, pn = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    ps += double(clean[i]) * double(clean[i]);
    double d = double(noisy[i]) - double(clean[i]);
    pn += d * d;
  }
  return 10.0 * std::log10(ps / pn);
}

// --- observation model ----------------------------------------------------

template <typename T>
struct ObservedPair {
  Tensor<T> x;  // LR-HSI
  Tensor<T> y;  // HR-MSI
};

template <typename T>
inline ObservedPair<T> apply_observation(const Tensor<T>& z, const DegradationSpec& spec,
                                         std::optional<std::uint64_t> seed = std::nullopt) {
  require(z.rank() == 3, ErrorKind::Config, "apply_observation: cube must be 3-axis");
  require(spec.scale >= 1, ErrorKind::Config, "apply_observation: scale must be >= 1");
  require(spec.srf.bands_hsi() == z.dim(2), ErrorKind::Config,
          strfmt("apply_observation: SRF columns %d != cube bands %d", spec.srf.bands_hsi(),
                 z.dim(2)));
  bool noisy = spec.snr_x_db.has_value() || spec.snr_y_db.has_value();
  require(!noisy || seed.has_value(), ErrorKind::Config,
          "apply_observation: noise requested without a seed");
  ObservedPair<T> out;
  Tensor<T> kern = spec.psf.template as<T>();
  out.x = downsample(conv2d_per_band(z, kern, Pad::ReplicateSame), spec.scale);
  out.y = mode3(z, spec.srf.template as<T>());
  if (noisy) {
    Rng rng(*seed);
    if (spec.snr_x_db) {
      Rng rx = rng.fork("noise_x");
      add_noise_snr(out.x, *spec.snr_x_db, rx);
    }
    if (spec.snr_y_db) {
      Rng ry = rng.fork("noise_y");
      add_noise_snr(out.y, *spec.snr_y_db, ry);
    }
  }
  return out;
}

// max | mode3(down(conv(Z,k),s), R) - down(conv(mode3(Z,R),k),s) | --
// spatial and spectral degradation commute, so this is numerical zero.
template <typename T>
inline double commutation_check(const Tensor<T>& z, const Psf& psf, const Srf& srf, int s) {
  Tensor<T> kern = psf.as<T>();
  Tensor<T> r = srf.as<T>();
  Tensor<T> a = mode3(downsample(conv2d_per_band(z, kern, Pad::ReplicateSame), s), r);
  Tensor<T> b = downsample(conv2d_per_band(mode3(z, r), kern, Pad::ReplicateSame), s);
  return max_abs_diff(a, b);
}

// --- text formats ----------------------------------------------------------
// PSF file: first line "k k", then k rows of k decimals. SRF file: first line
// "B_msi B_hsi", then B_msi rows. '#' starts a comment. Loaders normalize
// (whole kernel / per row) and validate nonnegativity.

namespace detail {

inline std::vector<std::vector<double>> read_numeric_rows(const std::string& path, const char* what) {
  std::ifstream f(path);
  if (!f) fail_io(std::string(what) + ": cannot open: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(f, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::vector<double> row;
    double v;
    while (ss >> v) row.push_back(v);
    if (!ss.eof()) fail_io(std::string(what) + ": malformed number in " + path);
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) fail_io(std::string(what) + ": empty file: " + path);
  return rows;
}

inline void write_numeric_grid(const std::string& path, int r, int c, const Tensor<double>& m,
                               const char* header_comment) {
  std::ofstream f(path);
  if (!f) fail_io(std::string("cannot open for write: ") + path);
  char buf[64];
  f << "# " << header_comment << "\n" << r << " " << c << "\n";
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      std::snprintf(buf, sizeof(buf), "%.9g", m.at(i, j));
      f << (j ? " " : "") << buf;
    }
    f << "\n";
  }
  if (!f) fail_io(std::string("short write: ") + path);
}

}  // namespace detail

inline void save_psf(const Psf& p, const std::string& path) {
  detail::write_numeric_grid(path, p.size, p.size, p.weights, psf_kind_name(p.kind));
}

inline Psf load_psf(const std::string& path) {
  auto rows = detail::read_numeric_rows(path, "psf");
  if (rows[0].size() != 2) fail_io("psf: first line must be 'k k' in " + path);
  int k = int(rows[0][0]);
  if (k < 1 || k % 2 == 0 || rows[0][1] != double(k)) fail_io("psf: bad header in " + path);
  if (int(rows.size()) != k + 1) fail_io("psf: truncated grid in " + path);
  Psf p;
  p.size = k;
  p.kind = PsfKind::Custom;
  p.weights = Tensor<double>::mat(k, k);
  for (int i = 0; i < k; ++i) {
    if (int(rows[std::size_t(i) + 1].size()) != k) fail_io("psf: truncated grid in " + path);
    for (int j = 0; j < k; ++j) {
      double v = rows[std::size_t(i) + 1][std::size_t(j)];
      if (v < 0.0) fail_io("psf: negative entry in " + path);
      p.weights.at(i, j) = v;
    }
  }
  detail::normalize_simplex(p.weights);
  return p;
}

inline void save_srf(const Srf& r, const std::string& path) {
  detail::write_numeric_grid(path, r.bands_msi(), r.bands_hsi(), r.matrix, "srf");
}

inline Srf load_srf(const std::string& path) {
  auto rows = detail::read_numeric_rows(path, "srf");
  if (rows[0].size() != 2) fail_io("srf: first line must be 'B_msi B_hsi' in " + path);
  int bm = int(rows[0][0]), bh = int(rows[0][1]);
  if (bm < 1 || bh < 1 || bm > bh) fail_io("srf: bad header in " + path);
  if (int(rows.size()) != bm + 1) fail_io("srf: truncated matrix in " + path);
  Srf r;
  r.matrix = Tensor<double>::mat(bm, bh);
  for (int m = 0; m < bm; ++m) {
    if (int(rows[std::size_t(m) + 1].size()) != bh) fail_io("srf: truncated matrix in " + path);
    double sum = 0.0;
    for (int b = 0; b < bh; ++b) {
      double v = rows[std::size_t(m) + 1][std::size_t(b)];
      if (v < 0.0) fail_io("srf: negative entry in " + path);
      r.matrix.at(m, b) = v;
      sum += v;
    }
    if (sum <= 0.0) fail_io(strfmt("srf: row %d has zero mass", m) + " in " + path);
    for (int b = 0; b < bh; ++b) r.matrix.at(m, b) /= sum;
  }
  return r;
}

}  // namespace u2k
