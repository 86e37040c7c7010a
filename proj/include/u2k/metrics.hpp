// Fusion quality measures. All accumulation is in double regardless of the
// cube precision. PSNR assumes unit data range and is capped at 100 dB;
// SSIM uses the standard 11x11 Gaussian window (sigma 1.5) with unit-range
// stabilizers, falling back to global statistics when the image is smaller
// than the window; SAM is the mean per-pixel spectral angle in degrees;
// ERGAS is the band-normalized RMSE aggregate scaled by 100/s.
#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "u2k/common.hpp"
#include "u2k/tensor.hpp"

namespace u2k {

template <typename T>
inline double rmse(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.same_dims(b), ErrorKind::Config, "rmse: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = double(a[i]) - double(b[i]);
    acc += d * d;
  }
  return std::sqrt(acc / double(a.size()));
}

template <typename T>
inline double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  double r = rmse(a, b);
  if (r < 1e-5) return 100.0;
  return 20.0 * std::log10(1.0 / r);
}

struct SsimResult {
  double value = 0.0;
  bool global_fallback = false;  // extent smaller than the 11x11 window
};

template <typename T>
inline SsimResult ssim(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.same_dims(b) && a.rank() == 3, ErrorKind::Config, "ssim: cubes of equal shape required");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  int h = a.dim(0), w = a.dim(1), bands = a.dim(2);
  SsimResult res;
  if (h < kWin || w < kWin) {
    res.global_fallback = true;
    double total = 0.0;
    for (int band = 0; band < bands; ++band) {
      const T *pa = a.plane(band), *pb = b.plane(band);
      std::size_t n = std::size_t(h) * std::size_t(w);
      double ma = 0, mb = 0;
      for (std::size_t i = 0; i < n; ++i) {
        ma += double(pa[i]);
        mb += double(pb[i]);
      }
      ma /= double(n);
      mb /= double(n);
      double va = 0, vb = 0, cov = 0;
      for (std::size_t i = 0; i < n; ++i) {
        double da = double(pa[i]) - ma, db = double(pb[i]) - mb;
        va += da * da;
        vb += db * db;
        cov += da * db;
      }
      va /= double(n);
      vb /= double(n);
      cov /= double(n);
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    res.value = total / double(bands);
    return res;
  }
  // 11x11 Gaussian window, normalized
  double win[kWin][kWin];
  double wsum = 0.0;
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) {
      double di = i - kWin / 2, dj = j - kWin / 2;
      win[i][j] = std::exp(-(di * di + dj * dj) / (2 * kSigma * kSigma));
      wsum += win[i][j];
    }
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) win[i][j] /= wsum;

  double total = 0.0;
  std::size_t count = 0;
  for (int band = 0; band < bands; ++band) {
    const T *pa = a.plane(band), *pb = b.plane(band);
    for (int i = 0; i + kWin <= h; ++i)
      for (int j = 0; j + kWin <= w; ++j) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int u = 0; u < kWin; ++u)
          for (int v = 0; v < kWin; ++v) {
            double wt = win[u][v];
            double va = double(pa[(i + u) * w + j + v]);
            double vb = double(pb[(i + u) * w + j + v]);
            ma += wt * va;
            mb += wt * vb;
            saa += wt * va * va;
            sbb += wt * vb * vb;
            sab += wt * va * vb;
          }
        double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  }
  res.value = total / double(count);
  return res;
}

struct SamResult {
  double degrees = 0.0;
  std::size_t skipped = 0;  // zero-norm pixels
};

template <typename T>
inline SamResult sam(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.same_dims(b) && a.rank() == 3, ErrorKind::Config, "sam: cubes of equal shape required");
  int h = a.dim(0), w = a.dim(1), bands = a.dim(2);
  SamResult res;
  double total = 0.0;
  std::size_t used = 0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double dot = 0, na = 0, nb = 0;
      for (int band = 0; band < bands; ++band) {
        double va = double(a.at3(i, j, band)), vb = double(b.at3(i, j, band));
        dot += va * vb;
        na += va * va;
        nb += vb * vb;
      }
      if (na <= 0.0 || nb <= 0.0) {
        ++res.skipped;
        continue;
      }
      double c = dot / (std::sqrt(na) * std::sqrt(nb));
      c = std::min(1.0, std::max(-1.0, c));
      total += std::acos(c);
      ++used;
    }
  require(used > 0, ErrorKind::Config, "sam: every pixel has zero norm");
  res.degrees = total / double(used) * 180.0 / M_PI;
  return res;
}

struct ErgasResult {
  double value = 0.0;
  std::size_t excluded_bands = 0;  // bands with zero reference mean
};

template <typename T>
inline ErgasResult ergas(const Tensor<T>& ref, const Tensor<T>& est, int s) {
  require(ref.same_dims(est) && ref.rank() == 3, ErrorKind::Config,
          "ergas: cubes of equal shape required");
  require(s >= 1, ErrorKind::Config, "ergas: resolution ratio must be >= 1");
  int bands = ref.dim(2);
  std::size_t np = std::size_t(ref.dim(0)) * std::size_t(ref.dim(1));
  ErgasResult res;
  double acc = 0.0;
  int used = 0;
  for (int band = 0; band < bands; ++band) {
    const T *pr = ref.plane(band), *pe = est.plane(band);
    double mean = 0.0, se = 0.0;
    for (std::size_t i = 0; i < np; ++i) {
      mean += double(pr[i]);
      double d = double(pe[i]) - double(pr[i]);
      se += d * d;
    }
    mean /= double(np);
    if (mean == 0.0) {
      ++res.excluded_bands;
      continue;
    }
    double band_rmse = std::sqrt(se / double(np));
    acc += (band_rmse / mean) * (band_rmse / mean);
    ++used;
  }
  require(used > 0, ErrorKind::Config, "ergas: every band has zero reference mean");
  res.value = 100.0 / double(s) * std::sqrt(acc / double(used));
  return res;
}

// --- report ----------------------------------------------------------------

struct MetricReport {
  std::string method;
  std::string degradation;
  std::string image;
  double rmse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double sam = 0.0;
  double ergas = 0.0;
};

template <typename T>
inline MetricReport evaluate(const Tensor<T>& ref, const Tensor<T>& est, int s,
                             std::string method = "", std::string degradation = "",
                             std::string image = "") {
  MetricReport r;
  r.method = std::move(method);
  r.degradation = std::move(degradation);
  r.image = std::move(image);
  r.rmse = rmse(ref, est);
  r.psnr = psnr(ref, est);
  r.ssim = ssim(ref, est).value;
  r.sam = sam(ref, est).degrees;
  r.ergas = ergas(ref, est, s).value;
  return r;
}

inline std::string metric_csv_header() { return "method,degradation,image,rmse,psnr,ssim,sam,ergas"; }

inline std::string metric_csv_row(const MetricReport& r) {
  return r.method + "," + r.degradation + "," + r.image + "," + strfmt("%.6g", r.rmse) + "," +
         strfmt("%.6g", r.psnr) + "," + strfmt("%.6g", r.ssim) + "," + strfmt("%.6g", r.sam) + "," +
         strfmt("%.6g", r.ergas);
}

// --- normalized PSNR sweep ---------------------------------------------------

struct MmnCurve {
  std::vector<std::pair<double, double>> points;  // (input-psnr, output-psnr) normalized to [0,1]
  bool degenerate_in = false;
  bool degenerate_out = false;
};

// Max-min normalizes the input and output PSNR series independently; a
// constant series maps to all zeros and is flagged.
inline MmnCurve mmn_psnr_sweep(const std::vector<std::pair<double, double>>& records) {
  require(records.size() >= 2, ErrorKind::Config, "mmn_psnr_sweep: need at least 2 records");
  MmnCurve c;
  double in_lo = records[0].first, in_hi = records[0].first;
  double out_lo = records[0].second, out_hi = records[0].second;
  for (const auto& r : records) {
    in_lo = std::min(in_lo, r.first);
    in_hi = std::max(in_hi, r.first);
    out_lo = std::min(out_lo, r.second);
    out_hi = std::max(out_hi, r.second);
  }
  c.degenerate_in = in_hi == in_lo;
  c.degenerate_out = out_hi == out_lo;
  for (const auto& r : records)
    c.points.emplace_back(c.degenerate_in ? 0.0 : (r.first - in_lo) / (in_hi - in_lo),
                          c.degenerate_out ? 0.0 : (r.second - out_lo) / (out_hi - out_lo));
  return c;
}

}  // namespace u2k
