#include <gtest/gtest.h>

#include "u2k/ops.hpp"
#include "u2k/rng.hpp"
#include "u2k/tensor.hpp"

using u2k::Pad;
using u2k::Rng;
using u2k::Tensor;

namespace {

Tensor<float> random_cube(int h, int w, int b, std::uint64_t seed) {
  Tensor<float> t = Tensor<float>::cube(h, w, b);
  Rng rng(seed);
  t.fill_uniform(rng, 0.0, 1.0);
  return t;
}

// independent nested-loop convolution oracle (replicate-same)
Tensor<float> conv_oracle_same(const Tensor<float>& in, const Tensor<float>& k) {
  int ks = k.dim(0), c = ks / 2;
  Tensor<float> out(in.dims());
  for (int b = 0; b < in.dim(2); ++b)
    for (int i = 0; i < in.dim(0); ++i)
      for (int j = 0; j < in.dim(1); ++j) {
        double acc = 0.0;
        for (int u = 0; u < ks; ++u)
          for (int v = 0; v < ks; ++v) {
            int si = std::clamp(i + u - c, 0, in.dim(0) - 1);
            int sj = std::clamp(j + v - c, 0, in.dim(1) - 1);
            acc += double(k.at(u, v)) * double(in.at3(si, sj, b));
          }
        out.at3(i, j, b) = float(acc);
      }
  return out;
}

}  // namespace

TEST(Tensor, InvariantsAndAccessors) {
  Tensor<float> t = Tensor<float>::cube(3, 4, 2);
  EXPECT_EQ(t.size(), 24u);
  t.at3(1, 2, 1) = 5.f;
  // band-outermost layout: plane(1) holds the second band contiguously
  EXPECT_EQ(t.plane(1)[1 * 4 + 2], 5.f);
  EXPECT_TRUE(t.all_finite());
  t[0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(Tensor<float>({0, 3}), u2k::Error);
  EXPECT_THROW(Tensor<float>({1, 2, 3, 4}), u2k::Error);
}

TEST(ConvPerBand, IdentityKernel) {
  Tensor<float> cube = random_cube(6, 5, 3, 1);
  Tensor<float> k = Tensor<float>::mat(1, 1);
  k.at(0, 0) = 1.0f;
  EXPECT_EQ(u2k::max_abs_diff(u2k::conv2d_per_band(cube, k, Pad::ReplicateSame), cube), 0.0);
}

TEST(ConvPerBand, SimplexKernelPreservesConstants) {
  Tensor<float> cube = Tensor<float>::cube(7, 7, 2, 0.37f);
  Tensor<float> k = Tensor<float>::mat(3, 3);
  Rng rng(2);
  float sum = 0.f;
  for (std::size_t i = 0; i < k.size(); ++i) {
    k[i] = float(rng.uniform());
    sum += k[i];
  }
  for (std::size_t i = 0; i < k.size(); ++i) k[i] /= sum;
  Tensor<float> out = u2k::conv2d_per_band(cube, k, Pad::ReplicateSame);
  EXPECT_LT(u2k::max_abs_diff(out, cube), 1e-6);
}

TEST(ConvPerBand, ValidRampMatchesSlidingMeans) {
  // 4x4 ramp, 3x3 uniform kernel, valid: each output is the 9-point mean
  Tensor<float> cube = Tensor<float>::cube(4, 4, 1);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) cube.at3(i, j, 0) = float(i * 4 + j);
  Tensor<float> k = Tensor<float>::mat(3, 3, 1.0f / 9.0f);
  Tensor<float> out = u2k::conv2d_per_band(cube, k, Pad::Valid);
  ASSERT_EQ(out.dim(0), 2);
  ASSERT_EQ(out.dim(1), 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      double mean = 0.0;
      for (int u = 0; u < 3; ++u)
        for (int v = 0; v < 3; ++v) mean += cube.at3(i + u, j + v, 0);
      EXPECT_NEAR(out.at3(i, j, 0), mean / 9.0, 1e-6);
    }
}

TEST(ConvPerBand, MatchesNestedLoopOracle) {
  Tensor<float> cube = random_cube(9, 8, 3, 3);
  Tensor<float> k = Tensor<float>::mat(5, 5);
  Rng rng(4);
  k.fill_uniform(rng, -0.2, 0.8);
  EXPECT_LT(u2k::max_abs_diff(u2k::conv2d_per_band(cube, k, Pad::ReplicateSame),
                              conv_oracle_same(cube, k)),
            1e-5);
}

TEST(ConvPerBand, KernelLargerThanImageStillClamps) {
  Tensor<float> cube = Tensor<float>::cube(4, 4, 1, 1.0f);
  Tensor<float> k = Tensor<float>::mat(7, 7, 1.0f / 49.0f);
  Tensor<float> out = u2k::conv2d_per_band(cube, k, Pad::ReplicateSame);
  EXPECT_LT(u2k::max_abs_diff(out, cube), 1e-6);  // constants preserved even fully clamped
}

TEST(ConvPerBand, Rejections) {
  Tensor<float> cube = random_cube(4, 4, 1, 5);
  Tensor<float> even = Tensor<float>::mat(2, 2, 0.25f);
  EXPECT_THROW(u2k::conv2d_per_band(cube, even, Pad::ReplicateSame), u2k::Error);
  Tensor<float> big = Tensor<float>::mat(5, 5, 0.04f);
  EXPECT_THROW(u2k::conv2d_per_band(cube, big, Pad::Valid), u2k::Error);
}

TEST(Downsample, IdentityAtScaleOne) {
  Tensor<float> cube = random_cube(4, 6, 2, 6);
  EXPECT_EQ(u2k::max_abs_diff(u2k::downsample(cube, 1), cube), 0.0);
}

TEST(Downsample, TopLeftSampling) {
  Tensor<float> cube = Tensor<float>::cube(4, 4, 1);
  for (int i = 0; i < 16; ++i) cube[std::size_t(i)] = float(i);
  Tensor<float> out = u2k::downsample(cube, 2);
  EXPECT_EQ(out.at3(0, 0, 0), 0.f);
  EXPECT_EQ(out.at3(0, 1, 0), 2.f);
  EXPECT_EQ(out.at3(1, 0, 0), 8.f);
  EXPECT_EQ(out.at3(1, 1, 0), 10.f);
}

TEST(Downsample, EveryOutputMatchesSampledSource) {
  Tensor<float> cube = random_cube(8, 8, 3, 7);
  Tensor<float> out = u2k::downsample(cube, 4);
  ASSERT_EQ(out.dim(0), 2);
  for (int b = 0; b < 3; ++b)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) EXPECT_EQ(out.at3(i, j, b), cube.at3(i * 4, j * 4, b));
}

TEST(Downsample, NamesOffendingAxis) {
  Tensor<float> cube = random_cube(6, 4, 1, 8);
  try {
    u2k::downsample(cube, 4);
    FAIL() << "expected rejection";
  } catch (const u2k::Error& e) {
    EXPECT_NE(std::string(e.what()).find("H=6"), std::string::npos);
  }
  Tensor<float> cube2 = random_cube(4, 6, 1, 8);
  try {
    u2k::downsample(cube2, 4);
    FAIL() << "expected rejection";
  } catch (const u2k::Error& e) {
    EXPECT_NE(std::string(e.what()).find("W=6"), std::string::npos);
  }
}

TEST(Mode3, IdentityMatrix) {
  Tensor<float> cube = random_cube(5, 5, 4, 9);
  Tensor<float> eye = Tensor<float>::mat(4, 4);
  for (int i = 0; i < 4; ++i) eye.at(i, i) = 1.f;
  EXPECT_EQ(u2k::max_abs_diff(u2k::mode3(cube, eye), cube), 0.0);
}

TEST(Mode3, AveragingRow) {
  Tensor<float> cube = random_cube(4, 4, 5, 10);
  Tensor<float> avg = Tensor<float>::mat(1, 5, 0.2f);
  Tensor<float> out = u2k::mode3(cube, avg);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double mean = 0.0;
      for (int b = 0; b < 5; ++b) mean += cube.at3(i, j, b);
      EXPECT_NEAR(out.at3(i, j, 0), mean / 5.0, 1e-6);
    }
}

TEST(Mode3, MatchesPerPixelMatvec) {
  Tensor<float> cube = random_cube(2, 2, 3, 11);
  Tensor<float> m = Tensor<float>::mat(2, 3);
  Rng rng(12);
  m.fill_uniform(rng, -1.0, 1.0);
  Tensor<float> out = u2k::mode3(cube, m);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int r = 0; r < 2; ++r) {
        double acc = 0.0;
        for (int b = 0; b < 3; ++b) acc += double(m.at(r, b)) * double(cube.at3(i, j, b));
        EXPECT_NEAR(out.at3(i, j, r), acc, 1e-6);
      }
}

TEST(Mode3, BandMismatchRejected) {
  Tensor<float> cube = random_cube(2, 2, 3, 13);
  Tensor<float> m = Tensor<float>::mat(2, 4);
  EXPECT_THROW(u2k::mode3(cube, m), u2k::Error);
}

// Linearity property: f(a*u + b*v) == a*f(u) + b*f(v) for the three linear maps
TEST(Linearity, ConvDownsampleMode3) {
  Rng rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor<float> u = random_cube(8, 8, 3, 100 + std::uint64_t(trial));
    Tensor<float> v = random_cube(8, 8, 3, 200 + std::uint64_t(trial));
    float a = float(rng.uniform(-2.0, 2.0)), b = float(rng.uniform(-2.0, 2.0));
    Tensor<float> mix(u.dims());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * u[i] + b * v[i];

    Tensor<float> kern = Tensor<float>::mat(3, 3);
    kern.fill_uniform(rng, -0.5, 1.0);
    Tensor<float> m = Tensor<float>::mat(2, 3);
    m.fill_uniform(rng, -1.0, 1.0);

    auto combine = [&](const Tensor<float>& fu, const Tensor<float>& fv) {
      Tensor<float> out(fu.dims());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * fu[i] + b * fv[i];
      return out;
    };
    auto rel_close = [](const Tensor<float>& x, const Tensor<float>& y) {
      double scale = std::max(1.0, double(std::max(std::abs(x.min_value()), std::abs(x.max_value()))));
      return u2k::max_abs_diff(x, y) / scale < 1e-5;
    };

    EXPECT_TRUE(rel_close(u2k::conv2d_per_band(mix, kern, Pad::ReplicateSame),
                          combine(u2k::conv2d_per_band(u, kern, Pad::ReplicateSame),
                                  u2k::conv2d_per_band(v, kern, Pad::ReplicateSame))));
    EXPECT_TRUE(rel_close(u2k::downsample(mix, 2),
                          combine(u2k::downsample(u, 2), u2k::downsample(v, 2))));
    EXPECT_TRUE(rel_close(u2k::mode3(mix, m), combine(u2k::mode3(u, m), u2k::mode3(v, m))));
  }
}

TEST(CropReplicated, BorderClampMatchesReplicatePadding) {
  Tensor<float> cube = random_cube(6, 6, 2, 15);
  Tensor<float> c = u2k::crop_replicated(cube, -2, 4, 4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int b = 0; b < 2; ++b)
        EXPECT_EQ(c.at3(i, j, b), cube.at3(std::clamp(i - 2, 0, 5), std::clamp(j + 4, 0, 5), b));
}
