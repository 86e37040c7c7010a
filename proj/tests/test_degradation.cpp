#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "u2k/degradation.hpp"
#include "u2k/rng.hpp"

using u2k::DegradationSpec;
using u2k::Psf;
using u2k::Rng;
using u2k::Srf;
using u2k::Tensor;

namespace {

Tensor<float> random_cube(int h, int w, int b, std::uint64_t seed) {
  Tensor<float> t = Tensor<float>::cube(h, w, b);
  Rng rng(seed);
  t.fill_uniform(rng, 0.0, 1.0);
  return t;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST(GaussianPsf, SizeOneIsDelta) {
  Psf p = u2k::make_gaussian_psf(1, 2.5);
  ASSERT_EQ(p.size, 1);
  EXPECT_DOUBLE_EQ(p.weights.at(0, 0), 1.0);
}

TEST(GaussianPsf, Size13Sigma3SumsToOneWithSymmetry) {
  Psf p = u2k::make_gaussian_psf(13, 3.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < p.weights.size(); ++i) sum += p.weights[i];
  EXPECT_NEAR(sum, 1.0, 1e-6);
  int c = 6;
  for (int i = 0; i < 13; ++i)
    for (int j = 0; j < 13; ++j) {
      EXPECT_DOUBLE_EQ(p.weights.at(i, j), p.weights.at(j, i));
      EXPECT_DOUBLE_EQ(p.weights.at(i, j), p.weights.at(2 * c - i, j));
    }
  u2k::validate_psf(p);
}

TEST(GaussianPsf, HugeSigmaApproachesUniform) {
  Psf p = u2k::make_gaussian_psf(3, 100.0);
  for (std::size_t i = 0; i < p.weights.size(); ++i) EXPECT_NEAR(p.weights[i], 1.0 / 9.0, 1e-4);
}

TEST(GaussianPsf, EvenSizeRejected) { EXPECT_THROW(u2k::make_gaussian_psf(4, 1.0), u2k::Error); }

TEST(PsfZoo, BoxDiskMotion) {
  Psf box = u2k::make_box_psf(3);
  for (std::size_t i = 0; i < box.weights.size(); ++i) EXPECT_DOUBLE_EQ(box.weights[i], 1.0 / 9.0);

  Psf disk0 = u2k::make_disk_psf(5, 0.0);
  EXPECT_DOUBLE_EQ(disk0.weights.at(2, 2), 1.0);  // delta at center
  double sum = 0.0;
  for (std::size_t i = 0; i < disk0.weights.size(); ++i) sum += disk0.weights[i];
  EXPECT_DOUBLE_EQ(sum, 1.0);

  // horizontal motion: center row 1/5 each, rasterization oracle
  Psf mot = u2k::make_motion_psf(5, 5, 0.0);
  for (int j = 0; j < 5; ++j) EXPECT_DOUBLE_EQ(mot.weights.at(2, j), 0.2);
  for (int i = 0; i < 5; ++i) {
    if (i == 2) continue;
    for (int j = 0; j < 5; ++j) EXPECT_DOUBLE_EQ(mot.weights.at(i, j), 0.0);
  }

  EXPECT_THROW(u2k::make_disk_psf(5, 3.0), u2k::Error);    // radius exceeds kernel
  EXPECT_THROW(u2k::make_motion_psf(5, 7, 0.0), u2k::Error);  // length exceeds kernel
}

TEST(SynthSrf, ZeroWidthIsIdentityWhenSquare) {
  Srf r = u2k::synth_srf(4, 4, 0.0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(r.matrix.at(i, j), i == j ? 1.0 : 0.0);
}

TEST(SynthSrf, SingleRowSumsToOne) {
  Srf r = u2k::synth_srf(1, 10, 2.0);
  double sum = 0.0;
  for (int b = 0; b < 10; ++b) sum += r.matrix.at(0, b);
  EXPECT_NEAR(sum, 1.0, 1e-9);
  u2k::validate_srf(r);
}

TEST(SynthSrf, BumpCentersLandNearExpectedBands) {
  Srf r = u2k::synth_srf(3, 31, 3.0);
  int expected[3] = {5, 15, 25};
  for (int m = 0; m < 3; ++m) {
    int argmax = 0;
    for (int b = 1; b < 31; ++b)
      if (r.matrix.at(m, b) > r.matrix.at(m, argmax)) argmax = b;
    EXPECT_NEAR(argmax, expected[m], 1);
  }
}

TEST(ApplyObservation, IdentityOperatorsPassThrough) {
  Tensor<float> z = random_cube(6, 6, 4, 1);
  DegradationSpec spec;
  spec.psf = u2k::make_delta_psf(3);
  spec.srf = u2k::identity_srf(4);
  spec.scale = 1;
  auto obs = u2k::apply_observation(z, spec);
  EXPECT_EQ(u2k::max_abs_diff(obs.x, z), 0.0);
  EXPECT_EQ(u2k::max_abs_diff(obs.y, z), 0.0);
}

TEST(ApplyObservation, ConstantCubeStaysConstant) {
  Tensor<float> z = Tensor<float>::cube(8, 8, 4, 0.42f);
  DegradationSpec spec;
  spec.psf = u2k::make_gaussian_psf(5, 1.5);
  spec.srf = u2k::synth_srf(2, 4, 1.0);
  spec.scale = 2;
  auto obs = u2k::apply_observation(z, spec);
  EXPECT_LT(std::abs(obs.x.min_value() - 0.42f), 1e-6);
  EXPECT_LT(std::abs(obs.x.max_value() - 0.42f), 1e-6);
  EXPECT_LT(std::abs(obs.y.min_value() - 0.42f), 1e-6);
  EXPECT_LT(std::abs(obs.y.max_value() - 0.42f), 1e-6);
}

TEST(ApplyObservation, MatchesNestedLoopOracle) {
  Tensor<float> z = random_cube(16, 16, 8, 2);
  DegradationSpec spec;
  spec.psf = u2k::make_gaussian_psf(5, 1.5);
  spec.srf = u2k::synth_srf(3, 8, 1.0);
  spec.scale = 4;
  auto obs = u2k::apply_observation(z, spec);

  // independent loops
  Tensor<float> kern = spec.psf.as<float>();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int b = 0; b < 8; ++b) {
        double acc = 0.0;
        for (int u = 0; u < 5; ++u)
          for (int v = 0; v < 5; ++v) {
            int si = std::clamp(i * 4 + u - 2, 0, 15);
            int sj = std::clamp(j * 4 + v - 2, 0, 15);
            acc += double(kern.at(u, v)) * double(z.at3(si, sj, b));
          }
        EXPECT_NEAR(obs.x.at3(i, j, b), acc, 1e-5);
      }
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j)
      for (int m = 0; m < 3; ++m) {
        double acc = 0.0;
        for (int b = 0; b < 8; ++b) acc += spec.srf.matrix.at(m, b) * double(z.at3(i, j, b));
        EXPECT_NEAR(obs.y.at3(i, j, m), acc, 1e-5);
      }
}

TEST(ApplyObservation, NoiseRequiresSeed) {
  Tensor<float> z = random_cube(8, 8, 4, 3);
  DegradationSpec spec;
  spec.psf = u2k::make_delta_psf(1);
  spec.srf = u2k::identity_srf(4);
  spec.scale = 1;
  spec.snr_x_db = 30.0;
  EXPECT_THROW(u2k::apply_observation(z, spec), u2k::Error);
  auto obs = u2k::apply_observation(z, spec, 42);  // with a seed it works
  EXPECT_GT(u2k::max_abs_diff(obs.x, z), 0.0);
}

TEST(ApplyObservation, DeterministicGivenSeed) {
  Tensor<float> z = random_cube(8, 8, 4, 4);
  DegradationSpec spec;
  spec.psf = u2k::make_gaussian_psf(3, 1.0);
  spec.srf = u2k::synth_srf(2, 4, 1.0);
  spec.scale = 2;
  spec.snr_x_db = 25.0;
  spec.snr_y_db = 25.0;
  auto a = u2k::apply_observation(z, spec, 7);
  auto b = u2k::apply_observation(z, spec, 7);
  EXPECT_EQ(u2k::max_abs_diff(a.x, b.x), 0.0);
  EXPECT_EQ(u2k::max_abs_diff(a.y, b.y), 0.0);
}

TEST(Noise, MeasuredSnrWithinHalfDb) {
  Tensor<float> clean = random_cube(64, 64, 4, 5);
  for (double target : {20.0, 30.0, 40.0}) {
    Tensor<float> noisy = clean;
    Rng rng(17);
    u2k::add_noise_snr(noisy, target, rng);
    EXPECT_NEAR(u2k::measured_snr_db(clean, noisy), target, 0.5);
  }
}

TEST(Commutation, ExactForTrivialOperators) {
  Tensor<float> z = random_cube(8, 8, 4, 6);
  EXPECT_EQ(u2k::commutation_check(z, u2k::make_delta_psf(3), u2k::identity_srf(4), 2), 0.0);
  Tensor<float> c = Tensor<float>::cube(8, 8, 4, 0.3f);
  EXPECT_LT(u2k::commutation_check(c, u2k::make_gaussian_psf(5, 2.0), u2k::synth_srf(2, 4, 1.0), 2),
            1e-6);
}

TEST(Commutation, HoldsForRandomSceneAndOperators) {
  Tensor<float> z = random_cube(16, 16, 8, 7);
  EXPECT_LT(u2k::commutation_check(z, u2k::make_gaussian_psf(5, 1.5), u2k::synth_srf(3, 8, 1.0), 2),
            1e-5);
}

TEST(PsfFile, RoundTripAndValidation) {
  Psf p = u2k::make_gaussian_psf(5, 1.3);
  std::string path = temp_path("u2k_test.psf");
  u2k::save_psf(p, path);
  Psf q = u2k::load_psf(path);
  EXPECT_EQ(q.size, 5);
  EXPECT_LT(u2k::max_abs_diff(q.weights, p.weights), 1e-8);
  u2k::validate_psf(q);
  std::filesystem::remove(path);

  // unnormalized input is normalized on load
  std::ofstream f(path);
  f << "# comment line\n3 3\n1 1 1\n1 2 1\n1 1 1\n";
  f.close();
  Psf r = u2k::load_psf(path);
  double sum = 0.0;
  for (std::size_t i = 0; i < r.weights.size(); ++i) sum += r.weights[i];
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_NEAR(r.weights.at(1, 1), 0.2, 1e-12);
  std::filesystem::remove(path);

  // negative entries rejected
  std::ofstream g(path);
  g << "3 3\n1 1 1\n1 -2 1\n1 1 1\n";
  g.close();
  EXPECT_THROW(u2k::load_psf(path), u2k::Error);
  std::filesystem::remove(path);
}

TEST(SrfFile, RoundTripNormalizesRows) {
  std::string path = temp_path("u2k_test.srf");
  std::ofstream f(path);
  f << "2 4\n1 1 0 0\n0 0 3 1\n";
  f.close();
  Srf r = u2k::load_srf(path);
  EXPECT_DOUBLE_EQ(r.matrix.at(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(r.matrix.at(1, 2), 0.75);
  u2k::validate_srf(r);
  u2k::save_srf(r, path);
  Srf rr = u2k::load_srf(path);
  EXPECT_LT(u2k::max_abs_diff(rr.matrix, r.matrix), 1e-8);
  std::filesystem::remove(path);

  std::ofstream g(path);
  g << "2 4\n1 1 0 0\n";  // truncated
  g.close();
  EXPECT_THROW(u2k::load_srf(path), u2k::Error);
  std::filesystem::remove(path);
}

// zoo-wide simplex property: every generated kernel and SRF is on the simplex
TEST(Zoo, SimplexInvariants) {
  std::vector<Psf> kernels;
  for (int size : {5, 9, 13, 17})
    for (double sigma : {1.0, 2.0, 3.0, 4.0}) kernels.push_back(u2k::make_gaussian_psf(size, sigma));
  kernels.push_back(u2k::make_box_psf(5));
  kernels.push_back(u2k::make_disk_psf(9, 3.0));
  kernels.push_back(u2k::make_motion_psf(9, 7, 30.0));
  for (const Psf& p : kernels) u2k::validate_psf(p);
  for (double width : {1.0, 2.0, 4.0}) u2k::validate_srf(u2k::synth_srf(3, 16, width));
}
