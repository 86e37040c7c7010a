#include <gtest/gtest.h>

#include <cstring>

#include "u2k/fusion_net.hpp"
#include "u2k/hsi_data.hpp"

using u2k::DegradationSpec;
using u2k::FusionNet;
using u2k::PretrainConfig;
using u2k::Rng;
using u2k::Tensor;

namespace {

DegradationSpec tiny_spec() {
  DegradationSpec spec;
  spec.psf = u2k::make_gaussian_psf(3, 1.0);
  spec.srf = u2k::synth_srf(2, 6, 1.0);
  spec.scale = 2;
  return spec;
}

std::vector<Tensor<float>> tiny_cubes(int count, std::uint64_t seed) {
  std::vector<Tensor<float>> out;
  for (int i = 0; i < count; ++i)
    out.push_back(u2k::synth_hsi(seed + std::uint64_t(i), 16, 16, 6, 3).data);
  return out;
}

}  // namespace

TEST(FusionNet, OutputShapeContract) {
  FusionNet<float> net(6, 2, 2, 1);
  Tensor<float> x = Tensor<float>::cube(8, 8, 6, 0.3f);
  Tensor<float> y = Tensor<float>::cube(16, 16, 2, 0.6f);
  Tensor<float> z = net.fuse(x, y);
  EXPECT_EQ(z.dims(), (std::vector<int>{16, 16, 6}));
  EXPECT_TRUE(z.all_finite());
}

TEST(FusionNet, DimMismatchRejected) {
  FusionNet<float> net(6, 2, 2, 1);
  Tensor<float> x = Tensor<float>::cube(8, 8, 6, 0.3f);
  Tensor<float> bad_y = Tensor<float>::cube(12, 12, 2, 0.6f);
  EXPECT_THROW(net.fuse(x, bad_y), u2k::Error);
  Tensor<float> bad_bands = Tensor<float>::cube(16, 16, 3, 0.6f);
  EXPECT_THROW(net.fuse(x, bad_bands), u2k::Error);
}

TEST(Pretrain, LossDecreasesOnOverfitableData) {
  DegradationSpec spec = tiny_spec();
  auto cubes = tiny_cubes(1, 50);
  FusionNet<float> net(6, 2, 2, 2);
  PretrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch = 4;
  cfg.patch = 16;
  cfg.stride = 16;
  cfg.seed = 3;
  auto curve = u2k::pretrain(net, cubes, spec, cfg);
  ASSERT_EQ(curve.size(), 30u);
  EXPECT_LT(curve.back(), curve.front());
}

TEST(Pretrain, DeterministicWeightsAndCurveRows) {
  DegradationSpec spec = tiny_spec();
  auto cubes = tiny_cubes(2, 60);
  auto run = [&](std::vector<double>& curve) {
    FusionNet<float> net(6, 2, 2, 5);
    PretrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch = 4;
    cfg.patch = 8;
    cfg.stride = 8;
    cfg.seed = 4;
    curve = u2k::pretrain(net, cubes, spec, cfg);
    return net.checksum();
  };
  std::vector<double> c1, c2;
  auto s1 = run(c1);
  auto s2 = run(c2);
  EXPECT_EQ(s1, s2);  // bit-identical final weights for a fixed seed
  ASSERT_EQ(c1.size(), c2.size());
  for (std::size_t i = 0; i < c1.size(); ++i) EXPECT_EQ(c1[i], c2[i]);
}

TEST(Pretrain, EpochCallbackFiresPerEpoch) {
  DegradationSpec spec = tiny_spec();
  auto cubes = tiny_cubes(1, 70);
  FusionNet<float> net(6, 2, 2, 6);
  PretrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch = 4;
  cfg.patch = 8;
  cfg.stride = 8;
  int calls = 0;
  u2k::pretrain(net, cubes, spec, cfg, [&](int epoch, double loss) {
    EXPECT_EQ(epoch, calls);
    EXPECT_TRUE(std::isfinite(loss));
    ++calls;
  });
  EXPECT_EQ(calls, 5);
}

TEST(FusionNet, FreezeBlocksWeightChanges) {
  FusionNet<float> net(6, 2, 2, 7);
  net.freeze();
  EXPECT_TRUE(net.frozen());
  auto sum = net.checksum();
  // an adam step over frozen params must not move them
  u2k::Adam<float> opt(net.params(), {{u2k::kGroupFusion, 0.1}});
  for (u2k::Param<float>* p : net.params()) p->grad.fill(1.0f);
  opt.step();
  EXPECT_EQ(net.checksum(), sum);
}

TEST(FusionNet, LipschitzSanityUnderInputPerturbation) {
  FusionNet<float> net(6, 2, 2, 8);
  Tensor<float> x = Tensor<float>::cube(8, 8, 6);
  Tensor<float> y = Tensor<float>::cube(16, 16, 2);
  Rng rng(9);
  x.fill_uniform(rng, 0.0, 1.0);
  y.fill_uniform(rng, 0.0, 1.0);
  Tensor<float> base = net.fuse(x, y);
  Tensor<float> xp = x;
  for (std::size_t i = 0; i < xp.size(); ++i) xp[i] += 1e-3f;
  Tensor<float> pert = net.fuse(xp, y);
  EXPECT_TRUE(pert.all_finite());
  double diff = u2k::max_abs_diff(base, pert);
  EXPECT_LT(diff, 1.0);  // millinudge must not blow up
  EXPECT_GT(diff, 0.0);
}

TEST(FusionNet, SnapshotRoundTripThroughFile) {
  FusionNet<float> net(6, 2, 2, 10);
  auto path = (std::filesystem::temp_directory_path() / "u2k_fusion_test.u2kw").string();
  auto params = net.params();
  u2k::save_snapshot(path, std::vector<const u2k::Param<float>*>(params.begin(), params.end()));
  FusionNet<float> other(6, 2, 2, 11);
  EXPECT_NE(other.checksum(), net.checksum());
  u2k::apply_snapshot(u2k::load_snapshot(path), other.params());
  EXPECT_EQ(other.checksum(), net.checksum());
  std::filesystem::remove(path);
}
