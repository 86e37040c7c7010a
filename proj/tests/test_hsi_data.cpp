#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "u2k/hsi_data.hpp"

using u2k::HsiCube;
using u2k::Rng;
using u2k::Tensor;

namespace {
std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST(SynthHsi, SingleEndmemberGivesIdenticalSpectra) {
  HsiCube cube = u2k::synth_hsi(3, 8, 8, 6, 1);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      for (int b = 0; b < 6; ++b) EXPECT_EQ(cube.data.at3(i, j, b), cube.data.at3(0, 0, b));
}

TEST(SynthHsi, AbundancesSumToOnePerPixel) {
  auto maps = u2k::synth_abundances(Rng(5), 12, 10, 4);
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 10; ++j) {
      double sum = 0.0;
      for (const auto& m : maps) {
        EXPECT_GE(m.at3(i, j, 0), 0.0);
        sum += m.at3(i, j, 0);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(SynthHsi, DeterministicAndInUnitRange) {
  HsiCube a = u2k::synth_hsi(9, 16, 16, 8, 4);
  HsiCube b = u2k::synth_hsi(9, 16, 16, 8, 4);
  ASSERT_EQ(a.data.size(), b.data.size());
  EXPECT_EQ(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)), 0);
  EXPECT_GE(a.data.min_value(), 0.0f);
  EXPECT_LE(a.data.max_value(), 1.0f);
  HsiCube c = u2k::synth_hsi(10, 16, 16, 8, 4);
  EXPECT_NE(std::memcmp(a.data.data(), c.data.data(), a.data.size() * sizeof(float)), 0);
}

TEST(SynthHsi, SpectraArePositive) {
  auto spectra = u2k::synth_endmember_spectra(Rng(4), 16, 5);
  for (const auto& s : spectra) {
    for (double v : s) EXPECT_GT(v, 0.0);
    EXPECT_DOUBLE_EQ(s.back(), 1.0);
  }
}

TEST(Patches, SinglePatchEqualsCube) {
  HsiCube cube = u2k::synth_hsi(11, 16, 16, 4, 2);
  auto patches = u2k::extract_patches(cube.data, 16, 8);
  ASSERT_EQ(patches.size(), 1u);
  EXPECT_EQ(u2k::max_abs_diff(patches[0], cube.data), 0.0);
}

TEST(Patches, DisjointTiling) {
  HsiCube cube = u2k::synth_hsi(12, 64, 64, 4, 3);
  auto patches = u2k::extract_patches(cube.data, 32, 32);
  ASSERT_EQ(patches.size(), 4u);
  EXPECT_EQ(u2k::max_abs_diff(patches[0], u2k::crop_replicated(cube.data, 0, 0, 32, 32)), 0.0);
  EXPECT_EQ(u2k::max_abs_diff(patches[3], u2k::crop_replicated(cube.data, 32, 32, 32, 32)), 0.0);
}

TEST(Patches, CountFormulaWithStride) {
  // 128 extent, size 32, stride 8: (96/8 + 1)^2 = 169 patches
  Tensor<float> cube = Tensor<float>::cube(128, 128, 1, 0.f);
  auto patches = u2k::extract_patches(cube, 32, 8);
  EXPECT_EQ(patches.size(), 169u);
}

TEST(Patches, EdgeAlignedTailWindow) {
  auto offs = u2k::patch_offsets(10, 4, 3);  // 0,3,6 then tail at 6? last+size=10 exactly
  ASSERT_EQ(offs.size(), 3u);
  EXPECT_EQ(offs.back(), 6);
  offs = u2k::patch_offsets(11, 4, 3);  // 0,3,6 then tail 7
  ASSERT_EQ(offs.size(), 4u);
  EXPECT_EQ(offs.back(), 7);
}

TEST(Patches, OversizeRejected) {
  Tensor<float> cube = Tensor<float>::cube(8, 8, 1, 0.f);
  EXPECT_THROW(u2k::extract_patches(cube, 9, 1), u2k::Error);
}

TEST(CubeFile, RoundTripBitExact) {
  HsiCube cube = u2k::synth_hsi(13, 12, 10, 5, 3);
  std::string path = temp_path("u2k_cube_test.hsc");
  u2k::write_cube(cube, path);
  HsiCube back = u2k::read_cube(path);
  ASSERT_EQ(back.data.dims(), cube.data.dims());
  EXPECT_EQ(std::memcmp(back.data.data(), cube.data.data(), cube.data.size() * sizeof(float)), 0);
  std::filesystem::remove(path);
}

TEST(CubeFile, BadMagicRejected) {
  std::string path = temp_path("u2k_cube_badmagic.hsc");
  std::ofstream f(path, std::ios::binary);
  f << "XXXX/123456789012345";
  f.close();
  try {
    u2k::read_cube(path);
    FAIL() << "expected io error";
  } catch (const u2k::Error& e) {
    EXPECT_EQ(e.kind(), u2k::ErrorKind::Io);
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(CubeFile, TruncationRejected) {
  HsiCube cube = u2k::synth_hsi(14, 8, 8, 4, 2);
  std::string path = temp_path("u2k_cube_trunc.hsc");
  u2k::write_cube(cube, path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 64);
  try {
    u2k::read_cube(path);
    FAIL() << "expected io error";
  } catch (const u2k::Error& e) {
    EXPECT_EQ(e.kind(), u2k::ErrorKind::Io);
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(CubeFile, DimsOverflowRejected) {
  std::string path = temp_path("u2k_cube_overflow.hsc");
  std::ofstream f(path, std::ios::binary);
  f << "HSC1";
  std::uint32_t h = 0xffffffffu, w = 4, b = 4;
  f.write(reinterpret_cast<const char*>(&h), 4);
  f.write(reinterpret_cast<const char*>(&w), 4);
  f.write(reinterpret_cast<const char*>(&b), 4);
  f.put(0);
  f.close();
  try {
    u2k::read_cube(path);
    FAIL() << "expected io error";
  } catch (const u2k::Error& e) {
    EXPECT_EQ(e.kind(), u2k::ErrorKind::Io);
    EXPECT_NE(std::string(e.what()).find("overflow"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(Manifest, RoundTripWithHeaders) {
  auto dir = std::filesystem::temp_directory_path() / "u2k_manifest_test";
  std::filesystem::create_directories(dir);
  HsiCube a = u2k::synth_hsi(1, 8, 8, 4, 2);
  HsiCube b = u2k::synth_hsi(2, 8, 8, 4, 2);
  u2k::write_cube(a, (dir / "a.hsc").string());
  u2k::write_cube(b, (dir / "b.hsc").string());
  u2k::DatasetManifest m;
  m.patch = 8;
  m.stride = 4;
  m.seed = 77;
  m.entries.push_back({"train", (dir / "a.hsc").string()});
  m.entries.push_back({"test", (dir / "b.hsc").string()});
  u2k::write_manifest(m, (dir / "manifest.txt").string());
  u2k::DatasetManifest back = u2k::read_manifest((dir / "manifest.txt").string());
  EXPECT_EQ(back.patch, 8);
  EXPECT_EQ(back.stride, 4);
  EXPECT_EQ(back.seed, 77u);
  ASSERT_EQ(back.entries.size(), 2u);
  EXPECT_EQ(back.paths("train").size(), 1u);
  EXPECT_EQ(back.paths("test").size(), 1u);
  HsiCube loaded = u2k::read_cube(back.paths("train")[0]);
  EXPECT_EQ(u2k::max_abs_diff(loaded.data, a.data), 0.0);
  std::filesystem::remove_all(dir);
}

TEST(Manifest, DuplicateCubeRejected) {
  auto dir = std::filesystem::temp_directory_path() / "u2k_manifest_dup";
  std::filesystem::create_directories(dir);
  std::ofstream f(dir / "manifest.txt");
  f << "train a.hsc\ntest a.hsc\n";
  f.close();
  EXPECT_THROW(u2k::read_manifest((dir / "manifest.txt").string()), u2k::Error);
  std::filesystem::remove_all(dir);
}
