// Compact residual fusion network: the LR-HSI is upsampled with a fixed
// bilinear interpolator, concatenated with the HR-MSI, passed through four
// 3x3 conv layers (hidden width 32, ReLU) and added back to the upsampled
// input. Pretrained on the known degradation, then frozen; gradients still
// flow through it to earlier modules during adaptation.
#pragma once

#include <functional>
#include <vector>

#include "u2k/adam.hpp"
#include "u2k/common.hpp"
#include "u2k/degradation.hpp"
#include "u2k/graph.hpp"
#include "u2k/hsi_data.hpp"
#include "u2k/rng.hpp"
#include "u2k/snapshot.hpp"
#include "u2k/trainer.hpp"

namespace u2k {

// optimizer parameter groups used across the toolkit
enum ParamGroup : int {
  kGroupDwSpatial = 0,
  kGroupDwSpectral = 1,
  kGroupDt = 2,
  kGroupFusion = 3,
};

namespace detail {

template <typename T>
inline Param<T> make_conv_param(const std::string& name, int cout, int cin, int k, Rng rng,
                                int group = kGroupFusion) {
  Tensor<T> w = Tensor<T>::mat(cout, cin * k * k);
  double scale = 1.0 / std::sqrt(double(cin * k * k));
  w.fill_uniform(rng, -scale, scale);
  return Param<T>(name, std::move(w), true, group);
}

template <typename T>
inline Param<T> make_dense_param(const std::string& name, int out, int in, Rng rng, int group) {
  Tensor<T> w = Tensor<T>::mat(out, in);
  double scale = 1.0 / std::sqrt(double(in));
  w.fill_uniform(rng, -scale, scale);
  return Param<T>(name, std::move(w), true, group);
}

}  // namespace detail

template <typename T>
class FusionNet {
 public:
  static constexpr int kHidden = 32;

  FusionNet(int bands_hsi, int bands_msi, int scale, std::uint64_t init_seed)
      : bands_hsi_(bands_hsi), bands_msi_(bands_msi), scale_(scale) {
    Rng rng(init_seed);
    int cin = bands_hsi + bands_msi;
    c1w_ = detail::make_conv_param<T>("fusion.conv1.w", kHidden, cin, 3, rng.fork("c1w"));
    c2w_ = detail::make_conv_param<T>("fusion.conv2.w", kHidden, kHidden, 3, rng.fork("c2w"));
    c3w_ = detail::make_conv_param<T>("fusion.conv3.w", kHidden, kHidden, 3, rng.fork("c3w"));
    c4w_ = detail::make_conv_param<T>("fusion.conv4.w", bands_hsi, kHidden, 3, rng.fork("c4w"));
    c1b_ = Param<T>("fusion.conv1.b", Tensor<T>::vec(kHidden), true, kGroupFusion);
    c2b_ = Param<T>("fusion.conv2.b", Tensor<T>::vec(kHidden), true, kGroupFusion);
    c3b_ = Param<T>("fusion.conv3.b", Tensor<T>::vec(kHidden), true, kGroupFusion);
    c4b_ = Param<T>("fusion.conv4.b", Tensor<T>::vec(bands_hsi), true, kGroupFusion);
  }

  int bands_hsi() const { return bands_hsi_; }
  int bands_msi() const { return bands_msi_; }
  int scale() const { return scale_; }
  bool frozen() const { return !c1w_.trainable; }

  void freeze() { set_trainable(false); }
  void unfreeze() { set_trainable(true); }

  std::vector<Param<T>*> params() {
    return {&c1w_, &c1b_, &c2w_, &c2b_, &c3w_, &c3b_, &c4w_, &c4b_};
  }
  std::vector<const Param<T>*> params() const {
    return {&c1w_, &c1b_, &c2w_, &c2b_, &c3w_, &c3b_, &c4w_, &c4b_};
  }

  std::uint64_t checksum() const { return params_checksum(params()); }

  // Appends the fusion path to a graph. x: [H/s, W/s, B_hsi], y: [H, W, B_msi].
  int build(Graph<T>& g, int x, int y) {
    const auto& xv = g.value(x);
    const auto& yv = g.value(y);
    require(xv.rank() == 3 && xv.dim(2) == bands_hsi_, ErrorKind::Config,
            "fuse: LR-HSI bands mismatch");
    require(yv.rank() == 3 && yv.dim(2) == bands_msi_, ErrorKind::Config,
            "fuse: HR-MSI bands mismatch");
    require(xv.dim(0) * scale_ == yv.dim(0) && xv.dim(1) * scale_ == yv.dim(1), ErrorKind::Config,
            "fuse: spatial dims mismatch between LR-HSI and HR-MSI");
    int up = g.upsample_bilinear(x, scale_);
    int cat = g.concat_bands(up, y);
    int h = g.relu(g.conv2d_mc(cat, g.param(&c1w_), g.param(&c1b_), 3));
    h = g.relu(g.conv2d_mc(h, g.param(&c2w_), g.param(&c2b_), 3));
    h = g.relu(g.conv2d_mc(h, g.param(&c3w_), g.param(&c3b_), 3));
    int out = g.conv2d_mc(h, g.param(&c4w_), g.param(&c4b_), 3);
    return g.add(out, up);
  }

  // One-shot inference.
  Tensor<T> fuse(const Tensor<T>& x, const Tensor<T>& y) {
    Graph<T> g;
    int xn = g.input(x.dims());
    int yn = g.input(y.dims());
    int out = build(g, xn, yn);
    g.set_input(xn, x);
    g.set_input(yn, y);
    g.forward();
    return g.value(out);
  }

 private:
  void set_trainable(bool t) {
    for (Param<T>* p : params()) p->trainable = t;
  }

  int bands_hsi_, bands_msi_, scale_;
  Param<T> c1w_, c1b_, c2w_, c2b_, c3w_, c3b_, c4w_, c4b_;
};

struct PretrainConfig {
  int epochs = 200;
  double lr = 1e-3;
  int batch = 16;
  std::uint64_t seed = 7;
  int patch = 32;
  int stride = 16;
};

// Degraded training triples (Z, X, Y) for every patch of every cube.
template <typename T>
struct PatchSet {
  std::vector<Tensor<T>> z, x, y;
  int patch = 0;

  std::size_t size() const { return z.size(); }
};

template <typename T>
inline PatchSet<T> make_patch_set(const std::vector<Tensor<T>>& cubes, const DegradationSpec& spec,
                                  int patch, int stride, std::uint64_t noise_seed = 0) {
  require(patch % spec.scale == 0, ErrorKind::Config, "patch size must be divisible by scale");
  PatchSet<T> set;
  set.patch = patch;
  std::size_t idx = 0;
  for (const Tensor<T>& cube : cubes) {
    for (Tensor<T>& p : extract_patches(cube, patch, stride)) {
      auto obs = apply_observation(p, spec, fnv1a(&idx, sizeof(idx), noise_seed));
      set.x.push_back(std::move(obs.x));
      set.y.push_back(std::move(obs.y));
      set.z.push_back(std::move(p));
      ++idx;
    }
  }
  require(!set.z.empty(), ErrorKind::Config, "no training patches");
  return set;
}

// Minimizes MAE(fuse(X_i, Y_i), Z_i) over patches degraded with the known
// spec. on_epoch(epoch, mean_loss) fires after every finite epoch, which is
// where callers persist the loss curve and a rolling snapshot; a NaN epoch
// aborts so the last persisted snapshot is the last good one.
template <typename T>
inline std::vector<double> pretrain(FusionNet<T>& net, const std::vector<Tensor<T>>& train_cubes,
                                    const DegradationSpec& known, const PretrainConfig& cfg,
                                    const std::function<void(int, double)>& on_epoch = {}) {
  require(cfg.epochs >= 1, ErrorKind::Config, "pretrain: epochs must be >= 1");
  net.unfreeze();
  PatchSet<T> set = make_patch_set(train_cubes, known, cfg.patch, cfg.stride,
                                   fnv1a("pretrain_noise") ^ cfg.seed);

  struct Handles {
    int x, y, z, loss;
  };
  int hp = cfg.patch / known.scale;
  BatchSlots<T, Handles> slots(cfg.batch, [&](Graph<T>& g) {
    Handles h;
    h.x = g.input({hp, hp, net.bands_hsi()});
    h.y = g.input({cfg.patch, cfg.patch, net.bands_msi()});
    h.z = g.input({cfg.patch, cfg.patch, net.bands_hsi()});
    h.loss = g.mae(net.build(g, h.x, h.y), h.z);
    return h;
  });

  Adam<T> opt(net.params(), {{kGroupFusion, cfg.lr}});
  Rng order_rng = Rng(cfg.seed).fork("pretrain_order");
  std::vector<double> curve;
  int n = int(set.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = shuffled_indices(n, order_rng);
    double esum = 0.0;
    int batches = 0;
    for (int start = 0; start < n; start += cfg.batch) {
      int active = std::min(cfg.batch, n - start);
      double loss = slots.run_batch(
          active,
          [&](int s, Graph<T>& g, const Handles& h) {
            int i = order[std::size_t(start + s)];
            g.set_input(h.x, set.x[std::size_t(i)]);
            g.set_input(h.y, set.y[std::size_t(i)]);
            g.set_input(h.z, set.z[std::size_t(i)]);
          },
          [](const Handles& h) { return h.loss; });
      opt.step();
      esum += loss;
      ++batches;
    }
    double mean = esum / double(batches);
    if (!std::isfinite(mean)) fail_divergence(strfmt("pretrain: loss diverged at epoch %d", epoch));
    curve.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return curve;
}

}  // namespace u2k
