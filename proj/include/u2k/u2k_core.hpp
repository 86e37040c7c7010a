// The U2K framework. Degradation Wrapping (DW) modules parameterize the
// unknown degradations: a learnable latent fed through an MLP, with a
// softmax producing a simplex PSF (phi_k) and row-simplex SRF (phi_R).
// Degradation Transformation (DT) modules are residual CNNs that remap
// wrapped observations onto the known degradation the frozen fusion network
// expects. Training is self-supervised: reconstruction and DT losses through
// the frozen fusion net plus a consistency loss that ties the two wrappers
// together on the blind test pair, optimized by greedy alternation (wrapper
// warm-up, then adaptor epochs with several reduced-rate wrapper steps
// before each adaptor step).
#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "u2k/adam.hpp"
#include "u2k/common.hpp"
#include "u2k/degradation.hpp"
#include "u2k/fusion_net.hpp"
#include "u2k/graph.hpp"
#include "u2k/ops.hpp"
#include "u2k/rng.hpp"
#include "u2k/trainer.hpp"

namespace u2k {

// --- Degradation Wrapping ----------------------------------------------------

template <typename T>
class DwModule {
 public:
  static constexpr int kLatent = 64;
  static constexpr int kHiddenMlp = 128;

  DwModule(int k_dw, int bands_hsi, int bands_msi, std::uint64_t init_seed)
      : k_dw_(k_dw), bands_hsi_(bands_hsi), bands_msi_(bands_msi) {
    require(k_dw >= 1 && k_dw % 2 == 1, ErrorKind::Config, "dw: kernel size must be odd");
    Rng rng(init_seed);
    auto latent = [&](const char* name, int group) {
      Tensor<T> v = Tensor<T>::vec(kLatent);
      Rng r = rng.fork(name);
      v.fill_normal(r);
      return Param<T>(name, std::move(v), true, group);
    };
    latent_k_ = latent("dw.spatial.latent", kGroupDwSpatial);
    latent_r_ = latent("dw.spectral.latent", kGroupDwSpectral);
    k_w1_ = detail::make_dense_param<T>("dw.spatial.fc1.w", kHiddenMlp, kLatent,
                                        rng.fork("kw1"), kGroupDwSpatial);
    k_w2_ = detail::make_dense_param<T>("dw.spatial.fc2.w", kHiddenMlp, kHiddenMlp,
                                        rng.fork("kw2"), kGroupDwSpatial);
    k_w3_ = detail::make_dense_param<T>("dw.spatial.fc3.w", k_dw * k_dw, kHiddenMlp,
                                        rng.fork("kw3"), kGroupDwSpatial);
    r_w1_ = detail::make_dense_param<T>("dw.spectral.fc1.w", kHiddenMlp, kLatent,
                                        rng.fork("rw1"), kGroupDwSpectral);
    r_w2_ = detail::make_dense_param<T>("dw.spectral.fc2.w", kHiddenMlp, kHiddenMlp,
                                        rng.fork("rw2"), kGroupDwSpectral);
    r_w3_ = detail::make_dense_param<T>("dw.spectral.fc3.w", bands_msi * bands_hsi, kHiddenMlp,
                                        rng.fork("rw3"), kGroupDwSpectral);
    k_b1_ = Param<T>("dw.spatial.fc1.b", Tensor<T>::vec(kHiddenMlp), true, kGroupDwSpatial);
    k_b2_ = Param<T>("dw.spatial.fc2.b", Tensor<T>::vec(kHiddenMlp), true, kGroupDwSpatial);
    k_b3_ = Param<T>("dw.spatial.fc3.b", Tensor<T>::vec(k_dw * k_dw), true, kGroupDwSpatial);
    r_b1_ = Param<T>("dw.spectral.fc1.b", Tensor<T>::vec(kHiddenMlp), true, kGroupDwSpectral);
    r_b2_ = Param<T>("dw.spectral.fc2.b", Tensor<T>::vec(kHiddenMlp), true, kGroupDwSpectral);
    r_b3_ = Param<T>("dw.spectral.fc3.b", Tensor<T>::vec(bands_msi * bands_hsi), true,
                     kGroupDwSpectral);
  }

  int k_dw() const { return k_dw_; }
  int bands_hsi() const { return bands_hsi_; }
  int bands_msi() const { return bands_msi_; }

  // Pin the generated degradations to explicit operators (diagnostics and
  // oracle tests); the MLP path is bypassed while forced.
  void force_kernel(const Tensor<double>& k) { forced_kernel_ = k; }
  void force_srf(const Tensor<double>& r) { forced_srf_ = r; }
  void clear_forced() {
    forced_kernel_.reset();
    forced_srf_.reset();
  }

  // phi_k: [k_dw, k_dw], nonnegative, sums to 1 (softmax over all entries)
  int kernel_node(Graph<T>& g) {
    if (forced_kernel_) return g.constant(forced_kernel_->template cast<T>());
    int h = g.relu(g.dense(g.param(&latent_k_), g.param(&k_w1_), g.param(&k_b1_)));
    h = g.relu(g.dense(h, g.param(&k_w2_), g.param(&k_b2_)));
    h = g.dense(h, g.param(&k_w3_), g.param(&k_b3_));
    return g.reshape(g.softmax_groups(h, k_dw_ * k_dw_), {k_dw_, k_dw_});
  }

  // phi_R: [B_msi, B_hsi], each row nonnegative and summing to 1
  int srf_node(Graph<T>& g) {
    if (forced_srf_) return g.constant(forced_srf_->template cast<T>());
    int h = g.relu(g.dense(g.param(&latent_r_), g.param(&r_w1_), g.param(&r_b1_)));
    h = g.relu(g.dense(h, g.param(&r_w2_), g.param(&r_b2_)));
    h = g.dense(h, g.param(&r_w3_), g.param(&r_b3_));
    return g.reshape(g.softmax_groups(h, bands_hsi_), {bands_msi_, bands_hsi_});
  }

  Tensor<T> eval_kernel() {
    Graph<T> g;
    int n = kernel_node(g);
    g.forward();
    return g.value(n);
  }

  Tensor<T> eval_srf() {
    Graph<T> g;
    int n = srf_node(g);
    g.forward();
    return g.value(n);
  }

  std::vector<Param<T>*> params() {
    return {&latent_k_, &k_w1_, &k_b1_, &k_w2_, &k_b2_, &k_w3_, &k_b3_,
            &latent_r_, &r_w1_, &r_b1_, &r_w2_, &r_b2_, &r_w3_, &r_b3_};
  }
  std::vector<const Param<T>*> params() const {
    return {&latent_k_, &k_w1_, &k_b1_, &k_w2_, &k_b2_, &k_w3_, &k_b3_,
            &latent_r_, &r_w1_, &r_b1_, &r_w2_, &r_b2_, &r_w3_, &r_b3_};
  }

 private:
  int k_dw_, bands_hsi_, bands_msi_;
  Param<T> latent_k_, k_w1_, k_b1_, k_w2_, k_b2_, k_w3_, k_b3_;
  Param<T> latent_r_, r_w1_, r_b1_, r_w2_, r_b2_, r_w3_, r_b3_;
  std::optional<Tensor<double>> forced_kernel_, forced_srf_;
};

// spatial wrapping: X~ = (Z * phi_k) downsampled; kern is a prebuilt
// kernel_node so one kernel feeds every consumer in the graph
template <typename T>
inline int spatial_dw_node(Graph<T>& g, int z, int kern, int s) {
  return g.downsample(g.conv2d_per_band(z, kern, Pad::ReplicateSame), s);
}

// spectral wrapping: Y~ = Z x3 phi_R
template <typename T>
inline int spectral_dw_node(Graph<T>& g, int z, int srf) {
  return g.mode3(z, srf);
}

template <typename T>
inline Tensor<T> spatial_dw(DwModule<T>& dw, const Tensor<T>& z, int s) {
  Graph<T> g;
  int zin = g.input(z.dims());
  int out = spatial_dw_node(g, zin, dw.kernel_node(g), s);
  g.set_input(zin, z);
  g.forward();
  return g.value(out);
}

template <typename T>
inline Tensor<T> spectral_dw(DwModule<T>& dw, const Tensor<T>& z) {
  Graph<T> g;
  int zin = g.input(z.dims());
  int out = spectral_dw_node(g, zin, dw.srf_node(g));
  g.set_input(zin, z);
  g.forward();
  return g.value(out);
}

// --- Degradation Transformation ----------------------------------------------

template <typename T>
class DtModule {
 public:
  static constexpr int kSpatialHidden = 32;

  DtModule(int bands_hsi, int bands_msi, std::uint64_t init_seed)
      : bands_hsi_(bands_hsi), bands_msi_(bands_msi) {
    Rng rng(init_seed);
    // spatial branch: receptive fields 3, 5, 7
    s1w_ = detail::make_conv_param<T>("dt.spatial.conv1.w", kSpatialHidden, bands_hsi, 3,
                                      rng.fork("s1"), kGroupDt);
    s2w_ = detail::make_conv_param<T>("dt.spatial.conv2.w", kSpatialHidden, kSpatialHidden, 5,
                                      rng.fork("s2"), kGroupDt);
    // near-identity start: a tiny final layer keeps gradients flowing into
    // the earlier layers from the first step
    s3w_ = Param<T>("dt.spatial.conv3.w", Tensor<T>::mat(bands_hsi, kSpatialHidden * 7 * 7), true,
                    kGroupDt);
    {
      Rng r = rng.fork("s3");
      s3w_.value.fill_uniform(r, -0.01, 0.01);
    }
    s1b_ = Param<T>("dt.spatial.conv1.b", Tensor<T>::vec(kSpatialHidden), true, kGroupDt);
    s2b_ = Param<T>("dt.spatial.conv2.b", Tensor<T>::vec(kSpatialHidden), true, kGroupDt);
    s3b_ = Param<T>("dt.spatial.conv3.b", Tensor<T>::vec(bands_hsi), true, kGroupDt);
    // spectral branch: six 1x1 convolutions over channel widths 16..64..16
    const int widths[7] = {bands_msi, 16, 32, 64, 32, 16, bands_msi};
    for (int i = 0; i < 6; ++i) {
      std::string base = "dt.spectral.conv" + std::to_string(i + 1);
      if (i == 5) {
        p_w_[i] = Param<T>(base + ".w", Tensor<T>::mat(widths[i + 1], widths[i]), true, kGroupDt);
        Rng r = rng.fork(base);
        p_w_[i].value.fill_uniform(r, -0.01, 0.01);
      } else {
        p_w_[i] = detail::make_conv_param<T>(base + ".w", widths[i + 1], widths[i], 1,
                                             rng.fork(base), kGroupDt);
      }
      p_b_[i] = Param<T>(base + ".b", Tensor<T>::vec(widths[i + 1]), true, kGroupDt);
    }
  }

  int bands_hsi() const { return bands_hsi_; }
  int bands_msi() const { return bands_msi_; }

  // X^ = residual CNN over the wrapped LR-HSI; output dims == input dims
  int build_spatial(Graph<T>& g, int x) {
    require(g.value(x).dim(2) == bands_hsi_, ErrorKind::Config, "dt.spatial: band mismatch");
    int h = g.relu(g.conv2d_mc(x, g.param(&s1w_), g.param(&s1b_), 3));
    h = g.relu(g.conv2d_mc(h, g.param(&s2w_), g.param(&s2b_), 5));
    int out = g.conv2d_mc(h, g.param(&s3w_), g.param(&s3b_), 7);
    return g.add(out, x);
  }

  // Y^ = residual 1x1 CNN over the wrapped HR-MSI
  int build_spectral(Graph<T>& g, int y) {
    require(g.value(y).dim(2) == bands_msi_, ErrorKind::Config, "dt.spectral: band mismatch");
    int h = y;
    for (int i = 0; i < 6; ++i) {
      h = g.conv2d_mc(h, g.param(&p_w_[i]), g.param(&p_b_[i]), 1);
      if (i < 5) h = g.relu(h);
    }
    return g.add(h, y);
  }

  Tensor<T> apply_spatial(const Tensor<T>& x) {
    Graph<T> g;
    int xin = g.input(x.dims());
    int out = build_spatial(g, xin);
    g.set_input(xin, x);
    g.forward();
    return g.value(out);
  }

  Tensor<T> apply_spectral(const Tensor<T>& y) {
    Graph<T> g;
    int yin = g.input(y.dims());
    int out = build_spectral(g, yin);
    g.set_input(yin, y);
    g.forward();
    return g.value(out);
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out = {&s1w_, &s1b_, &s2w_, &s2b_, &s3w_, &s3b_};
    for (int i = 0; i < 6; ++i) {
      out.push_back(&p_w_[i]);
      out.push_back(&p_b_[i]);
    }
    return out;
  }
  std::vector<const Param<T>*> params() const {
    std::vector<const Param<T>*> out = {&s1w_, &s1b_, &s2w_, &s2b_, &s3w_, &s3b_};
    for (int i = 0; i < 6; ++i) {
      out.push_back(&p_w_[i]);
      out.push_back(&p_b_[i]);
    }
    return out;
  }

 private:
  int bands_hsi_, bands_msi_;
  Param<T> s1w_, s1b_, s2w_, s2b_, s3w_, s3b_;
  std::array<Param<T>, 6> p_w_, p_b_;
};

// --- losses (standalone evaluation forms) -------------------------------------

template <typename T>
inline double loss_rec(const Tensor<T>& z, const Tensor<T>& z_hat) {
  return mae_value(z, z_hat);
}

template <typename T>
inline double loss_dt(const Tensor<T>& x, const Tensor<T>& x_hat, const Tensor<T>& y,
                      const Tensor<T>& y_hat) {
  return mae_value(x, x_hat) + mae_value(y, y_hat);
}

// L_con = || X_test x3 phi_R  -  (Y_test * phi_k) downsampled ||_1
template <typename T>
inline double loss_con(DwModule<T>& dw, const Tensor<T>& x_test, const Tensor<T>& y_test, int s) {
  Tensor<T> hx = mode3(x_test, dw.eval_srf());
  Tensor<T> hy = downsample(conv2d_per_band(y_test, dw.eval_kernel(), Pad::ReplicateSame), s);
  require(hx.same_dims(hy), ErrorKind::Config, "loss_con: H_X and H_Y dims differ");
  return mae_value(hx, hy);
}

inline double loss_total(double l_rec, double l_dt, double l_con, double lambda, double mu,
                         double coef_rec = 1.0) {
  require(lambda >= 0.0 && mu >= 0.0 && coef_rec >= 0.0, ErrorKind::Config,
          "loss_total: weights must be nonnegative");
  return coef_rec * l_rec + lambda * l_dt + mu * l_con;
}

// --- adaptation ----------------------------------------------------------------

enum class OptStrategy { Gao, Ao, Naive };

inline const char* opt_strategy_name(OptStrategy s) {
  switch (s) {
    case OptStrategy::Gao: return "gao";
    case OptStrategy::Ao: return "ao";
    default: return "naive";
  }
}

struct U2kConfig {
  double lambda_dt = 1.0;  // weight of L_DT
  double mu_con = 1.0;     // weight of L_con
  double coef_rec = 1.0;   // 0 drops L_rec in ablations
  int k_dw = 15;
  int epochs_a = 100;  // wrapper learning
  int epochs_b = 10;   // adaptor learning
  int steps_a = 8;     // wrapper batches per phase-A epoch
  int n_dw_inner = 5;  // wrapper steps before each adaptor step in phase B
  double dw_decay = 0.1;
  double lr = 0.01;           // spatial wrapper, DT and fusion-adjacent groups
  double lr_spectral = 1e-3;  // spectral wrapper
  int batch = 16;
  int crop = 32;  // consistency-loss crop on the HR-MSI grid
  int patch = 32;
  int stride = 16;
  std::uint64_t seed = 11;
  OptStrategy opt = OptStrategy::Gao;
};

struct EpochLog {
  int phase = 0;  // 0 = wrapper learning, 1 = adaptor learning
  double l_rec = 0.0, l_dt = 0.0, l_con = 0.0, l_total = 0.0;
};

namespace detail {

template <typename T>
struct U2kHandles {
  int z = -1, xk = -1, yk = -1;  // patch and its known-degraded pair
  int xc = -1, yc = -1;          // consistency crop pair (yc carries a margin)
  int l_rec = -1, l_dt = -1, l_con = -1, l_total = -1;
  int x_tilde = -1, x_hat = -1, y_hat = -1, z_hat = -1;
};

template <typename T>
struct CropSampler {
  const Tensor<T>* x_test;
  const Tensor<T>* y_test;
  int crop, scale, margin;

  CropSampler(const Tensor<T>& x, const Tensor<T>& y, int crop_, int scale_, int k_dw)
      : x_test(&x), y_test(&y), crop(crop_), scale(scale_), margin(k_dw / 2) {
    require(crop_ % scale_ == 0, ErrorKind::Config, "u2k: crop must be divisible by scale");
    require(crop_ / scale_ <= x.dim(0) && crop_ / scale_ <= x.dim(1), ErrorKind::Config,
            "u2k: crop exceeds the test pair extent");
    require(x.dim(0) * scale_ == y.dim(0) && x.dim(1) * scale_ == y.dim(1), ErrorKind::Config,
            "u2k: test pair dims are inconsistent with the scale");
  }

  int x_extent() const { return crop / scale; }
  int y_extent() const { return crop + 2 * margin; }

  // The LR crop is aligned with the HR crop; the HR crop carries a margin of
  // half the wrapper kernel read with border replication, so a valid
  // convolution over it reproduces full-image replicate-same values.
  void sample(Rng& rng, Tensor<T>& xc, Tensor<T>& yc) const {
    int cs = x_extent();
    int i0 = int(rng.below(std::uint64_t(x_test->dim(0) - cs + 1)));
    int j0 = int(rng.below(std::uint64_t(x_test->dim(1) - cs + 1)));
    xc = crop_replicated(*x_test, i0, j0, cs, cs);
    yc = crop_replicated(*y_test, i0 * scale - margin, j0 * scale - margin, y_extent(), y_extent());
  }
};

}  // namespace detail

// Full self-supervised pipeline for one training patch plus one consistency
// crop: wrap, transform, fuse through the frozen network, and read out all
// four losses.
template <typename T>
inline detail::U2kHandles<T> build_u2k_graph(Graph<T>& g, DwModule<T>& dw, DtModule<T>& dt,
                                             FusionNet<T>& fnet, const U2kConfig& cfg,
                                             const detail::CropSampler<T>& crops) {
  detail::U2kHandles<T> h;
  int p = cfg.patch, s = fnet.scale();
  h.z = g.input({p, p, fnet.bands_hsi()});
  h.xk = g.input({p / s, p / s, fnet.bands_hsi()});
  h.yk = g.input({p, p, fnet.bands_msi()});
  h.xc = g.input({crops.x_extent(), crops.x_extent(), fnet.bands_hsi()});
  h.yc = g.input({crops.y_extent(), crops.y_extent(), fnet.bands_msi()});
  int kern = dw.kernel_node(g);
  int srf = dw.srf_node(g);
  h.x_tilde = spatial_dw_node(g, h.z, kern, s);
  int y_tilde = spectral_dw_node(g, h.z, srf);
  h.x_hat = dt.build_spatial(g, h.x_tilde);
  h.y_hat = dt.build_spectral(g, y_tilde);
  h.z_hat = fnet.build(g, h.x_hat, h.y_hat);
  h.l_rec = g.mae(h.z_hat, h.z);
  h.l_dt = g.add(g.mae(h.x_hat, h.xk), g.mae(h.y_hat, h.yk));
  int hx = g.mode3(h.xc, srf);
  int hy = g.downsample(g.conv2d_per_band(h.yc, kern, Pad::Valid), s);
  h.l_con = g.mae(hx, hy);
  h.l_total = g.add(g.add(g.scale(h.l_rec, T(cfg.coef_rec)), g.scale(h.l_dt, T(cfg.lambda_dt))),
                    g.scale(h.l_con, T(cfg.mu_con)));
  return h;
}

// Consistency-only graph used for the wrapper steps. The optimized node is
// mu * L_con, so dropping the consistency loss really removes the wrapper
// signal; the raw L_con value stays readable for curves.
template <typename T>
inline detail::U2kHandles<T> build_dw_graph(Graph<T>& g, DwModule<T>& dw, int bands_hsi,
                                            int bands_msi, int s, double mu,
                                            const detail::CropSampler<T>& crops) {
  detail::U2kHandles<T> h;
  h.xc = g.input({crops.x_extent(), crops.x_extent(), bands_hsi});
  h.yc = g.input({crops.y_extent(), crops.y_extent(), bands_msi});
  int kern = dw.kernel_node(g);
  int srf = dw.srf_node(g);
  int hx = g.mode3(h.xc, srf);
  int hy = g.downsample(g.conv2d_per_band(h.yc, kern, Pad::Valid), s);
  h.l_con = g.mae(hx, hy);
  h.l_total = g.scale(h.l_con, T(mu));
  return h;
}

// Adapts DW and DT around the frozen fusion network. The fusion weights are
// checksummed before and after. on_epoch fires once per logged epoch with
// running loss components; callers export curves and phi_k / phi_R there.
template <typename T>
inline std::vector<EpochLog> adapt(DwModule<T>& dw, DtModule<T>& dt, FusionNet<T>& fnet,
                                   const std::vector<Tensor<T>>& train_cubes,
                                   const DegradationSpec& known, const Tensor<T>& x_test,
                                   const Tensor<T>& y_test, const U2kConfig& cfg,
                                   const std::function<void(int, const EpochLog&)>& on_epoch = {}) {
  require(fnet.frozen(), ErrorKind::Config, "adapt: fusion network must be frozen");
  require(x_test.rank() == 3 && y_test.rank() == 3, ErrorKind::Config,
          "adapt: test pair required (the consistency loss is mandatory)");
  require(cfg.lambda_dt >= 0 && cfg.mu_con >= 0 && cfg.coef_rec >= 0, ErrorKind::Config,
          "adapt: loss weights must be nonnegative");
  require(cfg.dw_decay > 0 && cfg.dw_decay <= 1, ErrorKind::Config,
          "adapt: decay factor must lie in (0, 1]");
  std::uint64_t fusion_sum = fnet.checksum();

  PatchSet<T> patches = make_patch_set(train_cubes, known, cfg.patch, cfg.stride,
                                       fnv1a("adapt_noise") ^ cfg.seed);
  detail::CropSampler<T> crops(x_test, y_test, cfg.crop, known.scale, cfg.k_dw);

  using Handles = detail::U2kHandles<T>;
  BatchSlots<T, Handles> dw_slots(cfg.batch, [&](Graph<T>& g) {
    return build_dw_graph(g, dw, fnet.bands_hsi(), fnet.bands_msi(), known.scale, cfg.mu_con, crops);
  });
  BatchSlots<T, Handles> full_slots(cfg.batch, [&](Graph<T>& g) {
    return build_u2k_graph(g, dw, dt, fnet, cfg, crops);
  });

  Rng crop_rng = Rng(cfg.seed).fork("crops");
  Rng order_rng = Rng(cfg.seed).fork("order");

  auto dw_step_batch = [&](Adam<T>& opt) {
    std::vector<Tensor<T>> xs(std::size_t(cfg.batch)), ys(std::size_t(cfg.batch));
    for (int s = 0; s < cfg.batch; ++s) crops.sample(crop_rng, xs[std::size_t(s)], ys[std::size_t(s)]);
    double scaled = dw_slots.run_batch(
        cfg.batch,
        [&](int s, Graph<T>& g, const Handles& h) {
          g.set_input(h.xc, xs[std::size_t(s)]);
          g.set_input(h.yc, ys[std::size_t(s)]);
        },
        [](const Handles& h) { return h.l_total; });
    if (!std::isfinite(scaled)) fail_divergence("adapt: consistency loss diverged");
    opt.step();
    double raw = 0.0;
    for (int s = 0; s < cfg.batch; ++s)
      raw += double(dw_slots.graph(s).value(dw_slots.handles(s).l_con)[0]);
    return raw / cfg.batch;
  };

  // patch stream shared by all strategies
  std::vector<int> order;
  int cursor = 0;
  auto next_patch = [&]() {
    if (cursor >= int(order.size())) {
      order = shuffled_indices(int(patches.size()), order_rng);
      cursor = 0;
    }
    return order[std::size_t(cursor++)];
  };

  struct BatchLosses {
    double rec = 0, dt = 0, con = 0, total = 0;
  };
  auto full_batch = [&](bool backward_needed) {
    std::vector<int> ids(std::size_t(cfg.batch));
    std::vector<Tensor<T>> xs(std::size_t(cfg.batch)), ys(std::size_t(cfg.batch));
    for (int s = 0; s < cfg.batch; ++s) {
      ids[std::size_t(s)] = next_patch();
      crops.sample(crop_rng, xs[std::size_t(s)], ys[std::size_t(s)]);
    }
    auto feed = [&](int s, Graph<T>& g, const Handles& h) {
      int i = ids[std::size_t(s)];
      g.set_input(h.z, patches.z[std::size_t(i)]);
      g.set_input(h.xk, patches.x[std::size_t(i)]);
      g.set_input(h.yk, patches.y[std::size_t(i)]);
      g.set_input(h.xc, xs[std::size_t(s)]);
      g.set_input(h.yc, ys[std::size_t(s)]);
    };
    if (backward_needed) {
      double loss = full_slots.run_batch(cfg.batch, feed, [](const Handles& h) { return h.l_total; });
      if (!std::isfinite(loss)) fail_divergence("adapt: total loss diverged");
    } else {
      parallel_for(cfg.batch, [&](int s) { full_slots.run_forward(s, feed); });
    }
    BatchLosses out;
    for (int s = 0; s < cfg.batch; ++s) {
      const Handles& h = full_slots.handles(s);
      out.rec += double(full_slots.graph(s).value(h.l_rec)[0]);
      out.dt += double(full_slots.graph(s).value(h.l_dt)[0]);
      out.con += double(full_slots.graph(s).value(h.l_con)[0]);
      out.total += double(full_slots.graph(s).value(h.l_total)[0]);
    }
    out.rec /= cfg.batch;
    out.dt /= cfg.batch;
    out.con /= cfg.batch;
    out.total /= cfg.batch;
    return out;
  };

  std::map<int, double> dw_lr = {{kGroupDwSpatial, cfg.lr}, {kGroupDwSpectral, cfg.lr_spectral}};
  std::map<int, double> dt_lr = {{kGroupDt, cfg.lr}};
  std::map<int, double> all_lr = {{kGroupDwSpatial, cfg.lr},
                                  {kGroupDwSpectral, cfg.lr_spectral},
                                  {kGroupDt, cfg.lr}};

  std::vector<EpochLog> logs;
  auto log_epoch = [&](const EpochLog& e) {
    logs.push_back(e);
    if (on_epoch) on_epoch(int(logs.size()) - 1, e);
  };

  int steps_b_per_epoch = (int(patches.size()) + cfg.batch - 1) / cfg.batch;
  int dt_updates = cfg.epochs_b * steps_b_per_epoch;
  int dw_updates = cfg.epochs_a * cfg.steps_a + dt_updates * cfg.n_dw_inner;
  int total_events = dw_updates + dt_updates;

  if (cfg.opt == OptStrategy::Gao) {
    Adam<T> opt_dw(dw.params(), dw_lr);
    Adam<T> opt_dt(dt.params(), dt_lr);
    // Phase A: wrapper learning on the consistency loss alone
    for (int ep = 0; ep < cfg.epochs_a; ++ep) {
      double csum = 0.0;
      for (int st = 0; st < cfg.steps_a; ++st) csum += dw_step_batch(opt_dw);
      BatchLosses probe = full_batch(false);
      EpochLog e;
      e.phase = 0;
      e.l_rec = probe.rec;
      e.l_dt = probe.dt;
      e.l_con = csum / cfg.steps_a;
      e.l_total = loss_total(e.l_rec, e.l_dt, e.l_con, cfg.lambda_dt, cfg.mu_con, cfg.coef_rec);
      log_epoch(e);
    }
    // Phase B: adaptor learning with reduced-rate wrapper refinement
    opt_dw.set_lr(kGroupDwSpatial, cfg.lr * cfg.dw_decay);
    opt_dw.set_lr(kGroupDwSpectral, cfg.lr_spectral * cfg.dw_decay);
    for (int ep = 0; ep < cfg.epochs_b; ++ep) {
      BatchLosses acc;
      for (int st = 0; st < steps_b_per_epoch; ++st) {
        for (int i = 0; i < cfg.n_dw_inner; ++i) dw_step_batch(opt_dw);
        BatchLosses b = full_batch(true);
        opt_dt.step();
        zero_grads(dw.params());  // the full graph also deposits wrapper grads
        acc.rec += b.rec;
        acc.dt += b.dt;
        acc.con += b.con;
        acc.total += b.total;
      }
      EpochLog e;
      e.phase = 1;
      e.l_rec = acc.rec / steps_b_per_epoch;
      e.l_dt = acc.dt / steps_b_per_epoch;
      e.l_con = acc.con / steps_b_per_epoch;
      e.l_total = acc.total / steps_b_per_epoch;
      log_epoch(e);
    }
  } else if (cfg.opt == OptStrategy::Ao) {
    // Alternating single steps on the full loss, same total update budget.
    Adam<T> opt_dw(dw.params(), dw_lr);
    Adam<T> opt_dt(dt.params(), dt_lr);
    int pairs = total_events / 2;
    BatchLosses acc;
    int since_log = 0;
    for (int it = 0; it < pairs; ++it) {
      BatchLosses a = full_batch(true);
      opt_dw.step();
      zero_grads(dt.params());
      BatchLosses b = full_batch(true);
      opt_dt.step();
      zero_grads(dw.params());
      acc.rec += (a.rec + b.rec) / 2;
      acc.dt += (a.dt + b.dt) / 2;
      acc.con += (a.con + b.con) / 2;
      acc.total += (a.total + b.total) / 2;
      if (++since_log == steps_b_per_epoch || it + 1 == pairs) {
        EpochLog e;
        e.phase = 1;
        e.l_rec = acc.rec / since_log;
        e.l_dt = acc.dt / since_log;
        e.l_con = acc.con / since_log;
        e.l_total = acc.total / since_log;
        log_epoch(e);
        acc = BatchLosses{};
        since_log = 0;
      }
    }
  } else {
    // Naive joint descent: every step updates everything, same budget of
    // update events (a joint step spends two).
    Adam<T> opt_all(([&] {
                      std::vector<Param<T>*> ps = dw.params();
                      for (Param<T>* p : dt.params()) ps.push_back(p);
                      return ps;
                    })(),
                    all_lr);
    int steps = (total_events + 1) / 2;
    BatchLosses acc;
    int since_log = 0;
    for (int it = 0; it < steps; ++it) {
      BatchLosses b = full_batch(true);
      opt_all.step();
      acc.rec += b.rec;
      acc.dt += b.dt;
      acc.con += b.con;
      acc.total += b.total;
      if (++since_log == steps_b_per_epoch || it + 1 == steps) {
        EpochLog e;
        e.phase = 1;
        e.l_rec = acc.rec / since_log;
        e.l_dt = acc.dt / since_log;
        e.l_con = acc.con / since_log;
        e.l_total = acc.total / since_log;
        log_epoch(e);
        acc = BatchLosses{};
        since_log = 0;
      }
    }
  }

  require(fnet.checksum() == fusion_sum, ErrorKind::Internal,
          "adapt: frozen fusion weights changed during adaptation");
  return logs;
}

// Inference on a blind pair: transform with DT, then fuse with the frozen
// network. The DW module plays no part here.
template <typename T>
inline Tensor<T> u2k_infer(DtModule<T>& dt, FusionNet<T>& fnet, const Tensor<T>& x_test,
                           const Tensor<T>& y_test) {
  Graph<T> g;
  int xin = g.input(x_test.dims());
  int yin = g.input(y_test.dims());
  int zn = fnet.build(g, dt.build_spatial(g, xin), dt.build_spectral(g, yin));
  g.set_input(xin, x_test);
  g.set_input(yin, y_test);
  g.forward();
  return g.value(zn);
}

// --- recovery diagnostics ------------------------------------------------------

// Embeds a small centered kernel into a k_dw-sized frame for comparison with
// the learned phi_k.
inline Tensor<double> embed_kernel(const Tensor<double>& small, int size) {
  require(small.rank() == 2 && small.dim(0) == small.dim(1), ErrorKind::Config,
          "embed_kernel: square kernel required");
  require(small.dim(0) <= size && (size - small.dim(0)) % 2 == 0, ErrorKind::Config,
          "embed_kernel: parity mismatch");
  Tensor<double> out = Tensor<double>::mat(size, size);
  int off = (size - small.dim(0)) / 2;
  for (int i = 0; i < small.dim(0); ++i)
    for (int j = 0; j < small.dim(1); ++j) out.at(off + i, off + j) = small.at(i, j);
  return out;
}

template <typename T>
inline double kernel_recovery_error(DwModule<T>& dw, const Psf& truth) {
  Tensor<double> target = embed_kernel(truth.weights, dw.k_dw());
  Tensor<T> learned = dw.eval_kernel();
  double m = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i)
    m = std::max(m, std::abs(double(learned[i]) - target[i]));
  return m;
}

template <typename T>
inline double srf_recovery_row_l1(DwModule<T>& dw, const Srf& truth) {
  Tensor<T> learned = dw.eval_srf();
  require(learned.dims() == truth.matrix.dims(), ErrorKind::Config,
          "srf_recovery: band layout mismatch");
  double total = 0.0;
  for (int m = 0; m < truth.bands_msi(); ++m) {
    double row = 0.0;
    for (int b = 0; b < truth.bands_hsi(); ++b)
      row += std::abs(double(learned.at(m, b)) - truth.matrix.at(m, b));
    total += row;
  }
  return total / double(truth.bands_msi());
}

}  // namespace u2k
