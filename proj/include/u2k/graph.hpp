// Reverse-mode computation graph over a fixed primitive set: dense layers,
// ReLU, grouped softmax, per-band and multi-channel 2-D convolution
// (cross-correlation, replicate-same or valid padding), decimation, bilinear
// upsampling, mode-3 products, band concatenation, elementwise add/sub,
// scalar scaling and mean-absolute-error reduction.
//
// Topology is static: build once, then repeatedly set input leaves, run
// forward() and backward(loss). Parameters live outside the graph (Param<T>)
// so several graphs can share one set of weights; gradients accumulate into
// graph-local buffers and are flushed to the parameters in a fixed order,
// which keeps multi-threaded batch evaluation bit-deterministic.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "u2k/common.hpp"
#include "u2k/ops.hpp"
#include "u2k/tensor.hpp"

namespace u2k {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
  int group = 0;

  Param() = default;
  Param(std::string n, Tensor<T> v, bool train = true, int grp = 0)
      : name(std::move(n)), value(std::move(v)), trainable(train), group(grp) {
    grad.reshape_raw(value.dims());
  }
  void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
class Graph {
  enum class Op {
    Input,
    Const,
    Param,
    Dense,
    Relu,
    SoftmaxGroups,
    Reshape,
    ConvPerBand,
    ConvMC,
    Downsample,
    UpsampleBilinear,
    Mode3,
    ConcatBands,
    Add,
    Sub,
    Scale,
    Mae,
  };

  struct Node {
    Op op;
    int a = -1, b = -1, c = -1;  // input node ids
    int k = 0;                   // kernel size / stride / group size
    Pad pad = Pad::ReplicateSame;
    T cval = T(0);
    Tensor<T> value;
    Tensor<T> grad;
    bool req = false;
    Param<T>* par = nullptr;
    // bilinear tables
    std::vector<int> r0, r1, c0, c1;
    std::vector<T> rf, cf;
    // padded-plane scratch for the convolution kernels
    std::vector<T> pad_a, pad_b;
  };

 public:
  struct Binding {
    int node;
    Param<T>* param;
  };

  int input(std::vector<int> dims) {
    Node n;
    n.op = Op::Input;
    n.value = Tensor<T>(std::move(dims));
    return push(std::move(n));
  }

  void set_input(int id, const Tensor<T>& v) {
    Node& n = nodes_[std::size_t(id)];
    require(n.op == Op::Input, ErrorKind::Config, "set_input on non-input node");
    require(n.value.same_dims(v), ErrorKind::Config,
            "set_input: shape mismatch, expected " + n.value.shape_str() + " got " + v.shape_str());
    n.value = v;
  }

  int constant(Tensor<T> v) {
    Node n;
    n.op = Op::Const;
    n.value = std::move(v);
    return push(std::move(n));
  }

  int param(Param<T>* p) {
    Node n;
    n.op = Op::Param;
    n.par = p;
    n.value = p->value;
    n.req = p->trainable;
    int id = push(std::move(n));
    bindings_.push_back({id, p});
    return id;
  }

  int dense(int x, int w, int b) {
    const auto &xv = val(x), &wv = val(w), &bv = val(b);
    require(xv.rank() == 1 && wv.rank() == 2 && bv.rank() == 1, ErrorKind::Config, "dense: rank mismatch");
    require(wv.dim(1) == xv.dim(0) && wv.dim(0) == bv.dim(0), ErrorKind::Config, "dense: shape mismatch");
    Node n;
    n.op = Op::Dense;
    n.a = x;
    n.b = w;
    n.c = b;
    n.value = Tensor<T>::vec(wv.dim(0));
    return push(std::move(n));
  }

  int relu(int x) {
    Node n;
    n.op = Op::Relu;
    n.a = x;
    n.value = Tensor<T>(val(x).dims());
    return push(std::move(n));
  }

  int softmax_groups(int x, int group) {
    const auto& xv = val(x);
    require(group > 0 && xv.size() % std::size_t(group) == 0, ErrorKind::Config,
            "softmax_groups: group size must divide element count");
    Node n;
    n.op = Op::SoftmaxGroups;
    n.a = x;
    n.k = group;
    n.value = Tensor<T>(xv.dims());
    return push(std::move(n));
  }

  int reshape(int x, std::vector<int> dims) {
    Tensor<T> probe(dims);
    require(probe.size() == val(x).size(), ErrorKind::Config, "reshape: element count mismatch");
    Node n;
    n.op = Op::Reshape;
    n.a = x;
    n.value = std::move(probe);
    return push(std::move(n));
  }

  // cube [H,W,B] * kernel [k,k], one shared kernel applied independently per band
  int conv2d_per_band(int cube, int kern, Pad pad) {
    const auto &cv = val(cube), &kv = val(kern);
    require(cv.rank() == 3, ErrorKind::Config, "conv2d_per_band: cube must be 3-axis");
    require(kv.rank() == 2 && kv.dim(0) == kv.dim(1), ErrorKind::Config, "conv2d_per_band: kernel must be square");
    int k = kv.dim(0);
    require(k % 2 == 1, ErrorKind::Config, "conv2d_per_band: even kernel size rejected");
    int h = cv.dim(0), w = cv.dim(1);
    if (pad == Pad::Valid)
      require(k <= std::min(h, w), ErrorKind::Config, "conv2d_per_band: kernel exceeds extent in valid mode");
    Node n;
    n.op = Op::ConvPerBand;
    n.a = cube;
    n.b = kern;
    n.k = k;
    n.pad = pad;
    if (pad == Pad::Valid)
      n.value = Tensor<T>::cube(h - k + 1, w - k + 1, cv.dim(2));
    else
      n.value = Tensor<T>(cv.dims());
    return push(std::move(n));
  }

  // in [H,W,Cin], weights [Cout, Cin*k*k] (tap index (ci*k+u)*k+v), bias [Cout];
  // replicate-same padding
  int conv2d_mc(int in, int w, int b, int k) {
    const auto &iv = val(in), &wv = val(w), &bv = val(b);
    require(iv.rank() == 3 && wv.rank() == 2 && bv.rank() == 1, ErrorKind::Config, "conv2d_mc: rank mismatch");
    require(k % 2 == 1, ErrorKind::Config, "conv2d_mc: even kernel size rejected");
    require(wv.dim(1) == iv.dim(2) * k * k, ErrorKind::Config, "conv2d_mc: weight shape mismatch");
    require(wv.dim(0) == bv.dim(0), ErrorKind::Config, "conv2d_mc: bias shape mismatch");
    Node n;
    n.op = Op::ConvMC;
    n.a = in;
    n.b = w;
    n.c = b;
    n.k = k;
    n.value = Tensor<T>::cube(iv.dim(0), iv.dim(1), wv.dim(0));
    return push(std::move(n));
  }

  int downsample(int cube, int s) {
    const auto& cv = val(cube);
    require(cv.rank() == 3, ErrorKind::Config, "downsample: cube must be 3-axis");
    require(s >= 1, ErrorKind::Config, "downsample: factor must be >= 1");
    require(cv.dim(0) % s == 0, ErrorKind::Config,
            strfmt("downsample: H=%d not divisible by s=%d", cv.dim(0), s));
    require(cv.dim(1) % s == 0, ErrorKind::Config,
            strfmt("downsample: W=%d not divisible by s=%d", cv.dim(1), s));
    Node n;
    n.op = Op::Downsample;
    n.a = cube;
    n.k = s;
    n.value = Tensor<T>::cube(cv.dim(0) / s, cv.dim(1) / s, cv.dim(2));
    return push(std::move(n));
  }

  int upsample_bilinear(int cube, int s) {
    const auto& cv = val(cube);
    require(cv.rank() == 3, ErrorKind::Config, "upsample_bilinear: cube must be 3-axis");
    require(s >= 1, ErrorKind::Config, "upsample_bilinear: factor must be >= 1");
    Node n;
    n.op = Op::UpsampleBilinear;
    n.a = cube;
    n.k = s;
    n.value = Tensor<T>::cube(cv.dim(0) * s, cv.dim(1) * s, cv.dim(2));
    fill_bilinear_tables(n, cv.dim(0), cv.dim(1), s);
    return push(std::move(n));
  }

  // cube [H,W,B1] x3 mat [B2,B1] -> [H,W,B2]
  int mode3(int cube, int mat) {
    const auto &cv = val(cube), &mv = val(mat);
    require(cv.rank() == 3 && mv.rank() == 2, ErrorKind::Config, "mode3: rank mismatch");
    require(mv.dim(1) == cv.dim(2), ErrorKind::Config,
            strfmt("mode3: matrix columns %d != cube bands %d", mv.dim(1), cv.dim(2)));
    Node n;
    n.op = Op::Mode3;
    n.a = cube;
    n.b = mat;
    n.value = Tensor<T>::cube(cv.dim(0), cv.dim(1), mv.dim(0));
    return push(std::move(n));
  }

  int concat_bands(int a, int b) {
    const auto &av = val(a), &bv = val(b);
    require(av.rank() == 3 && bv.rank() == 3, ErrorKind::Config, "concat_bands: cubes required");
    require(av.dim(0) == bv.dim(0) && av.dim(1) == bv.dim(1), ErrorKind::Config,
            "concat_bands: spatial dims mismatch");
    Node n;
    n.op = Op::ConcatBands;
    n.a = a;
    n.b = b;
    n.value = Tensor<T>::cube(av.dim(0), av.dim(1), av.dim(2) + bv.dim(2));
    return push(std::move(n));
  }

  int add(int a, int b) { return binary(Op::Add, a, b); }
  int sub(int a, int b) { return binary(Op::Sub, a, b); }

  int scale(int a, T c) {
    Node n;
    n.op = Op::Scale;
    n.a = a;
    n.cval = c;
    n.value = Tensor<T>(val(a).dims());
    return push(std::move(n));
  }

  int mae(int a, int b) {
    require(val(a).same_dims(val(b)), ErrorKind::Config, "mae: shape mismatch");
    Node n;
    n.op = Op::Mae;
    n.a = a;
    n.b = b;
    n.value = Tensor<T>::vec(1);
    return push(std::move(n));
  }

  const Tensor<T>& value(int id) const { return nodes_[std::size_t(id)].value; }
  const Tensor<T>& grad(int id) const { return nodes_[std::size_t(id)].grad; }
  const std::vector<Binding>& bindings() const { return bindings_; }

  void forward() {
    for (Node& n : nodes_) eval(n);
  }

  // Accumulates d(loss)/d(node) into node-local grad buffers; call
  // flush_param_grads() afterwards to add parameter gradients into the
  // owning Param objects.
  void backward(int loss, T seed = T(1)) {
    Node& ln = nodes_[std::size_t(loss)];
    require(ln.value.size() == 1, ErrorKind::Config, "backward: loss node must be scalar");
    for (Node& n : nodes_)
      if (n.req) n.grad.fill(T(0));
    if (!ln.req) return;  // loss independent of every trainable parameter
    ln.grad[0] = seed;
    for (int i = int(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[std::size_t(i)];
      if (n.req && n.op != Op::Input && n.op != Op::Const && n.op != Op::Param) prop(n);
    }
  }

  // param->grad += node.grad, in binding order
  void flush_param_grads(T scale_factor = T(1)) {
    for (const Binding& b : bindings_) {
      Node& n = nodes_[std::size_t(b.node)];
      if (!n.req) continue;
      Tensor<T>& g = b.param->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale_factor * n.grad[i];
    }
  }

  // reload parameter values into leaves (after an optimizer step)
  void refresh_params() {
    for (const Binding& b : bindings_) nodes_[std::size_t(b.node)].value = b.param->value;
  }

 private:
  std::vector<Node> nodes_;
  std::vector<Binding> bindings_;

  const Tensor<T>& val(int id) const { return nodes_[std::size_t(id)].value; }

  int push(Node&& n) {
    if (n.op != Op::Input && n.op != Op::Const && n.op != Op::Param) {
      bool r = false;
      for (int id : {n.a, n.b, n.c})
        if (id >= 0) r = r || nodes_[std::size_t(id)].req;
      n.req = r;
    }
    if (n.req) n.grad.reshape_raw(n.value.dims());
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
  }

  int binary(Op op, int a, int b) {
    require(val(a).same_dims(val(b)), ErrorKind::Config, "add/sub: shape mismatch");
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.value = Tensor<T>(val(a).dims());
    return push(std::move(n));
  }

  void fill_bilinear_tables(Node& n, int h, int w, int s) {
    auto make = [s](int src_n, int out_n, std::vector<int>& i0, std::vector<int>& i1, std::vector<T>& f) {
      i0.resize(std::size_t(out_n));
      i1.resize(std::size_t(out_n));
      f.resize(std::size_t(out_n));
      for (int o = 0; o < out_n; ++o) {
        double src = (double(o) + 0.5) / double(s) - 0.5;
        src = std::min(std::max(src, 0.0), double(src_n - 1));
        int lo = int(std::floor(src));
        lo = detail::clampi(lo, 0, src_n - 1);
        int hi = std::min(lo + 1, src_n - 1);
        i0[std::size_t(o)] = lo;
        i1[std::size_t(o)] = hi;
        f[std::size_t(o)] = T(src - double(lo));
      }
    };
    make(h, h * s, n.r0, n.r1, n.rf);
    make(w, w * s, n.c0, n.c1, n.cf);
  }

  void eval(Node& n) {
    switch (n.op) {
      case Op::Input:
      case Op::Const:
        return;
      case Op::Param:
        n.value = n.par->value;
        return;
      case Op::Dense: {
        const Tensor<T>&x = val(n.a), &w = val(n.b), &b = val(n.c);
        int m = w.dim(0), in = w.dim(1);
        for (int o = 0; o < m; ++o) {
          T acc = b[std::size_t(o)];
          const T* wr = w.data() + std::size_t(o) * in;
          for (int i = 0; i < in; ++i) acc += wr[i] * x[std::size_t(i)];
          n.value[std::size_t(o)] = acc;
        }
        return;
      }
      case Op::Relu: {
        const Tensor<T>& x = val(n.a);
        for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = x[i] > T(0) ? x[i] : T(0);
        return;
      }
      case Op::SoftmaxGroups: {
        const Tensor<T>& x = val(n.a);
        int g = n.k;
        for (std::size_t base = 0; base < x.size(); base += std::size_t(g)) {
          T mx = x[base];
          for (int i = 1; i < g; ++i) mx = std::max(mx, x[base + std::size_t(i)]);
          T sum = T(0);
          for (int i = 0; i < g; ++i) {
            T e = std::exp(x[base + std::size_t(i)] - mx);
            n.value[base + std::size_t(i)] = e;
            sum += e;
          }
          T inv = T(1) / sum;
          for (int i = 0; i < g; ++i) n.value[base + std::size_t(i)] *= inv;
        }
        return;
      }
      case Op::Reshape: {
        const Tensor<T>& x = val(n.a);
        std::copy(x.data(), x.data() + x.size(), n.value.data());
        return;
      }
      case Op::ConvPerBand:
        conv2d_per_band_into(val(n.a), val(n.b), n.pad, n.value);
        return;
      case Op::ConvMC:
        conv_mc_fwd(n);
        return;
      case Op::Downsample:
        downsample_into(val(n.a), n.k, n.value);
        return;
      case Op::UpsampleBilinear: {
        const Tensor<T>& x = val(n.a);
        int ho = n.value.dim(0), wo = n.value.dim(1), bands = n.value.dim(2), wi = x.dim(1);
        for (int b = 0; b < bands; ++b) {
          const T* ip = x.plane(b);
          T* op = n.value.plane(b);
          for (int i = 0; i < ho; ++i) {
            const T* r0 = ip + n.r0[std::size_t(i)] * wi;
            const T* r1 = ip + n.r1[std::size_t(i)] * wi;
            T fr = n.rf[std::size_t(i)];
            for (int j = 0; j < wo; ++j) {
              int c0 = n.c0[std::size_t(j)], c1 = n.c1[std::size_t(j)];
              T fc = n.cf[std::size_t(j)];
              T top = r0[c0] + fc * (r0[c1] - r0[c0]);
              T bot = r1[c0] + fc * (r1[c1] - r1[c0]);
              op[i * wo + j] = top + fr * (bot - top);
            }
          }
        }
        return;
      }
      case Op::Mode3:
        mode3_into(val(n.a), val(n.b), n.value);
        return;
      case Op::ConcatBands: {
        const Tensor<T>&x = val(n.a), &y = val(n.b);
        std::size_t np = std::size_t(x.dim(0)) * std::size_t(x.dim(1));
        for (int b = 0; b < x.dim(2); ++b) std::copy(x.plane(b), x.plane(b) + np, n.value.plane(b));
        for (int b = 0; b < y.dim(2); ++b)
          std::copy(y.plane(b), y.plane(b) + np, n.value.plane(b + x.dim(2)));
        return;
      }
      case Op::Add: {
        const Tensor<T>&x = val(n.a), &y = val(n.b);
        for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = x[i] + y[i];
        return;
      }
      case Op::Sub: {
        const Tensor<T>&x = val(n.a), &y = val(n.b);
        for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = x[i] - y[i];
        return;
      }
      case Op::Scale: {
        const Tensor<T>& x = val(n.a);
        for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = n.cval * x[i];
        return;
      }
      case Op::Mae: {
        const Tensor<T>&x = val(n.a), &y = val(n.b);
        // accumulate in double so large reductions stay stable in f32 mode
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(double(x[i]) - double(y[i]));
        n.value[0] = T(s / double(x.size()));
        return;
      }
    }
  }

  // Replicate-padded scratch plane: every tap becomes a branch-free strided
  // accumulation over the full output plane.
  static void fill_padded(const T* __restrict__ src, int h, int w, int m, T* __restrict__ pad) {
    int pw = w + 2 * m;
    for (int i = -m; i < h + m; ++i) {
      const T* srow = src + detail::clampi(i, 0, h - 1) * w;
      T* prow = pad + (i + m) * pw;
      for (int j = 0; j < m; ++j) prow[j] = srow[0];
      std::copy(srow, srow + w, prow + m);
      for (int j = 0; j < m; ++j) prow[m + w + j] = srow[w - 1];
    }
  }

  // transpose of fill_padded: add every padded cell into its clamped source
  static void fold_padded(const T* __restrict__ pad, int h, int w, int m, T* __restrict__ dst) {
    int pw = w + 2 * m;
    for (int i = -m; i < h + m; ++i) {
      const T* prow = pad + (i + m) * pw;
      T* drow = dst + detail::clampi(i, 0, h - 1) * w;
      T left = T(0), right = T(0);
      for (int j = 0; j < m; ++j) left += prow[j];
      for (int j = 0; j < w; ++j) drow[j] += prow[m + j];
      for (int j = 0; j < m; ++j) right += prow[m + w + j];
      drow[0] += left;
      drow[w - 1] += right;
    }
  }

  void conv_mc_fwd(Node& n) {
    const Tensor<T>&x = val(n.a), &w = val(n.b), &bias = val(n.c);
    int k = n.k, m = k / 2;
    int h = x.dim(0), wd = x.dim(1), cin = x.dim(2), cout = n.value.dim(2);
    int pw = wd + 2 * m;
    n.pad_a.resize(std::size_t(h + 2 * m) * pw);
    for (int co = 0; co < cout; ++co) {
      T* op = n.value.plane(co);
      std::fill(op, op + std::size_t(h) * wd, bias[std::size_t(co)]);
    }
    for (int ci = 0; ci < cin; ++ci) {
      fill_padded(x.plane(ci), h, wd, m, n.pad_a.data());
      const T* __restrict__ pad = n.pad_a.data();
      for (int co = 0; co < cout; ++co) {
        const T* wr = w.data() + std::size_t(co) * w.dim(1) + std::size_t(ci) * k * k;
        T* __restrict__ op = n.value.plane(co);
        for (int t = 0; t < k * k; ++t) {
          T wt = wr[t];
          const T* __restrict__ shifted = pad + (t / k) * pw + (t % k);
          for (int i = 0; i < h; ++i) {
            const T* __restrict__ srow = shifted + i * pw;
            T* __restrict__ drow = op + i * wd;
            for (int j = 0; j < wd; ++j) drow[j] += wt * srow[j];
          }
        }
      }
    }
  }

  bool wants(int id) const { return id >= 0 && nodes_[std::size_t(id)].req; }
  Tensor<T>& g(int id) { return nodes_[std::size_t(id)].grad; }

  void prop(Node& n) {
    switch (n.op) {
      case Op::Input:
      case Op::Const:
      case Op::Param:
        return;
      case Op::Dense: {
        const Tensor<T>&x = val(n.a), &w = val(n.b);
        int m = w.dim(0), in = w.dim(1);
        if (wants(n.a)) {
          Tensor<T>& gx = g(n.a);
          for (int o = 0; o < m; ++o) {
            T go = n.grad[std::size_t(o)];
            const T* wr = w.data() + std::size_t(o) * in;
            for (int i = 0; i < in; ++i) gx[std::size_t(i)] += go * wr[i];
          }
        }
        if (wants(n.b)) {
          Tensor<T>& gw = g(n.b);
          for (int o = 0; o < m; ++o) {
            T go = n.grad[std::size_t(o)];
            T* gwr = gw.data() + std::size_t(o) * in;
            for (int i = 0; i < in; ++i) gwr[i] += go * x[std::size_t(i)];
          }
        }
        if (wants(n.c)) {
          Tensor<T>& gb = g(n.c);
          for (int o = 0; o < m; ++o) gb[std::size_t(o)] += n.grad[std::size_t(o)];
        }
        return;
      }
      case Op::Relu: {
        if (!wants(n.a)) return;
        const Tensor<T>& x = val(n.a);
        Tensor<T>& gx = g(n.a);
        for (std::size_t i = 0; i < x.size(); ++i)
          if (x[i] > T(0)) gx[i] += n.grad[i];
        return;
      }
      case Op::SoftmaxGroups: {
        if (!wants(n.a)) return;
        Tensor<T>& gx = g(n.a);
        int grp = n.k;
        for (std::size_t base = 0; base < n.value.size(); base += std::size_t(grp)) {
          T dot = T(0);
          for (int i = 0; i < grp; ++i) dot += n.grad[base + std::size_t(i)] * n.value[base + std::size_t(i)];
          for (int i = 0; i < grp; ++i)
            gx[base + std::size_t(i)] +=
                n.value[base + std::size_t(i)] * (n.grad[base + std::size_t(i)] - dot);
        }
        return;
      }
      case Op::Reshape: {
        if (!wants(n.a)) return;
        Tensor<T>& gx = g(n.a);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[i];
        return;
      }
      case Op::ConvPerBand:
        conv_pb_bwd(n);
        return;
      case Op::ConvMC:
        conv_mc_bwd(n);
        return;
      case Op::Downsample: {
        if (!wants(n.a)) return;
        Tensor<T>& gx = g(n.a);
        int s = n.k, ho = n.value.dim(0), wo = n.value.dim(1), bands = n.value.dim(2);
        int wi = gx.dim(1);
        for (int b = 0; b < bands; ++b) {
          const T* gp = n.grad.plane(b);
          T* gxp = gx.plane(b);
          for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) gxp[(i * s) * wi + j * s] += gp[i * wo + j];
        }
        return;
      }
      case Op::UpsampleBilinear: {
        if (!wants(n.a)) return;
        Tensor<T>& gx = g(n.a);
        int ho = n.value.dim(0), wo = n.value.dim(1), bands = n.value.dim(2), wi = gx.dim(1);
        for (int b = 0; b < bands; ++b) {
          const T* gp = n.grad.plane(b);
          T* gxp = gx.plane(b);
          for (int i = 0; i < ho; ++i) {
            int r0 = n.r0[std::size_t(i)], r1 = n.r1[std::size_t(i)];
            T fr = n.rf[std::size_t(i)];
            for (int j = 0; j < wo; ++j) {
              int c0 = n.c0[std::size_t(j)], c1 = n.c1[std::size_t(j)];
              T fc = n.cf[std::size_t(j)];
              T gv = gp[i * wo + j];
              gxp[r0 * wi + c0] += gv * (T(1) - fr) * (T(1) - fc);
              gxp[r0 * wi + c1] += gv * (T(1) - fr) * fc;
              gxp[r1 * wi + c0] += gv * fr * (T(1) - fc);
              gxp[r1 * wi + c1] += gv * fr * fc;
            }
          }
        }
        return;
      }
      case Op::Mode3: {
        const Tensor<T>&x = val(n.a), &m = val(n.b);
        int b1 = x.dim(2), b2 = m.dim(0);
        std::size_t np = std::size_t(x.dim(0)) * std::size_t(x.dim(1));
        if (wants(n.a)) {
          Tensor<T>& gx = g(n.a);
          for (int b = 0; b < b1; ++b) {
            T* gxp = gx.plane(b);
            for (int o = 0; o < b2; ++o) {
              T w = m.at(o, b);
              const T* gp = n.grad.plane(o);
              for (std::size_t i = 0; i < np; ++i) gxp[i] += w * gp[i];
            }
          }
        }
        if (wants(n.b)) {
          Tensor<T>& gm = g(n.b);
          for (int o = 0; o < b2; ++o) {
            const T* gp = n.grad.plane(o);
            for (int b = 0; b < b1; ++b) {
              gm.at(o, b) += detail::dot8(gp, x.plane(b), int(np));
            }
          }
        }
        return;
      }
      case Op::ConcatBands: {
        const Tensor<T>& x = val(n.a);
        std::size_t np = std::size_t(x.dim(0)) * std::size_t(x.dim(1));
        if (wants(n.a)) {
          Tensor<T>& gx = g(n.a);
          for (int b = 0; b < x.dim(2); ++b) {
            const T* gp = n.grad.plane(b);
            T* gxp = gx.plane(b);
            for (std::size_t i = 0; i < np; ++i) gxp[i] += gp[i];
          }
        }
        if (wants(n.b)) {
          Tensor<T>& gy = g(n.b);
          for (int b = 0; b < gy.dim(2); ++b) {
            const T* gp = n.grad.plane(b + x.dim(2));
            T* gyp = gy.plane(b);
            for (std::size_t i = 0; i < np; ++i) gyp[i] += gp[i];
          }
        }
        return;
      }
      case Op::Add: {
        if (wants(n.a)) {
          Tensor<T>& gx = g(n.a);
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[i];
        }
        if (wants(n.b)) {
          Tensor<T>& gy = g(n.b);
          for (std::size_t i = 0; i < gy.size(); ++i) gy[i] += n.grad[i];
        }
        return;
      }
      case Op::Sub: {
        if (wants(n.a)) {
          Tensor<T>& gx = g(n.a);
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[i];
        }
        if (wants(n.b)) {
          Tensor<T>& gy = g(n.b);
          for (std::size_t i = 0; i < gy.size(); ++i) gy[i] -= n.grad[i];
        }
        return;
      }
      case Op::Scale: {
        if (!wants(n.a)) return;
        Tensor<T>& gx = g(n.a);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.cval * n.grad[i];
        return;
      }
      case Op::Mae: {
        const Tensor<T>&x = val(n.a), &y = val(n.b);
        T go = n.grad[0] / T(x.size());
        if (wants(n.a)) {
          Tensor<T>& gx = g(n.a);
          for (std::size_t i = 0; i < x.size(); ++i) {
            T d = x[i] - y[i];
            if (d > T(0))
              gx[i] += go;
            else if (d < T(0))
              gx[i] -= go;
          }
        }
        if (wants(n.b)) {
          Tensor<T>& gy = g(n.b);
          for (std::size_t i = 0; i < x.size(); ++i) {
            T d = x[i] - y[i];
            if (d > T(0))
              gy[i] -= go;
            else if (d < T(0))
              gy[i] += go;
          }
        }
        return;
      }
    }
  }

  void conv_pb_bwd(Node& n) {
    const Tensor<T>&x = val(n.a), &ker = val(n.b);
    int k = n.k, c = k / 2;
    int hi = x.dim(0), wi = x.dim(1), bands = x.dim(2);
    int ho = n.value.dim(0), wo = n.value.dim(1);
    bool gi = wants(n.a), gk = wants(n.b);
    if (n.pad == Pad::Valid) {
      for (int b = 0; b < bands; ++b) {
        const T* gp = n.grad.plane(b);
        const T* ip = x.plane(b);
        T* gxp = gi ? g(n.a).plane(b) : nullptr;
        for (int u = 0; u < k; ++u)
          for (int v = 0; v < k; ++v) {
            T w = ker.at(u, v);
            T acc = T(0);
            for (int i = 0; i < ho; ++i) {
              const T* gr = gp + i * wo;
              const T* sr = ip + (i + u) * wi + v;
              if (gi) {
                T* dr = gxp + (i + u) * wi + v;
                for (int j = 0; j < wo; ++j) dr[j] += w * gr[j];
              }
              if (gk) acc += detail::dot8(gr, sr, wo);
            }
            if (gk) g(n.b).at(u, v) += acc;
          }
      }
    } else {
      int m = c;
      int pw = wi + 2 * m;
      std::size_t pn = std::size_t(hi + 2 * m) * pw;
      n.pad_a.resize(pn);
      n.pad_b.resize(pn);
      for (int b = 0; b < bands; ++b) {
        const T* gp = n.grad.plane(b);
        if (gk) fill_padded(x.plane(b), hi, wi, m, n.pad_a.data());
        if (gi) std::fill(n.pad_b.begin(), n.pad_b.end(), T(0));
        const T* __restrict__ pad_in = n.pad_a.data();
        T* __restrict__ pad_g = n.pad_b.data();
        for (int t = 0; t < k * k; ++t) {
          int off = (t / k) * pw + (t % k);
          T w = ker[std::size_t(t)];
          T acc = T(0);
          for (int i = 0; i < ho; ++i) {
            const T* __restrict__ grow = gp + i * wo;
            if (gi) {
              T* __restrict__ prow = pad_g + off + i * pw;
              for (int j = 0; j < wo; ++j) prow[j] += w * grow[j];
            }
            if (gk) acc += detail::dot8(grow, pad_in + off + i * pw, wo);
          }
          if (gk) g(n.b)[std::size_t(t)] += acc;
        }
        if (gi) fold_padded(pad_g, hi, wi, m, g(n.a).plane(b));
      }
    }
  }

  void conv_mc_bwd(Node& n) {
    const Tensor<T>&x = val(n.a), &w = val(n.b);
    int k = n.k, m = k / 2;
    int h = x.dim(0), wd = x.dim(1), cin = x.dim(2), cout = n.value.dim(2);
    int pw = wd + 2 * m;
    std::size_t pn = std::size_t(h + 2 * m) * pw;
    bool gi = wants(n.a), gw = wants(n.b), gb = wants(n.c);
    if (gb) {
      for (int co = 0; co < cout; ++co) {
        const T* gp = n.grad.plane(co);
        T acc = T(0);
        for (std::size_t i = 0; i < std::size_t(h) * wd; ++i) acc += gp[i];
        g(n.c)[std::size_t(co)] += acc;
      }
    }
    if (!gi && !gw) return;
    n.pad_a.resize(pn);
    n.pad_b.resize(pn);
    for (int ci = 0; ci < cin; ++ci) {
      if (gw) fill_padded(x.plane(ci), h, wd, m, n.pad_a.data());
      if (gi) std::fill(n.pad_b.begin(), n.pad_b.end(), T(0));
      const T* __restrict__ pad_in = n.pad_a.data();
      T* __restrict__ pad_g = n.pad_b.data();
      for (int co = 0; co < cout; ++co) {
        const T* gp = n.grad.plane(co);
        const T* wr = w.data() + std::size_t(co) * w.dim(1) + std::size_t(ci) * k * k;
        T* gwr = gw ? g(n.b).data() + std::size_t(co) * w.dim(1) + std::size_t(ci) * k * k : nullptr;
        for (int t = 0; t < k * k; ++t) {
          int off = (t / k) * pw + (t % k);
          T wt = wr[t];
          T acc = T(0);
          for (int i = 0; i < h; ++i) {
            const T* __restrict__ grow = gp + i * wd;
            if (gi) {
              T* __restrict__ prow = pad_g + off + i * pw;
              for (int j = 0; j < wd; ++j) prow[j] += wt * grow[j];
            }
            if (gw) acc += detail::dot8(grow, pad_in + off + i * pw, wd);
          }
          if (gw) gwr[t] += acc;
        }
      }
      if (gi) fold_padded(pad_g, h, wd, m, g(n.a).plane(ci));
    }
  }
};

}  // namespace u2k
