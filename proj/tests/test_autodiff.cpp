#include <gtest/gtest.h>

#include <cstring>
#include <functional>

#include "gradcheck.hpp"
#include "u2k/graph.hpp"
#include "u2k/rng.hpp"

using u2k::Graph;
using u2k::Pad;
using u2k::Param;
using u2k::Rng;
using u2k::Tensor;

namespace {

Tensor<double> rand_tensor(std::vector<int> dims, std::uint64_t seed, double lo = -1.0,
                           double hi = 1.0) {
  Tensor<double> t(std::move(dims));
  Rng rng(seed);
  t.fill_uniform(rng, lo, hi);
  return t;
}

// MAE target offset from the current value so no residual sits near the kink
template <typename T>
Tensor<T> offset_target(const Tensor<T>& value, std::uint64_t seed) {
  Tensor<T> t(value.dims());
  Rng rng(seed);
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = value[i] + T(rng.uniform() < 0.5 ? -1.0 : 1.0) * T(0.5 + rng.uniform());
  return t;
}

// Builds loss = MAE(node(params...), target) and runs the FD oracle.
double fd_check_op(const std::function<int(Graph<double>&, std::vector<Param<double>*>&)>& build,
                   std::uint64_t seed) {
  Graph<double> g;
  std::vector<Param<double>*> params;
  int out = build(g, params);
  int target = g.input(g.value(out).dims());
  int loss = g.mae(out, target);
  g.forward();
  g.set_input(target, offset_target(g.value(out), seed));
  auto res = gradcheck::check(g, loss, params, Rng(seed));
  EXPECT_GT(res.max_abs_grad, 0.0);
  return res.max_rel_err;
}

}  // namespace

TEST(Forward, SoftmaxOfZerosIsUniform) {
  Graph<float> g;
  int x = g.input({6});
  int sm = g.softmax_groups(x, 6);
  g.set_input(x, Tensor<float>::vec(6));
  g.forward();
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(g.value(sm)[std::size_t(i)], 1.0f / 6.0f, 1e-7);
}

TEST(Forward, SoftmaxGroupsSumToOneAndPositive) {
  Graph<float> g;
  int x = g.input({12});
  int sm = g.softmax_groups(x, 4);
  Tensor<float> in = Tensor<float>::vec(12);
  Rng rng(3);
  in.fill_uniform(rng, -30.0, 30.0);
  g.set_input(x, in);
  g.forward();
  for (int grp = 0; grp < 3; ++grp) {
    double sum = 0.0;
    for (int i = 0; i < 4; ++i) {
      float v = g.value(sm)[std::size_t(grp * 4 + i)];
      EXPECT_GT(v, 0.0f);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Forward, ReluAndMaeExamples) {
  Graph<float> g;
  int x = g.input({3});
  int r = g.relu(x);
  Tensor<float> in = Tensor<float>::vec(3);
  in[0] = -1.f;
  in[1] = 0.f;
  in[2] = 2.f;
  g.set_input(x, in);
  int y = g.input({3});
  int loss = g.mae(r, y);
  g.set_input(y, Tensor<float>::vec(3));
  g.forward();
  EXPECT_EQ(g.value(r)[0], 0.f);
  EXPECT_EQ(g.value(r)[1], 0.f);
  EXPECT_EQ(g.value(r)[2], 2.f);
  EXPECT_NEAR(g.value(loss)[0], 2.0f / 3.0f, 1e-7);

  Graph<float> g2;
  int a = g2.input({4});
  int same = g2.mae(a, a);
  Tensor<float> v = Tensor<float>::vec(4, 1.5f);
  g2.set_input(a, v);
  g2.forward();
  EXPECT_EQ(g2.value(same)[0], 0.0f);  // MAE of x vs x is exactly 0
}

TEST(Backward, ScalarMaeSign) {
  // loss = MAE(p, 0) with p = 3.0 -> grad = 1.0
  Graph<double> g;
  Param<double> p("p", Tensor<double>::scalar(3.0));
  int pn = g.param(&p);
  int zero = g.constant(Tensor<double>::scalar(0.0));
  int loss = g.mae(pn, zero);
  g.forward();
  g.backward(loss);
  g.flush_param_grads();
  EXPECT_DOUBLE_EQ(p.grad[0], 1.0);
}

TEST(Backward, UntouchedParameterGetsExactZero) {
  Graph<double> g;
  Param<double> p("p", Tensor<double>::scalar(3.0));
  Param<double> q("q", Tensor<double>::vec(4, 2.0));
  int pn = g.param(&p);
  g.param(&q);  // bound but unused by the loss
  int zero = g.constant(Tensor<double>::scalar(0.0));
  int loss = g.mae(pn, zero);
  g.forward();
  g.backward(loss);
  g.flush_param_grads();
  for (std::size_t i = 0; i < q.grad.size(); ++i) EXPECT_EQ(q.grad[i], 0.0);
}

TEST(Backward, NonScalarLossRejected) {
  Graph<double> g;
  Param<double> p("p", Tensor<double>::vec(3, 1.0));
  int pn = g.param(&p);
  g.forward();
  EXPECT_THROW(g.backward(pn), u2k::Error);
}

// --- per-primitive finite-difference checks (64-bit) --------------------------

TEST(GradCheck, Dense) {
  double err = fd_check_op(
      [](Graph<double>& g, std::vector<Param<double>*>& ps) {
        static Param<double> x("x", rand_tensor({5}, 21));
        static Param<double> w("w", rand_tensor({4, 5}, 22));
        static Param<double> b("b", rand_tensor({4}, 23));
        ps = {&x, &w, &b};
        return g.dense(g.param(&x), g.param(&w), g.param(&b));
      },
      31);
  EXPECT_LT(err, 1e-4);
}

TEST(GradCheck, ReluAwayFromKink) {
  double err = fd_check_op(
      [](Graph<double>& g, std::vector<Param<double>*>& ps) {
        static Param<double> x("x", rand_tensor({12}, 24));
        for (std::size_t i = 0; i < x.value.size(); ++i)
          if (std::abs(x.value[i]) < 0.05) x.value[i] = 0.1;
        ps = {&x};
        return g.relu(g.param(&x));
      },
      32);
  EXPECT_LT(err, 1e-4);
}

TEST(GradCheck, SoftmaxGroups) {
  double err = fd_check_op(
      [](Graph<double>& g, std::vector<Param<double>*>& ps) {
        static Param<double> x("x", rand_tensor({12}, 25));
        ps = {&x};
        return g.softmax_groups(g.param(&x), 4);
      },
      33);
  EXPECT_LT(err, 1e-4);
}

TEST(GradCheck, ConvPerBandReplicate) {
  double err = fd_check_op(
      [](Graph<double>& g, std::vector<Param<double>*>& ps) {
        static Param<double> cube("cube", rand_tensor({5, 6, 2}, 26));
        static Param<double> kern("kern", rand_tensor({3, 3}, 27));
        ps = {&cube, &kern};
        return g.conv2d_per_band(g.param(&cube), g.param(&kern), Pad::ReplicateSame);
      },
      34);
  EXPECT_LT(err, 1e-4);
}

TEST(GradCheck, ConvPerBandValid) {
  double err = fd_check_op(
      [](Graph<double>& g, std::vector<Param<double>*>& ps) {
        static Param<double> cube("cube", rand_tensor({6, 6, 2}, 28));
        static Param<double> kern("kern", rand_tensor({3, 3}, 29));
        ps = {&cube, &kern};
        return g.conv2d_per_band(g.param(&cube), g.param(&kern), Pad::Valid);
      },
      35);
  EXPECT_LT(err, 1e-4);
}

TEST(GradCheck, ConvMultiChannel) {
  double err = fd_check_op(
      [](Graph<double>& g, std::vector<Param<double>*>& ps) {
        static Param<double> in("in", rand_tensor({5, 6, 3}, 36));
        static Param<double> w("w", rand_tensor({4, 27}, 37, -0.3, 0.3));
        static Param<double> b("b", rand_tensor({4}, 38));
        ps = {&in, &w, &b};
        return g.conv2d_mc(g.param(&in), g.param(&w), g.param(&b), 3);
      },
      39);
  EXPECT_LT(err, 1e-4);
}

TEST(GradCheck, DownsampleUpsample) {
  double err = fd_check_op(
      [](Graph<double>& g, std::vector<Param<double>*>& ps) {
        static Param<double> cube("cube", rand_tensor({6, 6, 2}, 40));
        ps = {&cube};
        return g.downsample(g.param(&cube), 2);
      },
      41);
  EXPECT_LT(err, 1e-4);
  err = fd_check_op(
      [](Graph<double>& g, std::vector<Param<double>*>& ps) {
        static Param<double> cube("cube", rand_tensor({3, 4, 2}, 42));
        ps = {&cube};
        return g.upsample_bilinear(g.param(&cube), 3);
      },
      43);
  EXPECT_LT(err, 1e-4);
}

TEST(GradCheck, Mode3ConcatAddSubScaleReshape) {
  double err = fd_check_op(
      [](Graph<double>& g, std::vector<Param<double>*>& ps) {
        static Param<double> cube("cube", rand_tensor({4, 5, 3}, 44));
        static Param<double> mat("mat", rand_tensor({2, 3}, 45));
        static Param<double> other("other", rand_tensor({4, 5, 2}, 46));
        ps = {&cube, &mat, &other};
        int m = g.mode3(g.param(&cube), g.param(&mat));
        int cat = g.concat_bands(m, g.param(&other));
        int split = g.reshape(cat, {4 * 5 * 4});
        return g.scale(split, 1.7);
      },
      47);
  EXPECT_LT(err, 1e-4);
  err = fd_check_op(
      [](Graph<double>& g, std::vector<Param<double>*>& ps) {
        static Param<double> a("a", rand_tensor({7}, 48));
        static Param<double> b("b", rand_tensor({7}, 49));
        ps = {&a, &b};
        return g.sub(g.add(g.param(&a), g.param(&b)), g.scale(g.param(&b), 0.3));
      },
      50);
  EXPECT_LT(err, 1e-4);
}

TEST(GradCheck, MaeItself) {
  Graph<double> g;
  Param<double> a("a", rand_tensor({9}, 51, 2.0, 3.0));
  Param<double> b("b", rand_tensor({9}, 52, 0.0, 1.0));
  int loss = g.mae(g.param(&a), g.param(&b));
  auto res = gradcheck::check(g, loss, {&a, &b}, Rng(53));
  EXPECT_LT(res.max_rel_err, 1e-4);
}

TEST(Determinism, BitIdenticalForwardInF32) {
  auto run = [](std::uint64_t seed) {
    Graph<float> g;
    Param<float> cube("cube", Tensor<float>::cube(8, 8, 3));
    Param<float> kern("kern", Tensor<float>::mat(5, 5));
    Rng rng(seed);
    cube.value.fill_uniform(rng, 0.0, 1.0);
    kern.value.fill_uniform(rng, -0.2, 0.8);
    int conv = g.conv2d_per_band(g.param(&cube), g.param(&kern), Pad::ReplicateSame);
    int down = g.downsample(conv, 2);
    int up = g.upsample_bilinear(down, 2);
    g.forward();
    return g.value(up);
  };
  Tensor<float> a = run(99), b = run(99);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(std::memcmp(&a[i], &b[i], sizeof(float)), 0);
  }
}

TEST(FanOut, SharedNodeAccumulatesBothPaths) {
  // y = mae(k, t1) + mae(k, t2): gradient w.r.t. k must sum both branches
  Graph<double> g;
  Param<double> k("k", rand_tensor({4}, 54, 1.0, 2.0));
  int kn = g.param(&k);
  int t1 = g.constant(Tensor<double>::vec(4, 0.0));
  int t2 = g.constant(Tensor<double>::vec(4, 0.0));
  int loss = g.add(g.mae(kn, t1), g.mae(kn, t2));
  auto res = gradcheck::check(g, loss, {&k}, Rng(55));
  EXPECT_LT(res.max_rel_err, 1e-4);
  g.forward();
  g.backward(loss);
  k.zero_grad();
  g.flush_param_grads();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(k.grad[i], 2.0 / 4.0, 1e-12);
}
