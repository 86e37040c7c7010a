// ADAM with bias correction and decoupled weight decay, over externally
// owned parameters. Learning rates are per parameter group so the spectral
// wrapper can run slower than the rest, and groups can be decayed on the
// fly during greedy alternation.
#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "u2k/common.hpp"
#include "u2k/graph.hpp"

namespace u2k {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-8;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  Adam() = default;

  Adam(std::vector<Param<T>*> params, std::map<int, double> group_lr, AdamConfig cfg = {})
      : params_(std::move(params)), group_lr_(std::move(group_lr)), cfg_(cfg) {
    for (Param<T>* p : params_) {
      require(group_lr_.count(p->group) > 0, ErrorKind::Config,
              "adam: no learning rate for group of parameter '" + p->name + "'");
      m_.emplace_back(Tensor<double>(p->value.dims()));
      v_.emplace_back(Tensor<double>(p->value.dims()));
    }
  }

  int step_count() const { return t_; }
  void set_lr(int group, double lr) { group_lr_[group] = lr; }
  double lr(int group) const { return group_lr_.at(group); }

  // Applies one update from the gradients accumulated in each parameter,
  // then clears them. Non-finite gradients abort naming the parameter.
  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      Param<T>* p = params_[pi];
      if (!p->trainable) continue;
      double lr = group_lr_.at(p->group);
      Tensor<double>&m = m_[pi], &v = v_[pi];
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        double gr = double(p->grad[i]);
        if (!std::isfinite(gr))
          fail_divergence("adam: non-finite gradient in parameter '" + p->name + "'");
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gr;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gr * gr;
        double mh = m[i] / bc1;
        double vh = v[i] / bc2;
        double val = double(p->value[i]);
        val -= lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * val);
        p->value[i] = T(val);
      }
      p->zero_grad();
    }
  }

 private:
  std::vector<Param<T>*> params_;
  std::map<int, double> group_lr_;
  AdamConfig cfg_;
  std::vector<Tensor<double>> m_, v_;
  int t_ = 0;
};

}  // namespace u2k
