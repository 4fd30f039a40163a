#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "pvc/nn/autodiff.hpp"

namespace pvc::nn {

// AdamW with decoupled weight decay and a per-step exponential learning-rate
// schedule. Moment slots live here and are exposed for checkpointing; the
// effective rate is derived from the step count, so a restored optimizer
// continues exactly where it stopped.
class AdamW {
 public:
  struct Config {
    double lr = 2e-4;
    double beta1 = 0.8;
    double beta2 = 0.99;
    double eps = 1e-9;
    double weight_decay = 0.01;
    double lr_decay = 1.0;  // multiplicative, applied per step
  };

  struct Slot {
    Tensor m;
    Tensor v;
  };

  AdamW(std::vector<std::pair<std::string, Var>> params, Config cfg)
      : params_(std::move(params)), cfg_(cfg) {
    slots_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      slots_[i].m = Tensor(params_[i].second.shape());
      slots_[i].v = Tensor(params_[i].second.shape());
    }
  }

  double current_lr() const {
    return cfg_.lr * std::pow(cfg_.lr_decay, static_cast<double>(step_));
  }

  void step() {
    const double lr = current_lr();
    step_ += 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Var& p = params_[i].second;
      const Tensor& g = p.node()->grad;
      if (g.numel() == 0) continue;  // no gradient reached this parameter
      Tensor& val = p.value();
      Slot& s = slots_[i];
      for (std::size_t j = 0; j < val.data.size(); ++j) {
        const double gj = g.data[j];
        s.m.data[j] = cfg_.beta1 * s.m.data[j] + (1.0 - cfg_.beta1) * gj;
        s.v.data[j] = cfg_.beta2 * s.v.data[j] + (1.0 - cfg_.beta2) * gj * gj;
        const double mhat = s.m.data[j] / bc1;
        const double vhat = s.v.data[j] / bc2;
        val.data[j] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                             cfg_.weight_decay * val.data[j]);
      }
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  i64 step_count() const { return step_; }
  void set_step_count(i64 s) { step_ = s; }

  const Config& config() const { return cfg_; }
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }
  const std::vector<std::pair<std::string, Var>>& params() const { return params_; }

 private:
  std::vector<std::pair<std::string, Var>> params_;
  Config cfg_;
  std::vector<Slot> slots_;
  i64 step_ = 0;
};

}  // namespace pvc::nn
