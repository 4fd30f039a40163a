#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pvc/nn/autodiff.hpp"
#include "pvc/rng.hpp"

namespace pvc::nn {

// Base for anything holding trainable parameters. Parameters are registered
// under dotted names; copies of a Var share storage, so handing the list to
// an optimizer or a checkpoint writer aliases the live weights.
class Module {
 public:
  virtual ~Module() = default;

  const std::vector<std::pair<std::string, Var>>& parameters() const { return params_; }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  i64 param_count() const {
    i64 n = 0;
    for (const auto& [name, p] : params_) n += p.value().numel();
    return n;
  }

 protected:
  Var reg(std::string name, Tensor init) {
    Var v = Var::param(std::move(init));
    params_.emplace_back(std::move(name), v);
    return v;
  }

  void adopt(const std::string& prefix, const Module& child) {
    for (const auto& [name, p] : child.params_)
      params_.emplace_back(prefix + "." + name, p);
  }

  std::vector<std::pair<std::string, Var>> params_;
};

class Conv1d : public Module {
 public:
  Conv1d(i64 in_ch, i64 out_ch, i64 kernel, i64 stride, i64 pad, i64 dilation, Rng& rng,
         bool zero_init = false);

  Var forward(const Var& x) const;

  i64 in_channels() const { return in_ch_; }
  i64 out_channels() const { return out_ch_; }

 private:
  Var w_, b_;
  i64 in_ch_, out_ch_, stride_, pad_, dilation_;
};

class ConvTranspose1d : public Module {
 public:
  ConvTranspose1d(i64 in_ch, i64 out_ch, i64 kernel, i64 stride, i64 pad, Rng& rng);

  Var forward(const Var& x) const;

 private:
  Var w_, b_;
  i64 stride_, pad_;
};

// Non-causal WaveNet stack: dilated gated convolutions with residual and
// skip connections, optionally conditioned on a per-utterance vector
// (B, cond, 1) broadcast over time. Output has `hidden` channels.
class WaveNet : public Module {
 public:
  WaveNet(i64 hidden, i64 kernel, i64 layers, i64 dilation_growth, i64 cond_channels,
          Rng& rng);

  // x: (B, hidden, T); g: (B, cond, 1) or undefined when cond_channels == 0
  Var forward(const Var& x, const Var& g) const;

  i64 hidden() const { return hidden_; }

 private:
  i64 hidden_, kernel_, layers_, cond_channels_;
  std::vector<Conv1d> in_convs_;
  std::vector<Conv1d> cond_convs_;
  std::vector<Conv1d> res_skip_convs_;
};

}  // namespace pvc::nn
