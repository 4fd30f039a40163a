#include "pvc/nn/modules.hpp"

namespace pvc::nn {

Conv1d::Conv1d(i64 in_ch, i64 out_ch, i64 kernel, i64 stride, i64 pad, i64 dilation,
               Rng& rng, bool zero_init)
    : in_ch_(in_ch), out_ch_(out_ch), stride_(stride), pad_(pad), dilation_(dilation) {
  require_arg(in_ch > 0 && out_ch > 0 && kernel > 0, "Conv1d: bad channel/kernel config");
  Tensor w = zero_init ? Tensor::zeros({out_ch, in_ch, kernel})
                       : init_uniform_fan_in({out_ch, in_ch, kernel}, in_ch * kernel, rng);
  w_ = reg("w", std::move(w));
  b_ = reg("b", Tensor::zeros({out_ch}));
}

Var Conv1d::forward(const Var& x) const {
  return conv1d(x, w_, b_, stride_, pad_, dilation_);
}

ConvTranspose1d::ConvTranspose1d(i64 in_ch, i64 out_ch, i64 kernel, i64 stride, i64 pad,
                                 Rng& rng)
    : stride_(stride), pad_(pad) {
  require_arg(in_ch > 0 && out_ch > 0 && kernel > 0,
              "ConvTranspose1d: bad channel/kernel config");
  w_ = reg("w", init_uniform_fan_in({in_ch, out_ch, kernel}, in_ch * kernel, rng));
  b_ = reg("b", Tensor::zeros({out_ch}));
}

Var ConvTranspose1d::forward(const Var& x) const {
  return conv_transpose1d(x, w_, b_, stride_, pad_);
}

WaveNet::WaveNet(i64 hidden, i64 kernel, i64 layers, i64 dilation_growth, i64 cond_channels,
                 Rng& rng)
    : hidden_(hidden), kernel_(kernel), layers_(layers), cond_channels_(cond_channels) {
  require_arg(hidden > 0 && layers > 0 && kernel % 2 == 1,
              "WaveNet: hidden/layers must be positive, kernel odd");
  require_arg(dilation_growth >= 1, "WaveNet: dilation growth must be >= 1");
  i64 dilation = 1;
  for (i64 l = 0; l < layers; ++l) {
    const i64 pad = dilation * (kernel - 1) / 2;
    in_convs_.emplace_back(hidden, 2 * hidden, kernel, 1, pad, dilation, rng);
    adopt("in." + std::to_string(l), in_convs_.back());
    if (cond_channels > 0) {
      cond_convs_.emplace_back(cond_channels, 2 * hidden, 1, 1, 0, 1, rng);
      adopt("cond." + std::to_string(l), cond_convs_.back());
    }
    const i64 rs_out = (l < layers - 1) ? 2 * hidden : hidden;
    res_skip_convs_.emplace_back(hidden, rs_out, 1, 1, 0, 1, rng);
    adopt("res_skip." + std::to_string(l), res_skip_convs_.back());
    dilation *= dilation_growth;
  }
}

Var WaveNet::forward(const Var& x, const Var& g) const {
  require_arg(x.defined() && x.dim(1) == hidden_, "WaveNet: input channel mismatch");
  require_arg((cond_channels_ == 0) == !g.defined(),
              "WaveNet: conditioning presence does not match configuration");
  const i64 T = x.dim(2);

  Var h = x;
  Var skip_sum;
  for (i64 l = 0; l < layers_; ++l) {
    Var acts = in_convs_[static_cast<std::size_t>(l)].forward(h);
    if (cond_channels_ > 0) {
      Var c = cond_convs_[static_cast<std::size_t>(l)].forward(g);
      acts = add(acts, broadcast_time(c, T));
    }
    Var t_part = tanh(slice_channels(acts, 0, hidden_));
    Var s_part = sigmoid(slice_channels(acts, hidden_, hidden_));
    Var z = mul(t_part, s_part);

    Var rs = res_skip_convs_[static_cast<std::size_t>(l)].forward(z);
    if (l < layers_ - 1) {
      h = add(h, slice_channels(rs, 0, hidden_));
      Var skip = slice_channels(rs, hidden_, hidden_);
      skip_sum = skip_sum.defined() ? add(skip_sum, skip) : skip;
    } else {
      skip_sum = skip_sum.defined() ? add(skip_sum, rs) : rs;
    }
  }
  return skip_sum;
}

}  // namespace pvc::nn
