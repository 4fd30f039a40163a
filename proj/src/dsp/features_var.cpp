#include "pvc/dsp/features_var.hpp"

#include <cmath>

namespace pvc::dsp {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kMagEps = 1e-12;
}  // namespace

FeatureExtractor::FeatureExtractor(const StftConfig& cfg, const MelConfig& mel)
    : cfg_(cfg), mel_(mel) {
  cfg.validate();
  require_arg(cfg.center && cfg.pad_mode == "reflect",
              "feature extractor: expects centered reflect-padded analysis");
  const i64 bins = cfg.bins();

  Tensor basis({2 * bins, 1, cfg.win});
  for (i64 k = 0; k < bins; ++k)
    for (i64 n = 0; n < cfg.win; ++n) {
      const double wn = 0.5 * (1.0 - std::cos(2.0 * kPi * n / cfg.win));
      const double th = 2.0 * kPi * k * n / static_cast<double>(cfg.n_fft);
      basis.at(k, static_cast<i64>(0), n) = std::cos(th) * wn;
      basis.at(bins + k, static_cast<i64>(0), n) = -std::sin(th) * wn;
    }
  basis_ = nn::Var::constant(std::move(basis));

  const Tensor fb = mel_filterbank(cfg, mel);
  Tensor fb3({mel.n_mels, bins, 1});
  fb3.data = fb.data;
  mel_fb_ = nn::Var::constant(std::move(fb3));
}

nn::Var FeatureExtractor::linear(const nn::Var& wav) const {
  using namespace nn;
  require_arg(wav.defined() && wav.value().rank() == 3 && wav.dim(1) == 1,
              "feature extractor: waveform must be (B, 1, T)");
  require_arg(wav.dim(2) % cfg_.hop == 0,
              "feature extractor: sample count must be a multiple of hop");
  const i64 bins = cfg_.bins();
  const i64 pad = (cfg_.win - cfg_.hop) / 2;

  Var x = pad_reflect_time(wav, pad, pad);
  Var spec = conv1d(x, basis_, Var(), cfg_.hop, 0, 1);  // (B, 2*bins, frames)
  Var re = slice_channels(spec, 0, bins);
  Var im = slice_channels(spec, bins, bins);
  return sqrt_eps(add(square(re), square(im)), kMagEps);
}

nn::Var FeatureExtractor::mel_of_linear(const nn::Var& lin) const {
  using namespace nn;
  require_arg(lin.defined() && lin.value().rank() == 3 && lin.dim(1) == cfg_.bins(),
              "feature extractor: linear spectrogram has wrong bin count");
  Var m = conv1d(lin, mel_fb_, Var(), 1, 0, 1);
  return log_clamp(m, kLogFloor);
}

}  // namespace pvc::dsp
