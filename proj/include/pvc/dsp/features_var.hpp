#pragma once

#include "pvc/dsp/stft.hpp"
#include "pvc/nn/autodiff.hpp"

namespace pvc::dsp {

// Differentiable spectral features over (B, 1, T) waveforms. The windowed
// DFT basis and the mel filterbank enter the graph as fixed convolution
// weights, so gradients reach the waveform; magnitudes use a stabilized
// square root. T must be a multiple of hop; output frame axis is last.
class FeatureExtractor {
 public:
  FeatureExtractor(const StftConfig& cfg, const MelConfig& mel);

  // (B, 1, T) -> (B, bins, T/hop), magnitude
  nn::Var linear(const nn::Var& wav) const;

  // (B, bins, frames) -> (B, n_mels, frames), log amplitude
  nn::Var mel_of_linear(const nn::Var& lin) const;

  // (B, 1, T) -> (B, n_mels, T/hop)
  nn::Var mel(const nn::Var& wav) const { return mel_of_linear(linear(wav)); }

  const StftConfig& stft_config() const { return cfg_; }
  const MelConfig& mel_config() const { return mel_; }

 private:
  StftConfig cfg_;
  MelConfig mel_;
  nn::Var basis_;   // (2*bins, 1, win)
  nn::Var mel_fb_;  // (n_mels, bins, 1)
};

}  // namespace pvc::dsp
