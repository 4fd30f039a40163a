#pragma once

#include <string>
#include <vector>

#include "pvc/audio.hpp"
#include "pvc/tensor.hpp"

namespace pvc::dsp {

struct StftConfig {
  int rate = 16000;
  i64 n_fft = 1280;
  i64 hop = 320;
  i64 win = 1280;
  bool center = true;
  std::string pad_mode = "reflect";  // reflect | zero

  i64 bins() const { return n_fft / 2 + 1; }
  void validate() const;
};

struct MelConfig {
  i64 n_mels = 80;
  double fmin = 0.0;
  double fmax = 0.0;  // 0 -> Nyquist
};

// Complex STFT, (n_frames, bins) per plane.
struct Stft {
  Tensor re;
  Tensor im;
  i64 frames() const { return re.rank() == 2 ? re.dim(0) : 0; }
  i64 bins() const { return re.rank() == 2 ? re.dim(1) : 0; }
};

struct MelSpec {
  Tensor values;  // (n_frames, n_mels), log amplitude
  i64 frames() const { return values.dim(0); }
  i64 mels() const { return values.dim(1); }
};

struct LinSpec {
  Tensor values;  // (n_frames, n_fft/2 + 1), magnitude
  i64 frames() const { return values.dim(0); }
  i64 bins() const { return values.dim(1); }
};

inline constexpr double kLogFloor = 1e-5;

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular filterbank, (n_mels, bins) weights.
Tensor mel_filterbank(const StftConfig& cfg, const MelConfig& mel);

Stft stft(const Waveform& w, const StftConfig& cfg);

// Overlap-add inverse with per-sample window-square normalization.
// n_samples selects the synthesized length (the padding added by a centered
// analysis is removed); requires win == n_fft.
Waveform istft(const Stft& s, const StftConfig& cfg, i64 n_samples);

// Iterative phase recovery for a target magnitude (n_frames, bins). The
// initial phase is taken from `phase_init` when given, zero otherwise.
Waveform griffin_lim(const Tensor& magnitude, const StftConfig& cfg, i64 n_samples,
                     int iters = 32, const Stft* phase_init = nullptr);

MelSpec mel_spectrogram(const Waveform& w, const StftConfig& cfg, const MelConfig& mel);
LinSpec linear_spectrogram(const Waveform& w, const StftConfig& cfg);

}  // namespace pvc::dsp
