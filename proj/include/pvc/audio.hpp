#pragma once

#include <string>
#include <vector>

#include "pvc/common.hpp"

namespace pvc {

// Mono audio in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int rate = 0;

  Waveform() = default;
  Waveform(std::vector<double> s, int r) : samples(std::move(s)), rate(r) {}

  i64 size() const { return static_cast<i64>(samples.size()); }
  double duration_s() const { return rate > 0 ? static_cast<double>(size()) / rate : 0.0; }
};

// 16-bit PCM WAV reader. Stereo input is averaged down to mono; other
// sample formats are rejected.
Waveform read_wav(const std::string& path);

// Writes mono 16-bit PCM. Samples are clamped to [-1, 1] first.
void write_wav(const std::string& path, const Waveform& w);

// Scales down so that max |sample| <= peak. Quieter signals are left
// untouched (no gain-up).
void peak_normalize(Waveform& w, double peak = 0.95);

double max_abs(const Waveform& w);

}  // namespace pvc
