#pragma once

#include "pvc/audio.hpp"

namespace pvc::dsp {

// Windowed-sinc rational resampler. Output length is ceil(n * l / m).
std::vector<double> resample_rational(const std::vector<double>& x, i64 l, i64 m);

// Rate conversion; returns w unchanged when rates already match.
Waveform resample(const Waveform& w, int new_rate);

// Time stretch by `factor` (output length ~ n * factor, then trimmed or
// zero-padded to exactly round(n * factor)) using waveform-similarity
// overlap-add; pitch is preserved.
std::vector<double> time_stretch(const std::vector<double>& x, double factor);

}  // namespace pvc::dsp
