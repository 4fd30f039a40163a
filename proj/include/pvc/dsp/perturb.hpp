#pragma once

#include <string>
#include <vector>

#include "pvc/audio.hpp"
#include "pvc/rng.hpp"

namespace pvc::dsp {

struct PeqBand {
  double freq_hz = 1000.0;
  double gain_db = 0.0;
  double q = 2.0;
};

// Concrete parameters for one perturbation draw. Keeping the drawn values
// here (rather than inside the transforms) makes every augmentation
// auditable and replayable from (method, seed).
struct PerturbParams {
  std::string method;  // vtlp | nansy | sr
  double vtlp_warp = 1.0;
  double formant_shift = 1.0;
  double pitch_ratio = 1.0;
  std::vector<PeqBand> peq;
  double sr_ratio = 1.0;
  u64 seed = 0;
};

PerturbParams draw_perturb_params(const std::string& method, u64 seed);

// Piecewise-linear frequency warp of the magnitude spectrogram; phase kept.
Waveform perturb_vtlp(const Waveform& w, double warp, Rng& rng);

// Frequency shaping -> pitch randomization -> formant shifting, in order.
// Draws the parametric-EQ curve from rng if p.peq is empty.
Waveform perturb_nansy(const Waveform& w, const PerturbParams& p, Rng& rng);

// Vertical spectrogram resize by ratio with iterative phase recovery.
Waveform perturb_sr(const Waveform& w, double ratio);

Waveform apply_perturb(const Waveform& w, const PerturbParams& p);

std::string perturb_cache_path(const std::string& cache_root, const std::string& method,
                               const std::string& utterance_id, u64 seed);

// Returns the perturbed waveform, reading from / writing to the on-disk
// cache keyed by (utterance_id, method, seed).
Waveform perturb_cached(const Waveform& w, const std::string& utterance_id,
                        const std::string& method, u64 seed, const std::string& cache_root);

}  // namespace pvc::dsp
