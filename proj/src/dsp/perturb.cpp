#include "pvc/dsp/perturb.hpp"

#include <cmath>
#include <filesystem>
#include <functional>

#include "pvc/dsp/resample.hpp"
#include "pvc/dsp/stft.hpp"
#include "pvc/hash.hpp"

namespace pvc::dsp {

namespace {

constexpr double kPi = 3.14159265358979323846;

StftConfig analysis_config(int rate) {
  StftConfig cfg;
  cfg.rate = rate;
  cfg.n_fft = 1024;
  cfg.win = 1024;
  cfg.hop = 256;
  return cfg;
}

// Direct form II transposed biquad, RBJ peaking EQ.
void peaking_filter(std::vector<double>& x, double fs, const PeqBand& band) {
  const double A = std::pow(10.0, band.gain_db / 40.0);
  const double w0 = 2.0 * kPi * band.freq_hz / fs;
  const double alpha = std::sin(w0) / (2.0 * band.q);
  const double a0 = 1.0 + alpha / A;
  const double b0 = (1.0 + alpha * A) / a0;
  const double b1 = (-2.0 * std::cos(w0)) / a0;
  const double b2 = (1.0 - alpha * A) / a0;
  const double a1 = (-2.0 * std::cos(w0)) / a0;
  const double a2 = (1.0 - alpha / A) / a0;
  double z1 = 0.0, z2 = 0.0;
  for (auto& v : x) {
    const double in = v;
    const double out = b0 * in + z1;
    z1 = b1 * in - a1 * out + z2;
    z2 = b2 * in - a2 * out;
    v = out;
  }
}

// Linear interpolation of a spectrum row at a fractional bin; out of range
// reads as zero.
double interp_bin(const double* row, i64 bins, double pos) {
  if (pos < 0.0 || pos > static_cast<double>(bins - 1)) return 0.0;
  const i64 k0 = static_cast<i64>(pos);
  const i64 k1 = std::min(bins - 1, k0 + 1);
  const double frac = pos - static_cast<double>(k0);
  return row[k0] * (1.0 - frac) + row[k1] * frac;
}

// STFT round trip with a per-bin magnitude remapping. src_bin(k) gives the
// fractional source bin for destination bin k; phase stays with the
// destination bin. When use_gl is set the waveform is re-synthesized with
// iterative phase recovery seeded by the original phase.
Waveform spectral_remap(const Waveform& w, const std::function<double(double)>& src_bin,
                        bool use_gl) {
  const i64 n = w.size();
  require_arg(n > 0, "perturb: empty waveform");
  StftConfig cfg = analysis_config(w.rate);

  Waveform padded = w;
  i64 padded_n = ((n + cfg.hop - 1) / cfg.hop) * cfg.hop;
  padded_n = std::max(padded_n, cfg.win);
  padded.samples.resize(static_cast<std::size_t>(padded_n), 0.0);

  Stft s = stft(padded, cfg);
  const i64 frames = s.frames(), bins = s.bins();

  Tensor mag({frames, bins});
  for (i64 i = 0; i < mag.numel(); ++i)
    mag.data[static_cast<std::size_t>(i)] =
        std::hypot(s.re.data[static_cast<std::size_t>(i)],
                   s.im.data[static_cast<std::size_t>(i)]);

  Tensor warped({frames, bins});
  for (i64 f = 0; f < frames; ++f) {
    const double* row = mag.ptr() + f * bins;
    for (i64 k = 0; k < bins; ++k)
      warped.at(f, k) = interp_bin(row, bins, src_bin(static_cast<double>(k)));
  }

  Waveform out;
  if (use_gl) {
    out = griffin_lim(warped, cfg, padded_n, 32, &s);
  } else {
    Stft t;
    t.re = Tensor({frames, bins});
    t.im = Tensor({frames, bins});
    for (i64 i = 0; i < t.re.numel(); ++i) {
      const std::size_t ii = static_cast<std::size_t>(i);
      const double m = mag.data[ii];
      if (m > 1e-12) {
        t.re.data[ii] = warped.data[ii] * s.re.data[ii] / m;
        t.im.data[ii] = warped.data[ii] * s.im.data[ii] / m;
      } else {
        t.re.data[ii] = warped.data[ii];
        t.im.data[ii] = 0.0;
      }
    }
    out = istft(t, cfg, padded_n);
  }
  out.samples.resize(static_cast<std::size_t>(n));
  out.rate = w.rate;
  return out;
}

std::vector<PeqBand> draw_peq(Rng& rng) {
  // log-spaced peaking bands with gains in +-12 dB
  static constexpr double kFreqs[] = {60.0,   150.0,  375.0,  900.0,
                                      1800.0, 2800.0, 4200.0, 6000.0};
  std::vector<PeqBand> bands;
  for (double f : kFreqs) {
    PeqBand b;
    b.freq_hz = f;
    b.gain_db = rng.uniform(-12.0, 12.0);
    b.q = rng.uniform(2.0, 5.0);
    bands.push_back(b);
  }
  return bands;
}

}  // namespace

PerturbParams draw_perturb_params(const std::string& method, u64 seed) {
  require_arg(method == "vtlp" || method == "nansy" || method == "sr",
              "perturb: unknown method '" + method + "'");
  PerturbParams p;
  p.method = method;
  p.seed = seed;
  Rng rng(mix64(seed));
  if (method == "vtlp") {
    p.vtlp_warp = rng.uniform(0.9, 1.1);
  } else if (method == "sr") {
    p.sr_ratio = rng.uniform(0.85, 1.15);
  } else {
    const double f = rng.uniform(1.0, 1.4);
    p.formant_shift = rng.uniform() < 0.5 ? 1.0 / f : f;
    const double r = rng.uniform(1.0, 2.0);
    p.pitch_ratio = rng.uniform() < 0.5 ? 1.0 / r : r;
    p.peq = draw_peq(rng);
  }
  return p;
}

Waveform perturb_vtlp(const Waveform& w, double warp, Rng&) {
  require_arg(warp >= 0.9 && warp <= 1.1, "vtlp: warp must lie in [0.9, 1.1]");
  const StftConfig cfg = analysis_config(w.rate);
  const double nyq = static_cast<double>(cfg.n_fft) / 2.0;  // in bins
  const double f_hi = 0.85 * nyq;
  const double b = f_hi * std::min(warp, 1.0) / warp;
  const double gb = f_hi * std::min(warp, 1.0);
  auto src = [warp, nyq, b, gb](double k) {
    if (k <= gb) return k / warp;
    return b + (k - gb) * (nyq - b) / (nyq - gb);
  };
  return spectral_remap(w, src, false);
}

Waveform perturb_nansy(const Waveform& w, const PerturbParams& p, Rng& rng) {
  require_arg(p.method == "nansy", "nansy: params drawn for method '" + p.method + "'");
  require_arg(p.pitch_ratio > 0.0, "nansy: pitch ratio must be positive");
  require_arg(p.formant_shift > 0.0, "nansy: formant shift must be positive");
  const i64 n = w.size();
  require_arg(n > 0, "nansy: empty waveform");

  // 1. frequency shaping
  Waveform out = w;
  const std::vector<PeqBand> bands = p.peq.empty() ? draw_peq(rng) : p.peq;
  for (const auto& band : bands)
    if (band.gain_db != 0.0) peaking_filter(out.samples, w.rate, band);

  // 2. pitch randomization: resample then stretch back to length
  if (std::fabs(p.pitch_ratio - 1.0) > 1e-9) {
    const i64 m = static_cast<i64>(std::llround(1000.0 * p.pitch_ratio));
    std::vector<double> shifted = resample_rational(out.samples, 1000, m);
    const double factor = static_cast<double>(n) / static_cast<double>(shifted.size());
    out.samples = time_stretch(shifted, factor);
    out.samples.resize(static_cast<std::size_t>(n), 0.0);
  }

  // 3. formant shifting: stretch the spectral magnitude by the shift factor
  if (std::fabs(p.formant_shift - 1.0) > 1e-9) {
    const double shift = p.formant_shift;
    out = spectral_remap(out, [shift](double k) { return k / shift; }, false);
  }
  return out;
}

Waveform perturb_sr(const Waveform& w, double ratio) {
  require_arg(ratio >= 0.85 && ratio <= 1.15, "sr: ratio must lie in [0.85, 1.15]");
  if (ratio == 1.0) return spectral_remap(w, [](double k) { return k; }, true);
  return spectral_remap(w, [ratio](double k) { return k / ratio; }, true);
}

Waveform apply_perturb(const Waveform& w, const PerturbParams& p) {
  Rng rng(mix64(p.seed));
  if (p.method == "vtlp") return perturb_vtlp(w, p.vtlp_warp, rng);
  if (p.method == "nansy") return perturb_nansy(w, p, rng);
  if (p.method == "sr") return perturb_sr(w, p.sr_ratio);
  fail_arg("perturb: unknown method '" + p.method + "'");
}

std::string perturb_cache_path(const std::string& cache_root, const std::string& method,
                               const std::string& utterance_id, u64 seed) {
  return cache_root + "/" + method + "/" + utterance_id + "/" + to_hex(seed) + ".wav";
}

Waveform perturb_cached(const Waveform& w, const std::string& utterance_id,
                        const std::string& method, u64 seed, const std::string& cache_root) {
  namespace fs = std::filesystem;
  const std::string path = perturb_cache_path(cache_root, method, utterance_id, seed);
  if (fs::exists(path)) return read_wav(path);

  const PerturbParams p = draw_perturb_params(method, seed);
  Waveform out = apply_perturb(w, p);
  peak_normalize(out);

  fs::create_directories(fs::path(path).parent_path());
  const std::string tmp = path + ".tmp";
  write_wav(tmp, out);
  fs::rename(tmp, path);
  return read_wav(path);
}

}  // namespace pvc::dsp
