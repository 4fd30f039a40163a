#include "pvc/dsp/stft.hpp"

#include <cmath>

#include "pvc/kernels.hpp"

namespace pvc::dsp {

namespace {

constexpr double kPi = 3.14159265358979323846;

const kernels::Ops& K() { return kernels::active(); }

std::vector<double> hann(i64 n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (i64 i = 0; i < n; ++i)
    w[static_cast<std::size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / n));
  return w;
}

// Frames the (optionally padded) signal; row r holds win samples starting
// at r * hop in padded coordinates.
std::vector<double> padded_signal(const Waveform& w, const StftConfig& cfg) {
  const i64 n = w.size();
  const i64 pad = cfg.center ? (cfg.win - cfg.hop) / 2 : 0;
  std::vector<double> x(static_cast<std::size_t>(n + 2 * pad), 0.0);
  for (i64 i = 0; i < n; ++i) x[static_cast<std::size_t>(i + pad)] = w.samples[static_cast<std::size_t>(i)];
  if (cfg.center && cfg.pad_mode == "reflect") {
    require_arg(pad < n, "stft: signal shorter than reflect padding");
    for (i64 i = 0; i < pad; ++i) {
      x[static_cast<std::size_t>(pad - 1 - i)] = w.samples[static_cast<std::size_t>(i + 1)];
      x[static_cast<std::size_t>(pad + n + i)] = w.samples[static_cast<std::size_t>(n - 2 - i)];
    }
  }
  return x;
}

}  // namespace

void StftConfig::validate() const {
  require_arg(hop > 0, "stft config: hop must be positive");
  require_arg(win > 0 && win <= n_fft, "stft config: need 0 < win <= n_fft");
  require_arg(win % hop == 0, "stft config: hop must divide win");
  require_arg((win - hop) % 2 == 0, "stft config: win - hop must be even");
  require_arg(pad_mode == "reflect" || pad_mode == "zero",
              "stft config: pad_mode must be reflect or zero");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Tensor mel_filterbank(const StftConfig& cfg, const MelConfig& mel) {
  const i64 bins = cfg.bins();
  const double fmax = mel.fmax > 0.0 ? mel.fmax : cfg.rate / 2.0;
  require_arg(mel.n_mels > 0, "mel_filterbank: n_mels must be positive");
  require_arg(mel.fmin >= 0.0 && mel.fmin < fmax && fmax <= cfg.rate / 2.0,
              "mel_filterbank: need 0 <= fmin < fmax <= rate/2");

  const double mlo = hz_to_mel(mel.fmin);
  const double mhi = hz_to_mel(fmax);
  std::vector<double> edges(static_cast<std::size_t>(mel.n_mels + 2));
  for (i64 i = 0; i < mel.n_mels + 2; ++i)
    edges[static_cast<std::size_t>(i)] =
        mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(i) / (mel.n_mels + 1));

  Tensor fb({mel.n_mels, bins});
  for (i64 m = 0; m < mel.n_mels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double c = edges[static_cast<std::size_t>(m + 1)];
    const double hi = edges[static_cast<std::size_t>(m + 2)];
    for (i64 k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.rate / static_cast<double>(cfg.n_fft);
      double v = 0.0;
      if (f > lo && f < hi) v = f <= c ? (f - lo) / (c - lo) : (hi - f) / (hi - c);
      fb.at(m, k) = v;
    }
  }
  return fb;
}

Stft stft(const Waveform& w, const StftConfig& cfg) {
  cfg.validate();
  require_arg(w.size() > 0, "stft: empty waveform");
  require_arg(w.rate == cfg.rate, "stft: waveform rate does not match config");
  require_arg(w.size() % cfg.hop == 0, "stft: sample count must be a multiple of hop");

  const auto x = padded_signal(w, cfg);
  const i64 frames = cfg.center ? w.size() / cfg.hop
                                : (w.size() - cfg.win) / cfg.hop + 1;
  const i64 bins = cfg.bins();
  const auto window = hann(cfg.win);

  // Windowed DFT basis, (bins, win) per plane.
  Tensor cb({bins, cfg.win}), sb({bins, cfg.win});
  for (i64 k = 0; k < bins; ++k)
    for (i64 n = 0; n < cfg.win; ++n) {
      const double th = 2.0 * kPi * k * n / static_cast<double>(cfg.n_fft);
      cb.at(k, n) = std::cos(th) * window[static_cast<std::size_t>(n)];
      sb.at(k, n) = -std::sin(th) * window[static_cast<std::size_t>(n)];
    }

  Stft s;
  s.re = Tensor({frames, bins});
  s.im = Tensor({frames, bins});
  for (i64 f = 0; f < frames; ++f) {
    const double* frame = x.data() + f * cfg.hop;
    for (i64 k = 0; k < bins; ++k) {
      s.re.at(f, k) = K().dot(frame, cb.ptr() + k * cfg.win, static_cast<std::size_t>(cfg.win));
      s.im.at(f, k) = K().dot(frame, sb.ptr() + k * cfg.win, static_cast<std::size_t>(cfg.win));
    }
  }
  return s;
}

Waveform istft(const Stft& s, const StftConfig& cfg, i64 n_samples) {
  cfg.validate();
  require_arg(cfg.win == cfg.n_fft, "istft: requires win == n_fft");
  require_arg(s.re.rank() == 2 && s.re.same_shape(s.im), "istft: malformed spectrum");
  require_arg(s.bins() == cfg.bins(), "istft: bin count does not match config");
  const i64 frames = s.frames();
  const i64 pad = cfg.center ? (cfg.win - cfg.hop) / 2 : 0;
  const i64 total = (frames - 1) * cfg.hop + cfg.win;
  require_arg(n_samples + 2 * pad <= total && n_samples > 0,
              "istft: n_samples inconsistent with frame count");

  const auto window = hann(cfg.win);
  const i64 bins = cfg.bins();

  // Inverse DFT basis over time, (win, bins) layout for row dot products.
  Tensor icb({cfg.win, bins}), isb({cfg.win, bins});
  for (i64 n = 0; n < cfg.win; ++n)
    for (i64 k = 0; k < bins; ++k) {
      const double th = 2.0 * kPi * k * n / static_cast<double>(cfg.n_fft);
      const double two = (k == 0 || k == cfg.n_fft / 2) ? 1.0 : 2.0;
      icb.at(n, k) = two * std::cos(th) / static_cast<double>(cfg.n_fft);
      isb.at(n, k) = -two * std::sin(th) / static_cast<double>(cfg.n_fft);
    }

  std::vector<double> acc(static_cast<std::size_t>(total), 0.0);
  std::vector<double> norm(static_cast<std::size_t>(total), 0.0);
  for (i64 f = 0; f < frames; ++f) {
    const double* re = s.re.ptr() + f * bins;
    const double* im = s.im.ptr() + f * bins;
    for (i64 n = 0; n < cfg.win; ++n) {
      const double v = K().dot(re, icb.ptr() + n * bins, static_cast<std::size_t>(bins)) +
                       K().dot(im, isb.ptr() + n * bins, static_cast<std::size_t>(bins));
      const double wn = window[static_cast<std::size_t>(n)];
      acc[static_cast<std::size_t>(f * cfg.hop + n)] += v * wn;
      norm[static_cast<std::size_t>(f * cfg.hop + n)] += wn * wn;
    }
  }

  Waveform out;
  out.rate = cfg.rate;
  out.samples.resize(static_cast<std::size_t>(n_samples));
  for (i64 i = 0; i < n_samples; ++i) {
    const std::size_t j = static_cast<std::size_t>(i + pad);
    out.samples[static_cast<std::size_t>(i)] = norm[j] > 1e-12 ? acc[j] / norm[j] : 0.0;
  }
  return out;
}

Waveform griffin_lim(const Tensor& magnitude, const StftConfig& cfg, i64 n_samples,
                     int iters, const Stft* phase_init) {
  require_arg(magnitude.rank() == 2 && magnitude.dim(1) == cfg.bins(),
              "griffin_lim: magnitude must be (frames, bins)");
  require_arg(iters >= 1, "griffin_lim: iters must be >= 1");
  const i64 frames = magnitude.dim(0);
  const i64 bins = cfg.bins();

  Stft cur;
  cur.re = Tensor({frames, bins});
  cur.im = Tensor({frames, bins});
  for (i64 f = 0; f < frames; ++f)
    for (i64 k = 0; k < bins; ++k) {
      double pre = 1.0, pim = 0.0;
      if (phase_init) {
        const double m = std::hypot(phase_init->re.at(f, k), phase_init->im.at(f, k));
        if (m > 1e-12) {
          pre = phase_init->re.at(f, k) / m;
          pim = phase_init->im.at(f, k) / m;
        }
      }
      cur.re.at(f, k) = magnitude.at(f, k) * pre;
      cur.im.at(f, k) = magnitude.at(f, k) * pim;
    }

  Waveform w;
  for (int it = 0; it < iters; ++it) {
    w = istft(cur, cfg, n_samples);
    if (it == iters - 1) break;
    Stft s = stft(w, cfg);
    for (i64 f = 0; f < frames; ++f)
      for (i64 k = 0; k < bins; ++k) {
        const double m = std::hypot(s.re.at(f, k), s.im.at(f, k));
        if (m > 1e-12) {
          cur.re.at(f, k) = magnitude.at(f, k) * s.re.at(f, k) / m;
          cur.im.at(f, k) = magnitude.at(f, k) * s.im.at(f, k) / m;
        } else {
          cur.re.at(f, k) = magnitude.at(f, k);
          cur.im.at(f, k) = 0.0;
        }
      }
  }
  return w;
}

MelSpec mel_spectrogram(const Waveform& w, const StftConfig& cfg, const MelConfig& mel) {
  LinSpec lin = linear_spectrogram(w, cfg);
  const Tensor fb = mel_filterbank(cfg, mel);
  const i64 frames = lin.frames(), bins = lin.bins();
  MelSpec out;
  out.values = Tensor({frames, mel.n_mels});
  for (i64 f = 0; f < frames; ++f)
    for (i64 m = 0; m < mel.n_mels; ++m) {
      const double v = kernels::active().dot(lin.values.ptr() + f * bins,
                                             fb.ptr() + m * bins,
                                             static_cast<std::size_t>(bins));
      out.values.at(f, m) = std::log(std::max(v, kLogFloor));
    }
  return out;
}

LinSpec linear_spectrogram(const Waveform& w, const StftConfig& cfg) {
  Stft s = stft(w, cfg);
  LinSpec out;
  out.values = Tensor({s.frames(), s.bins()});
  for (i64 i = 0; i < out.values.numel(); ++i)
    out.values.data[static_cast<std::size_t>(i)] =
        std::hypot(s.re.data[static_cast<std::size_t>(i)],
                   s.im.data[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace pvc::dsp
