#include "pvc/dsp/resample.hpp"

#include <cmath>
#include <numeric>

#include "pvc/common.hpp"
#include "pvc/kernels.hpp"

namespace pvc::dsp {

namespace {
constexpr double kPi = 3.14159265358979323846;

double sinc(double x) {
  if (std::fabs(x) < 1e-12) return 1.0;
  const double px = kPi * x;
  return std::sin(px) / px;
}
}  // namespace

std::vector<double> resample_rational(const std::vector<double>& x, i64 l, i64 m) {
  require_arg(l > 0 && m > 0, "resample: factors must be positive");
  const i64 n = static_cast<i64>(x.size());
  if (n == 0) return {};
  if (l == m) return x;

  const double ratio = static_cast<double>(l) / static_cast<double>(m);
  const double cutoff = 0.5 * std::min(1.0, ratio) * 0.945;
  const double half_width = 16.0 / std::min(1.0, ratio);  // in input samples

  const i64 out_n = (n * l + m - 1) / m;
  std::vector<double> y(static_cast<std::size_t>(out_n), 0.0);
  for (i64 i = 0; i < out_n; ++i) {
    const double t = static_cast<double>(i) * m / l;
    const i64 j0 = std::max<i64>(0, static_cast<i64>(std::ceil(t - half_width)));
    const i64 j1 = std::min<i64>(n - 1, static_cast<i64>(std::floor(t + half_width)));
    double acc = 0.0;
    for (i64 j = j0; j <= j1; ++j) {
      const double tau = t - static_cast<double>(j);
      const double wnd = 0.5 * (1.0 + std::cos(kPi * tau / half_width));
      acc += x[static_cast<std::size_t>(j)] * 2.0 * cutoff * sinc(2.0 * cutoff * tau) * wnd;
    }
    y[static_cast<std::size_t>(i)] = acc;
  }
  return y;
}

Waveform resample(const Waveform& w, int new_rate) {
  require_arg(w.rate > 0 && new_rate > 0, "resample: rates must be positive");
  if (w.rate == new_rate) return w;
  const i64 g = std::gcd(static_cast<i64>(w.rate), static_cast<i64>(new_rate));
  Waveform out;
  out.rate = new_rate;
  out.samples = resample_rational(w.samples, new_rate / g, w.rate / g);
  return out;
}

std::vector<double> time_stretch(const std::vector<double>& x, double factor) {
  require_arg(factor > 0.0, "time_stretch: factor must be positive");
  const i64 n = static_cast<i64>(x.size());
  const i64 out_n = static_cast<i64>(std::llround(static_cast<double>(n) * factor));
  if (n == 0 || out_n == 0) return std::vector<double>(static_cast<std::size_t>(out_n), 0.0);
  if (std::fabs(factor - 1.0) < 1e-9) {
    std::vector<double> y = x;
    y.resize(static_cast<std::size_t>(out_n), 0.0);
    return y;
  }

  const i64 win = std::min<i64>(512, std::max<i64>(64, n / 4));
  const i64 hop = win / 2;
  const i64 search = hop / 4;

  std::vector<double> window(static_cast<std::size_t>(win));
  for (i64 i = 0; i < win; ++i)
    window[static_cast<std::size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / win));

  auto sample = [&](i64 i) { return (i >= 0 && i < n) ? x[static_cast<std::size_t>(i)] : 0.0; };

  std::vector<double> acc(static_cast<std::size_t>(out_n + win), 0.0);
  std::vector<double> norm(static_cast<std::size_t>(out_n + win), 0.0);

  i64 prev_src = -1;
  for (i64 o = 0; o * hop < out_n; ++o) {
    const i64 out_pos = o * hop;
    const i64 ideal = static_cast<i64>(std::llround(static_cast<double>(out_pos) / factor));
    i64 src = ideal;
    if (prev_src >= 0) {
      // align with the natural continuation of the previous frame
      const i64 natural = prev_src + hop;
      double best = -1e300;
      i64 best_d = 0;
      for (i64 d = -search; d <= search; ++d) {
        const i64 cand = ideal + d;
        double score = 0.0;
        for (i64 i = 0; i < win; i += 4) score += sample(cand + i) * sample(natural + i);
        if (score > best) {
          best = score;
          best_d = d;
        }
      }
      src = ideal + best_d;
    }
    for (i64 i = 0; i < win; ++i) {
      const std::size_t oi = static_cast<std::size_t>(out_pos + i);
      if (oi >= acc.size()) break;
      const double wv = window[static_cast<std::size_t>(i)];
      acc[oi] += sample(src + i) * wv;
      norm[oi] += wv * wv;
    }
    prev_src = src;
  }

  std::vector<double> y(static_cast<std::size_t>(out_n));
  for (i64 i = 0; i < out_n; ++i) {
    const std::size_t ii = static_cast<std::size_t>(i);
    y[ii] = norm[ii] > 1e-9 ? acc[ii] / norm[ii] : 0.0;
  }
  return y;
}

}  // namespace pvc::dsp
