#include <cmath>
#include <filesystem>
#include <fstream>

#include "pvc/corpus.hpp"
#include "pvc/hash.hpp"

namespace fs = std::filesystem;

namespace pvc::corpus {
namespace {

constexpr double kPi = 3.14159265358979323846;

const char* kVocab[] = {"ana",  "belo", "cedi", "dova", "elun", "fira", "golo", "hem",
                        "iska", "jor",  "kela", "lumo", "mira", "nodo", "ora",  "pell"};
constexpr int kVocabSize = 16;

struct SpeakerVoice {
  double f0_base;
  // two resonance bumps over a decaying envelope
  double c1, w1, g1;
  double c2, w2, g2;
  double tilt;

  double envelope(double f) const {
    auto bump = [](double f, double c, double w, double g) {
      const double d = (f - c) / w;
      return g * std::exp(-0.5 * d * d);
    };
    return std::exp(-f / tilt) * (1.0 + bump(f, c1, w1, g1) + bump(f, c2, w2, g2));
  }
};

SpeakerVoice draw_voice(int index, Rng& rng) {
  SpeakerVoice v;
  v.f0_base = 100.0 + 28.0 * index + rng.uniform(-5.0, 5.0);
  v.c1 = rng.uniform(350.0, 900.0);
  v.w1 = rng.uniform(80.0, 200.0);
  v.g1 = rng.uniform(1.5, 4.0);
  v.c2 = rng.uniform(1200.0, 2600.0);
  v.w2 = rng.uniform(150.0, 400.0);
  v.g2 = rng.uniform(1.0, 3.0);
  v.tilt = rng.uniform(2200.0, 3800.0);
  return v;
}

}  // namespace

void make_toy_corpus(const std::string& root, const ToyCorpusSpec& spec) {
  require_arg(spec.n_speakers >= 1 && spec.utts_per_speaker >= 1, "toy corpus: need speakers and utterances");
  require_arg(spec.rate > 0, "toy corpus: rate must be positive");
  require_arg(spec.min_seconds > 0 && spec.max_seconds >= spec.min_seconds, "toy corpus: bad duration range");
  Rng global(mix64(spec.seed));

  for (int s = 0; s < spec.n_speakers; ++s) {
    char spk_name[16];
    std::snprintf(spk_name, sizeof(spk_name), "s%02d", s);
    Rng spk_rng = global.fork(std::string("spk/") + spk_name);
    const SpeakerVoice voice = draw_voice(s, spk_rng);
    const fs::path dir = fs::path(root) / spk_name;
    fs::create_directories(dir);

    for (int u = 0; u < spec.utts_per_speaker; ++u) {
      char utt_name[16];
      std::snprintf(utt_name, sizeof(utt_name), "u%02d", u);
      Rng rng = spk_rng.fork(std::string("utt/") + utt_name);

      const double seconds = rng.uniform(spec.min_seconds, spec.max_seconds);
      const i64 n = (i64)std::llround(seconds * spec.rate);
      const int n_words = 3 + (int)rng.uniform_int(4);
      std::string text;
      for (int w = 0; w < n_words; ++w) {
        if (w) text += ' ';
        text += kVocab[rng.uniform_int(kVocabSize)];
      }

      // per-word amplitude gates with short gaps
      std::vector<double> gate((size_t)n, 0.0);
      const double gap = 0.06;
      const double word_len = (seconds - gap * (n_words + 1)) / n_words;
      for (int w = 0; w < n_words; ++w) {
        const double t0 = gap + w * (word_len + gap);
        const i64 a = (i64)(t0 * spec.rate);
        const i64 b = std::min<i64>(n, (i64)((t0 + word_len) * spec.rate));
        for (i64 i = a; i < b; ++i) {
          const double u01 = (double)(i - a) / (double)std::max<i64>(1, b - a);
          gate[(size_t)i] = 0.5 - 0.5 * std::cos(2.0 * kPi * u01);
        }
      }

      const double f_mod = rng.uniform(1.0, 3.0);
      const double depth = rng.uniform(0.04, 0.10);
      const double phase0 = rng.uniform(0.0, 2.0 * kPi);

      Waveform wav;
      wav.rate = spec.rate;
      wav.samples.assign((size_t)n, 0.0);
      double phase = 0.0;
      const double nyq_guard = 0.45 * spec.rate;
      for (i64 i = 0; i < n; ++i) {
        const double t = (double)i / spec.rate;
        const double f0 = voice.f0_base * (1.0 + depth * std::sin(2.0 * kPi * f_mod * t + phase0));
        phase += 2.0 * kPi * f0 / spec.rate;
        double x = 0.0;
        for (int k = 1; k * f0 < nyq_guard && k <= 40; ++k)
          x += voice.envelope(k * f0) / k * std::sin(k * phase);
        wav.samples[(size_t)i] = x * gate[(size_t)i];
      }
      const double m = max_abs(wav);
      if (m > 0) {
        for (auto& x : wav.samples) x *= 0.7 / m;
      }

      write_wav((dir / (std::string(utt_name) + ".wav")).string(), wav);
      std::ofstream txt(dir / (std::string(utt_name) + ".txt"));
      txt << text << "\n";
    }
  }
}

}  // namespace pvc::corpus
