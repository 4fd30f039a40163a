#include "pvc/model/backends.hpp"

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "pvc/hash.hpp"
#include "pvc/rng.hpp"

namespace fs = std::filesystem;

namespace pvc::model {
namespace {

Tensor seeded_projection(i64 rows, i64 cols, u64 seed) {
  Rng rng(mix64(seed));
  Tensor p({rows, cols});
  const double s = 1.0 / std::sqrt((double)rows);
  for (auto& v : p.data) v = s * rng.normal();
  return p;
}

// Framing requires whole hops; zero-pad the tail.
Waveform pad_to_hop(const Waveform& w, i64 hop) {
  Waveform out = w;
  const i64 rem = (i64)out.samples.size() % hop;
  if (rem) out.samples.resize(out.samples.size() + (size_t)(hop - rem), 0.0);
  require_arg(!out.samples.empty(), "backend: empty waveform");
  return out;
}

}  // namespace

i64 aligned_frames(i64 content_frames, i64 spec_frames) {
  require_arg(content_frames > 0 && spec_frames > 0, "alignment: empty feature sequence");
  if (std::llabs(content_frames - spec_frames) > 2) {
    fail_arg("alignment: content frames (" + std::to_string(content_frames) +
             ") and spectrogram frames (" + std::to_string(spec_frames) +
             ") differ by more than 2; check framing config");
  }
  return std::min(content_frames, spec_frames);
}

SpeakerEmbedding normalize_embedding(const Tensor& raw) {
  require_arg(raw.rank() == 1 && raw.numel() > 0, "embedding must be a non-empty vector");
  double norm = 0.0;
  for (double v : raw.data) norm += v * v;
  norm = std::sqrt(norm);
  SpeakerEmbedding e;
  e.values = raw;
  if (norm < 1e-12) {
    e.values.data[0] = 1.0;  // degenerate all-zero stats pin to a fixed axis
    for (size_t i = 1; i < e.values.data.size(); ++i) e.values.data[i] = 0.0;
  } else {
    for (auto& v : e.values.data) v /= norm;
  }
  return e;
}

ToyContentBackend::ToyContentBackend(const dsp::StftConfig& stft, const dsp::MelConfig& mel,
                                     int d_content, u64 seed)
    : stft_(stft), mel_(mel), d_content_(d_content) {
  stft_.validate();
  require_arg(d_content > 0, "content backend: d_content must be positive");
  proj_ = seeded_projection(mel.n_mels, d_content, derive_seed(seed, "content_proj"));
}

ContentFeatures ToyContentBackend::extract(const Waveform& w) const {
  if (w.rate != stft_.rate)
    fail_arg("content backend: expected " + std::to_string(stft_.rate) + " Hz, got " +
             std::to_string(w.rate));
  const dsp::MelSpec mel = dsp::mel_spectrogram(pad_to_hop(w, stft_.hop), stft_, mel_);
  ContentFeatures out;
  out.frame_period_ms = 1000.0 * (double)stft_.hop / stft_.rate;
  out.values = Tensor({mel.values.dim(0), d_content_});
  // frame-wise projection: values = mel . proj
  for (i64 t = 0; t < mel.values.dim(0); ++t)
    for (i64 j = 0; j < d_content_; ++j) {
      double acc = 0.0;
      for (i64 m = 0; m < mel_.n_mels; ++m) acc += mel.values.at(t, m) * proj_.at(m, j);
      out.values.at(t, j) = acc;
    }
  return out;
}

ToySpeakerBackend::ToySpeakerBackend(const dsp::StftConfig& stft, int d_spk, u64 seed)
    : stft_(stft), d_spk_(d_spk) {
  stft_.validate();
  require_arg(d_spk > 0, "speaker backend: d_spk must be positive");
  proj_ = seeded_projection(stft_.bins(), d_spk, derive_seed(seed, "speaker_proj"));
}

SpeakerEmbedding ToySpeakerBackend::embed(const Waveform& w) const {
  if (w.rate != stft_.rate)
    fail_arg("speaker backend: expected " + std::to_string(stft_.rate) + " Hz, got " +
             std::to_string(w.rate));
  const dsp::LinSpec lin = dsp::linear_spectrogram(pad_to_hop(w, stft_.hop), stft_);
  const i64 frames = lin.values.dim(0), bins = lin.values.dim(1);
  std::vector<double> ltas((size_t)bins, 0.0);
  for (i64 t = 0; t < frames; ++t)
    for (i64 b = 0; b < bins; ++b) ltas[(size_t)b] += lin.values.at(t, b);
  double mean = 0.0;
  for (i64 b = 0; b < bins; ++b) {
    ltas[(size_t)b] = std::log(ltas[(size_t)b] / (double)frames + 1e-8);
    mean += ltas[(size_t)b];
  }
  mean /= (double)bins;
  Tensor raw({(i64)d_spk_});
  for (i64 j = 0; j < d_spk_; ++j) {
    double acc = 0.0;
    for (i64 b = 0; b < bins; ++b) acc += (ltas[(size_t)b] - mean) * proj_.at(b, j);
    raw.data[(size_t)j] = acc;
  }
  return normalize_embedding(raw);
}

namespace {

// Shared shell-out plumbing: write wav to a temp file, run the command,
// read back float64 values.
std::vector<double> run_feature_command(const std::string& command, const Waveform& w,
                                        const std::string& extra_arg, const char* kind) {
  if (command.empty())
    fail(std::string(kind) +
         " backend: no command configured; set the backend command or use the toy backend");
  const fs::path dir = fs::temp_directory_path() / "pvc_backend";
  fs::create_directories(dir);
  static std::atomic<u64> counter{0};
  const u64 tag = counter.fetch_add(1);
  const fs::path wav = dir / ("in_" + std::to_string(::getpid()) + "_" + std::to_string(tag) + ".wav");
  const fs::path out = dir / ("out_" + std::to_string(::getpid()) + "_" + std::to_string(tag) + ".bin");
  write_wav(wav.string(), w);
  const std::string cmdline = command + " " + wav.string() + " " + out.string() +
                              (extra_arg.empty() ? "" : " " + extra_arg);
  const int rc = std::system(cmdline.c_str());
  if (rc != 0) {
    fs::remove(wav);
    fail(std::string(kind) + " backend: command failed (exit " + std::to_string(rc) +
         "): " + cmdline + "; check that the backend is installed and on PATH");
  }
  std::ifstream in(out, std::ios::binary);
  if (!in) fail(std::string(kind) + " backend: command produced no output file: " + out.string());
  std::vector<double> values;
  double v;
  while (in.read(reinterpret_cast<char*>(&v), sizeof(v))) values.push_back(v);
  fs::remove(wav);
  fs::remove(out);
  return values;
}

}  // namespace

CommandContentBackend::CommandContentBackend(std::string command, int d_content, int rate,
                                             double frame_period_ms, int layer)
    : command_(std::move(command)),
      d_content_(d_content),
      rate_(rate),
      frame_period_ms_(frame_period_ms),
      layer_(layer) {
  require_arg(d_content > 0 && rate > 0 && frame_period_ms > 0, "content backend: bad config");
}

ContentFeatures CommandContentBackend::extract(const Waveform& w) const {
  if (w.rate != rate_)
    fail_arg("content backend: expected " + std::to_string(rate_) + " Hz, got " +
             std::to_string(w.rate));
  std::vector<double> values = run_feature_command(command_, w, std::to_string(layer_), "content");
  if (values.empty() || values.size() % (size_t)d_content_ != 0)
    fail("content backend: output size " + std::to_string(values.size()) +
         " is not a multiple of d_content " + std::to_string(d_content_));
  ContentFeatures out;
  out.frame_period_ms = frame_period_ms_;
  out.values = Tensor({(i64)(values.size() / (size_t)d_content_), (i64)d_content_});
  out.values.data = std::move(values);
  return out;
}

CommandSpeakerBackend::CommandSpeakerBackend(std::string command, int d_spk, int rate)
    : command_(std::move(command)), d_spk_(d_spk), rate_(rate) {
  require_arg(d_spk > 0 && rate > 0, "speaker backend: bad config");
}

SpeakerEmbedding CommandSpeakerBackend::embed(const Waveform& w) const {
  if (w.rate != rate_)
    fail_arg("speaker backend: expected " + std::to_string(rate_) + " Hz, got " +
             std::to_string(w.rate));
  std::vector<double> values = run_feature_command(command_, w, "", "speaker");
  if ((i64)values.size() != (i64)d_spk_)
    fail("speaker backend: expected " + std::to_string(d_spk_) + " values, got " +
         std::to_string(values.size()));
  Tensor raw({(i64)d_spk_});
  raw.data = std::move(values);
  return normalize_embedding(raw);
}

}  // namespace pvc::model
