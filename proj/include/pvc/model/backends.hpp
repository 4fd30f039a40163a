#pragma once

#include <memory>
#include <string>

#include "pvc/audio.hpp"
#include "pvc/dsp/stft.hpp"
#include "pvc/tensor.hpp"

namespace pvc::model {

struct ContentFeatures {
  Tensor values;             // (n_frames, d_content)
  double frame_period_ms = 0.0;
  i64 n_frames() const { return values.dim(0); }
};

struct SpeakerEmbedding {
  Tensor values;  // (d_spk), unit L2 norm
};

// Frozen feature extractors. Both toy implementations are deterministic
// functions of their seed; the command variants shell out to an external
// model.
class ContentBackend {
 public:
  virtual ~ContentBackend() = default;
  virtual ContentFeatures extract(const Waveform& w) const = 0;
  virtual int d_content() const = 0;
  virtual int rate() const = 0;
};

class SpeakerBackend {
 public:
  virtual ~SpeakerBackend() = default;
  virtual SpeakerEmbedding embed(const Waveform& w) const = 0;
  virtual int d_spk() const = 0;
  virtual int rate() const = 0;
};

// Mel frames through a fixed seeded projection; one row per hop.
class ToyContentBackend : public ContentBackend {
 public:
  ToyContentBackend(const dsp::StftConfig& stft, const dsp::MelConfig& mel, int d_content, u64 seed);
  ContentFeatures extract(const Waveform& w) const override;
  int d_content() const override { return d_content_; }
  int rate() const override { return stft_.rate; }

 private:
  dsp::StftConfig stft_;
  dsp::MelConfig mel_;
  int d_content_;
  Tensor proj_;  // (n_mels, d_content)
};

// Long-term average log spectrum, mean-removed, seeded projection, unit norm.
class ToySpeakerBackend : public SpeakerBackend {
 public:
  ToySpeakerBackend(const dsp::StftConfig& stft, int d_spk, u64 seed);
  SpeakerEmbedding embed(const Waveform& w) const override;
  int d_spk() const override { return d_spk_; }
  int rate() const override { return stft_.rate; }

 private:
  dsp::StftConfig stft_;
  int d_spk_;
  Tensor proj_;  // (bins, d_spk)
};

// Runs `command <wav> <out.bin> <layer>`; the output file holds float64
// rows of d_content values. Unavailable commands are fatal with a hint.
class CommandContentBackend : public ContentBackend {
 public:
  CommandContentBackend(std::string command, int d_content, int rate, double frame_period_ms,
                        int layer);
  ContentFeatures extract(const Waveform& w) const override;
  int d_content() const override { return d_content_; }
  int rate() const override { return rate_; }

 private:
  std::string command_;
  int d_content_;
  int rate_;
  double frame_period_ms_;
  int layer_;
};

class CommandSpeakerBackend : public SpeakerBackend {
 public:
  CommandSpeakerBackend(std::string command, int d_spk, int rate);
  SpeakerEmbedding embed(const Waveform& w) const override;
  int d_spk() const override { return d_spk_; }
  int rate() const override { return rate_; }

 private:
  std::string command_;
  int d_spk_;
  int rate_;
};

// Content and spectrogram framings can disagree by an edge frame or two;
// both sides are trimmed to the shorter. Larger gaps indicate a config
// mismatch and are rejected.
i64 aligned_frames(i64 content_frames, i64 spec_frames);

SpeakerEmbedding normalize_embedding(const Tensor& raw);

}  // namespace pvc::model
