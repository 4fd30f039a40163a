#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "pvc/model/backends.hpp"
#include "pvc/model/config.hpp"
#include "pvc/nn/modules.hpp"

namespace pvc::model {

using nn::Var;

struct GaussianSeq {
  Var mu;         // (B, d_z, T)
  Var log_sigma;  // (B, d_z, T)
};

// Frame-wise prior over the latent from content features.
class PriorEncoder : public nn::Module {
 public:
  PriorEncoder(const ModelConfig& cfg, Rng& rng);
  GaussianSeq forward(const Var& content) const;  // (B, d_content, T)

 private:
  int d_z_;
  nn::Conv1d pre_, mid_, proj_;
};

// Non-causal WaveNet over the linear spectrogram, conditioned on g.
class PosteriorEncoder : public nn::Module {
 public:
  PosteriorEncoder(const ModelConfig& cfg, Rng& rng);
  // returns the sampled latent and its parameters; temperature scales the
  // noise (0 gives z = mu exactly)
  std::pair<Var, GaussianSeq> forward(const Var& x_lin, const Var& g, Rng& rng,
                                      double temperature = 1.0) const;

 private:
  int d_z_;
  nn::Conv1d pre_, proj_;
  nn::WaveNet wn_;
};

// Stack of affine couplings with channel flips in between. The default
// config freezes scales at 1, so the transform is volume preserving and
// log_det is identically zero; zero-initialized heads start at identity.
class Flow : public nn::Module {
 public:
  Flow(const ModelConfig& cfg, Rng& rng);
  std::pair<Var, Var> forward(const Var& z, const Var& g) const;  // (z_p, log_det scalar)
  Var inverse(const Var& z_p, const Var& g) const;
  // per-coupling log-dets for the additivity property
  std::vector<Var> forward_logdets(const Var& z, const Var& g) const;

 private:
  struct Coupling {
    std::unique_ptr<nn::Conv1d> pre;
    std::unique_ptr<nn::WaveNet> wn;
    std::unique_ptr<nn::Conv1d> post;
  };
  Var heads(const Coupling& c, const Var& z1, const Var& g) const;
  int d_z_;
  bool mean_only_;
  std::vector<Coupling> couplings_;
};

// HiFi-GAN style upsampling generator, conditioned on g, tanh output.
class Generator : public nn::Module {
 public:
  Generator(const ModelConfig& cfg, Rng& rng);
  Var forward(const Var& z, const Var& g) const;  // (B, d_z, T) -> (B, 1, T*hop)

 private:
  struct ResBlock {
    std::vector<std::unique_ptr<nn::Conv1d>> convs;  // two per dilation
    int kernel;
    std::vector<int> dilations;
  };
  ModelConfig cfg_;
  nn::Conv1d pre_, cond_, post_;
  std::vector<std::unique_ptr<nn::ConvTranspose1d>> ups_;
  std::vector<std::vector<ResBlock>> resblocks_;  // [stage][kernel]
};

struct DiscOutput {
  std::vector<Var> logits;                  // one score map per sub-discriminator
  std::vector<std::vector<Var>> features;   // per sub-discriminator feature maps
};

class DiscriminatorBank : public nn::Module {
 public:
  DiscriminatorBank(const ModelConfig& cfg, Rng& rng);
  DiscOutput forward(const Var& w) const;  // (B, 1, T)
  i64 n_subs() const { return (i64)periods_.size() + n_scales_; }

 private:
  struct Stack {
    std::vector<std::unique_ptr<nn::Conv1d>> convs;
    std::unique_ptr<nn::Conv1d> head;
  };
  void run_stack(const Stack& s, Var x, DiscOutput& out) const;
  std::vector<int> periods_;
  int n_scales_;
  std::vector<Stack> period_stacks_, scale_stacks_;
};

// The generator-side model: prior bottleneck, posterior, flow, decoder.
class SynthModel : public nn::Module {
 public:
  SynthModel(const ModelConfig& cfg, Rng& rng);

  GaussianSeq bottleneck(const Var& content) const { return prior_.forward(content); }
  std::pair<Var, GaussianSeq> posterior(const Var& x_lin, const Var& g, Rng& rng,
                                        double temperature = 1.0) const {
    return post_.forward(x_lin, g, rng, temperature);
  }
  std::pair<Var, Var> flow_forward(const Var& z, const Var& g) const { return flow_.forward(z, g); }
  Var flow_inverse(const Var& z_p, const Var& g) const { return flow_.inverse(z_p, g); }
  std::vector<Var> flow_forward_logdets(const Var& z, const Var& g) const {
    return flow_.forward_logdets(z, g);
  }
  Var decode(const Var& z, const Var& g) const { return gen_.forward(z, g); }

  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  PriorEncoder prior_;
  PosteriorEncoder post_;
  Flow flow_;
  Generator gen_;
};

// content(source) -> prior -> flow inverse under g(reference) -> decode.
// temperature 0 takes the prior mean; rng is only touched when it is > 0.
Waveform convert(const SynthModel& model, const ContentBackend& content,
                 const SpeakerBackend& speaker, const Waveform& source, const Waveform& reference,
                 double temperature = 0.0, Rng* rng = nullptr);

// helpers shared by trainer and convert
Var content_to_var(const ContentFeatures& c, i64 n_frames);      // (1, d_content, T)
Var embedding_to_var(const SpeakerEmbedding& e);                  // (1, d_spk, 1)

}  // namespace pvc::model
