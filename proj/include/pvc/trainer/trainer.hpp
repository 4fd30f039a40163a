#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pvc/audio.hpp"
#include "pvc/corpus.hpp"
#include "pvc/dsp/features_var.hpp"
#include "pvc/losses.hpp"
#include "pvc/model/backends.hpp"
#include "pvc/model/net.hpp"
#include "pvc/nn/adamw.hpp"
#include "pvc/pseudo.hpp"
#include "pvc/rng.hpp"
#include "pvc/trainer/config.hpp"

namespace pvc::trainer {

// One training example. Waveforms are padded to a whole number of frames
// (at least segment_frames of them), so the crop window always fits;
// grid_frames counts the frames that carry real signal.
struct BatchItem {
  std::string source_id;
  Waveform content_input;
  Waveform speaker_input;
  Waveform target_waveform;
  i64 crop_start_frame = 0;
  i64 grid_frames = 0;
  Tensor speaker_emb;  // optional cache, (d_spk); empty = embed on the fly
};

struct SelectedInputs {
  Waveform content;
  Waveform speaker;
  bool speaker_substituted = false;  // the alpha draw fired
  std::string content_choice;        // provenance of the content input
  std::string speaker_choice;        // utterance the speaker encoder sees
};

struct DataContext {
  const corpus::Manifest* manifest = nullptr;
  const std::map<std::string, pseudo::PseudoSet>* pseudo_sets = nullptr;
  std::string pseudo_root;   // pseudo_path entries resolve against this
  std::string perturb_root;  // cache of perturbed variants
  i64 n_perturb = 4;
  u64 perturb_seed_base = 0;
};

// Seed of cached variant k of one utterance. prepare writes the cache with
// the same derivation the trainer reads it with.
u64 perturb_variant_seed(u64 base, const std::string& utterance_id, i64 k);

void generate_perturb_cache(const corpus::Manifest& m, const std::string& method, i64 n_variants,
                            u64 base_seed, const std::string& cache_root,
                            const std::function<void(const std::string&)>& progress = nullptr);

// Decides what the content encoder and the speaker encoder see for one
// source utterance. The reconstruction target is always the source itself;
// only the two encoder inputs are ever substituted. Draw order is fixed:
// content choice first, then the speaker-sampling coin.
SelectedInputs select_inputs(const corpus::UtteranceRecord& rec, const pseudo::PseudoSet* set,
                             const std::string& perturbation, double alpha,
                             const DataContext& ctx, Rng& rng, i64* speaker_fallbacks = nullptr);

// Pads content/target to the frame grid (zero-filling short grids up to
// segment_frames) and draws a uniform crop start so one segment_frames
// window indexes content features and target spectrograms alike.
BatchItem crop_segment(const std::string& source_id, const SelectedInputs& sel,
                       const Waveform& target, i64 hop, i64 segment_frames, Rng& rng);

struct TrainContext {
  model::SynthModel* net = nullptr;
  model::DiscriminatorBank* disc = nullptr;
  nn::AdamW* opt_g = nullptr;
  nn::AdamW* opt_d = nullptr;
  const model::ContentBackend* content = nullptr;
  const model::SpeakerBackend* speaker = nullptr;
  const dsp::FeatureExtractor* features = nullptr;
  losses::LossWeights weights;
  i64 segment_frames = 32;
  u64 step = 0;  // completed optimization steps; incremented here
};

// One alternating update: discriminator first, then generator, both on the
// same batch. Throws FatalError when any loss term goes non-finite.
losses::LossBreakdown training_step(const std::vector<BatchItem>& batch, TrainContext& ctx,
                                    Rng& rng);

struct Backends {
  std::shared_ptr<model::ContentBackend> content;
  std::shared_ptr<model::SpeakerBackend> speaker;
};

Backends make_backends(const PipelineConfig& cfg);

struct TrainOutcome {
  std::string checkpoint_path;
  std::vector<losses::LossBreakdown> trace;  // steps run by this invocation
  i64 start_step = 0;
  i64 end_step = 0;
  i64 speaker_substitutions = 0;
  i64 speaker_selections = 0;
  u64 model_fingerprint = 0;
};

// Teacher loop: content input is a cached signal perturbation of the source
// (or the source itself); speaker sampling stays off unless explicitly
// enabled for experiments.
TrainOutcome train_teacher(const PipelineConfig& cfg, const corpus::Manifest& m,
                           const std::string& run_dir, const std::string& perturb_root,
                           const std::function<void(const std::string&)>& log = nullptr);

// Student loop: content input drawn from the pseudo sets (or a perturbation
// for ablations), speaker input substituted with probability alpha.
TrainOutcome train_pseudovc(const PipelineConfig& cfg, const corpus::Manifest& m,
                            const std::string& run_dir, const std::string& pseudo_manifest,
                            const std::function<void(const std::string&)>& log = nullptr);

// Rebuilds a model plus backends from a checkpoint, tagged by its parameter
// fingerprint. Used to drive pseudo generation and conversion.
pseudo::TeacherHandle load_model_handle(const PipelineConfig& cfg, const std::string& ckpt_path);

}  // namespace pvc::trainer
