#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pvc/losses.hpp"
#include "pvc/model/config.hpp"

namespace pvc::trainer {

struct TrainSettings {
  double alpha = 0.01;
  i64 n_pseudo = 5;
  i64 batch_size = 4;
  i64 segment_frames = 32;
  i64 total_steps = 500;
  double lr = 2e-4;
  double beta1 = 0.8;
  double beta2 = 0.99;
  double eps = 1e-9;
  double weight_decay = 0.01;
  double lr_decay = 0.999875;
  std::string perturbation = "pseudo";  // none | vtlp | nansy | sr | pseudo
  i64 checkpoint_every = 100;
  i64 log_every = 10;
};

struct DataSettings {
  std::string raw_dir;
  bool synthetic = false;
  i64 synthetic_speakers = 4;
  i64 synthetic_utts = 4;
  double train_frac = 1.0;
  double val_frac = 0.0;
  double test_frac = 0.0;
  i64 n_perturb = 4;  // cached perturbation variants per utterance
};

struct EvalSettings {
  i64 n_sources = 4;
  std::vector<std::string> target_speakers;  // empty = every speaker
  std::string split = "auto";                // auto | train | val | test
  std::string asr = "mock";                  // mock | http | command
  std::string asr_endpoint;
  std::string asr_command;
  i64 asr_timeout_ms = 10000;
  i64 asr_retries = 2;
  i64 asr_backoff_ms = 100;
  i64 mock_sub_every = 0;  // mock substitutes every k-th token; 0 = echo
  double temperature = 0.0;
  std::string checkpoint;  // empty = the student checkpoint in the work dir
};

struct PipelineConfig {
  std::string profile = "toy";
  u64 seed = 1;
  std::string work_dir = "pvc_work";

  DataSettings data;
  TrainSettings train;
  std::string teacher_perturbation = "none";
  bool teacher_speaker_sampling = false;
  losses::LossWeights weights;
  model::ModelConfig model;

  std::string content_command;  // empty = toy backend
  i64 content_layer = 0;
  double content_frame_ms = 20.0;
  std::string speaker_command;

  EvalSettings eval;

  double tsne_perplexity = 30.0;
  i64 tsne_iters = 1000;
  u64 tsne_seed = 0;

  std::string convert_source, convert_reference, convert_out, convert_checkpoint;
  std::string run_dir;  // empty = derive from config hash + timestamp

  // canonical flat key=value view; hash and snapshots derive from it
  std::map<std::string, std::string> to_map() const;
  u64 hash() const;
  void validate() const;  // throws listing every problem at once

  static PipelineConfig defaults(const std::string& profile);
};

// Layered load: profile defaults, then the config file, then --set
// overrides. Unknown keys, unparsable values, and range violations are all
// reported together.
PipelineConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                           const std::string& profile_flag = "",
                           std::optional<u64> seed_flag = std::nullopt);

// `key = value` lines, '#' comments; returns insertion-ordered pairs.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text,
                                                                   const std::string& origin);

void write_config_snapshot(const PipelineConfig& cfg, const std::string& path);

}  // namespace pvc::trainer
