#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pvc/trainer/config.hpp"

namespace pvc::cli {

// One parsed invocation. Unknown commands and config keys are rejected
// before any side effect.
struct Command {
  std::string name;  // prepare | train-teacher | gen-pseudo | train | convert | eval | tsne
  std::string config_path;             // empty = built-in defaults
  std::vector<std::string> overrides;  // key=value pairs from --set
  std::string profile_flag;            // empty = from file / default
  std::optional<u64> seed_flag;
};

// Fixed artifact locations under the work directory. Each stage owns exactly
// one of these and never rewrites another stage's outputs.
struct WorkLayout {
  std::string raw_synth;        // prepare: synthesized toy corpus input
  std::string corpus_dir;       // prepare: ingested audio
  std::string manifest;         // prepare: corpus manifest
  std::string perturb_cache;    // prepare: perturbation variants
  std::string teacher_dir;      // train-teacher
  std::string teacher_ckpt;
  std::string pseudo_dir;       // gen-pseudo
  std::string pseudo_manifest;
  std::string student_dir;      // train
  std::string student_ckpt;
  std::string converted_dir;    // convert
  std::string eval_dir;         // eval
  std::string tsne_dir;         // tsne
  std::string runs_dir;         // per-invocation run directories
};

WorkLayout work_layout(const std::string& work_dir);

// Executes one stage. Exit codes: 0 success, 1 usage or configuration
// problems, 2 missing prerequisites or runtime failures (single-line error
// on stderr naming the missing path).
int run_command(const Command& cmd);

// argv front end around run_command.
int run_cli(int argc, const char* const* argv);

}  // namespace pvc::cli
