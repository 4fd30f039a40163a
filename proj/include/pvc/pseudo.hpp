#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pvc/corpus.hpp"
#include "pvc/model/net.hpp"

namespace pvc::pseudo {

// One teacher-converted variant of a source utterance, with provenance.
struct PseudoEntry {
  std::string source_id;
  std::string pseudo_path;  // relative to the pseudo root
  std::string reference_id;
  std::string reference_speaker;
  u64 seed = 0;             // per-source generation seed
  std::string teacher_tag;

  bool operator==(const PseudoEntry&) const = default;
};

struct PseudoSet {
  std::string source_id;
  std::vector<PseudoEntry> entries;

  bool operator==(const PseudoSet&) const = default;
};

// A loaded teacher model plus the checkpoint identity stamped into every
// entry it produces.
struct TeacherHandle {
  std::shared_ptr<model::SynthModel> net;
  std::shared_ptr<model::ContentBackend> content;
  std::shared_ptr<model::SpeakerBackend> speaker;
  std::string tag;
};

// Converts `source` against n references drawn from other speakers in the
// train split (distinct speakers without replacement while the pool lasts),
// writes pseudo/<tag>/<source_id>/<k>.wav under out_root, and returns the
// set. Audio is trimmed/zero-padded to the source's exact sample count. A
// failed conversion is retried once with a different reference.
PseudoSet generate_pseudo_set(const TeacherHandle& t, const corpus::UtteranceRecord& source,
                              const corpus::Manifest& m, i64 n, Rng& rng,
                              const std::string& out_root);

// Runs generate_pseudo_set over every train-split utterance, each with its
// own seed derived from (global_seed, source_id), ordered by source_id.
std::vector<PseudoSet> generate_pseudo_corpus(
    const TeacherHandle& t, const corpus::Manifest& m, i64 n, u64 global_seed,
    const std::string& out_root,
    const std::function<void(const std::string&)>& progress = nullptr);

// Line-delimited records with keys exactly {source_id, pseudo_path,
// reference_id, reference_speaker, seed, teacher_tag}. Writing requires all
// audio present; reading re-checks existence and, when expected_n >= 0,
// that every set holds exactly expected_n entries.
void write_pseudo_manifest(const std::vector<PseudoSet>& sets, const std::string& path);
std::vector<PseudoSet> read_pseudo_manifest(const std::string& path, i64 expected_n = -1);

// Uniform draw from a non-empty set.
const PseudoEntry& sample_pseudo(const PseudoSet& s, Rng& rng);

}  // namespace pvc::pseudo
