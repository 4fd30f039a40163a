#pragma once

#include <map>
#include <string>
#include <vector>

#include "pvc/audio.hpp"
#include "pvc/dsp/resample.hpp"
#include "pvc/rng.hpp"

namespace pvc::corpus {

struct UtteranceRecord {
  std::string utterance_id;
  std::string speaker_id;
  std::string path;  // relative to the manifest root, forward slashes
  int sample_rate = 0;
  i64 n_samples = 0;
  std::string split = "train";  // train | val | test

  bool operator==(const UtteranceRecord&) const = default;
};

struct Manifest {
  std::string root;
  std::vector<UtteranceRecord> records;
  std::map<std::string, std::vector<std::string>> speakers;  // derived grouping

  void rebuild_speakers();
  void validate() const;

  bool has_id(const std::string& utterance_id) const;
  const UtteranceRecord& by_id(const std::string& utterance_id) const;
  std::string resolve(const UtteranceRecord& r) const { return root + "/" + r.path; }

  std::vector<const UtteranceRecord*> in_split(const std::string& split) const;
};

// Line-delimited records with keys exactly {utterance_id, speaker_id, path,
// sample_rate, n_samples, split}. The reader takes the manifest's directory
// as root.
void write_manifest(const Manifest& m, const std::string& path);
Manifest read_manifest(const std::string& path);

struct IngestOptions {
  std::string layout = "speaker_dirs";  // speaker_dirs | list:<metadata file>
  int target_rate = 16000;
  i64 trim_multiple = 1;  // trim the tail so n_samples divides this
  double peak = 0.95;
};

struct IngestReport {
  i64 ingested = 0;
  std::vector<std::pair<std::string, std::string>> skipped;  // (path, reason)
  std::string summary() const;
};

// Walks src_root per options.layout, converts every readable file to mono
// 16-bit PCM at target_rate with peak <= options.peak and the tail trimmed
// to a multiple of trim_multiple, writes <speaker>/<utterance>.wav under
// out_root and returns the manifest (root = out_root). Text sidecars
// (.txt next to the audio) are copied along.
Manifest ingest_corpus(const std::string& src_root, const std::string& out_root,
                       const IngestOptions& options, IngestReport* report = nullptr);

struct SplitSpec {
  bool use_lists = false;
  std::map<std::string, std::vector<std::string>> lists;  // split -> utterance ids
  double train = 0.9;
  double val = 0.05;
  double test = 0.05;
};

// Returns a copy of m with splits assigned. Fractional specs shuffle with
// the seed; explicit lists must reference only known ids (records not
// mentioned keep their current split).
Manifest split_manifest(const Manifest& m, const SplitSpec& spec, u64 seed);

// Uniformly samples an utterance of the same speaker other than exclude_id.
// A speaker with no alternative returns the excluded record itself and
// bumps *fallback_count.
const UtteranceRecord& sample_other_utterance(const Manifest& m, const std::string& speaker_id,
                                              const std::string& exclude_id, Rng& rng,
                                              i64* fallback_count = nullptr);

using pvc::dsp::resample;

struct ToyCorpusSpec {
  int n_speakers = 4;
  int utts_per_speaker = 6;
  int rate = 16000;
  double min_seconds = 1.0;
  double max_seconds = 1.8;
  u64 seed = 1;
};

// Synthesizes a deterministic corpus of harmonic "speech" with per-speaker
// timbre and pitch, plus word-list text sidecars, in speaker_dirs layout.
void make_toy_corpus(const std::string& root, const ToyCorpusSpec& spec);

}  // namespace pvc::corpus
