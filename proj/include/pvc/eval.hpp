#pragma once

#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pvc/corpus.hpp"
#include "pvc/model/backends.hpp"
#include "pvc/pseudo.hpp"
#include "pvc/rng.hpp"
#include "pvc/tensor.hpp"

namespace pvc::eval {

struct EvalPair {
  std::string source_id;
  std::string target_speaker_id;
  std::string reference_id;    // utterance standing in for the target speaker
  std::string converted_path;  // filled once conversion has run
};

// For every target speaker: one reference utterance plus n_sources source
// utterances drawn from other speakers, all within the given split. Yields
// exactly n_sources * |target_speakers| pairs.
std::vector<EvalPair> build_eval_set(const corpus::Manifest& m, const std::string& split,
                                     i64 n_sources,
                                     const std::vector<std::string>& target_speakers, Rng& rng);

// Cosine similarity of speaker embeddings, normalized on both sides and
// clamped into [-1, 1].
double secs(const Tensor& a, const Tensor& b);

// --- text and WER ---------------------------------------------------------

// Lowercase, strip punctuation, collapse whitespace; returns tokens.
std::vector<std::string> normalize_text(const std::string& s);

i64 word_edit_distance(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

struct WerStats {
  i64 total_edits = 0;
  i64 total_ref_tokens = 0;
  double wer = 0.0;
  std::vector<i64> per_pair_edits;
  std::vector<i64> per_pair_ref_tokens;
};

// Corpus-level WER: summed edits over summed reference tokens.
WerStats corpus_wer(const std::vector<std::vector<std::string>>& refs,
                    const std::vector<std::vector<std::string>>& hyps);

// --- ASR clients -----------------------------------------------------------

// Retryable failure (connectivity, 5xx, command hiccup).
struct AsrTransient : std::runtime_error {
  explicit AsrTransient(const std::string& msg) : std::runtime_error(msg) {}
};

class AsrClient {
 public:
  virtual ~AsrClient() = default;
  // hint carries the stored ground-truth transcript; only the mock reads it
  virtual std::string transcribe(const Waveform& w, const std::string& hint) = 0;
  virtual std::string describe() const = 0;
};

// Echoes the hint. With sub_every = k > 0 every k-th token (counted across
// calls) is replaced, so corpus WER is exactly 1/k on k-divisible corpora.
class MockAsr : public AsrClient {
 public:
  explicit MockAsr(i64 sub_every = 0) : sub_every_(sub_every) {}
  void fail_next(int n) { fail_budget_ = n; }
  std::string transcribe(const Waveform& w, const std::string& hint) override;
  std::string describe() const override;

 private:
  i64 sub_every_;
  i64 token_counter_ = 0;
  int fail_budget_ = 0;
};

// POSTs 16-bit PCM WAV bytes to an HTTP endpoint and reads the transcript
// from the response body.
class HttpAsr : public AsrClient {
 public:
  HttpAsr(const std::string& endpoint, i64 timeout_ms);
  std::string transcribe(const Waveform& w, const std::string& hint) override;
  std::string describe() const override;

 private:
  std::string host_;
  int port_ = 80;
  std::string path_ = "/transcribe";
  i64 timeout_ms_ = 10000;
};

// Runs `command <in.wav> <out.txt>` and reads the transcript back.
class CommandAsr : public AsrClient {
 public:
  explicit CommandAsr(std::string command) : command_(std::move(command)) {}
  std::string transcribe(const Waveform& w, const std::string& hint) override;
  std::string describe() const override;

 private:
  std::string command_;
};

struct TranscribeOutcome {
  std::vector<std::optional<std::string>> texts;  // nullopt = retries exhausted
  i64 failed = 0;
};

// Per-item retry with exponential backoff on AsrTransient.
TranscribeOutcome transcribe_batch(const std::vector<Waveform>& waves,
                                   const std::vector<std::string>& hints, AsrClient& client,
                                   i64 retries, i64 backoff_ms);

// --- embedding projection ---------------------------------------------------

// Exact t-SNE to 2 dimensions; perplexity is clamped to (n - 1) / 3.
// Deterministic in (embeddings, seed). Needs at least two points.
Tensor project_embeddings(const Tensor& emb, double perplexity, i64 iters, u64 seed);

// SVG scatter colored by label plus a plain-text coordinate table.
void write_projection(const Tensor& xy, const std::vector<std::string>& labels,
                      const std::string& svg_path, const std::string& txt_path);

// --- statistics -------------------------------------------------------------

struct Ci {
  double lo = 0.0;
  double hi = 0.0;
};

// 95% percentile bootstrap over the mean.
Ci bootstrap_ci(const std::vector<double>& values, i64 n_resamples, u64 seed);

// Mean pairwise Euclidean distance between embedding rows; 0 for n < 2.
double mean_pairwise_distance(const Tensor& emb);

// --- report -----------------------------------------------------------------

struct PairResult {
  EvalPair pair;
  double secs = 0.0;
  i64 wer_edits = 0;
  i64 ref_tokens = 0;
  bool asr_ok = true;
};

struct EvalReport {
  std::vector<PairResult> pairs;
  double mean_secs = 0.0;
  Ci secs_ci;
  double wer = 0.0;
  i64 asr_failures = 0;
  i64 wer_pairs = 0;  // pairs that contributed reference tokens
  std::map<std::string, double> diversity;  // group -> mean pairwise distance
  std::string normalization;
  std::map<std::string, std::string> config_snapshot;
};

// report.jsonl (one machine-readable row per pair), summary.json and a
// short human-readable summary.txt under dir.
void write_eval_report(const EvalReport& report, const std::string& dir);

// Aggregates per-pair SECS/WER rows into the corpus-level report fields.
void finalize_report(EvalReport& report, u64 seed);

}  // namespace pvc::eval
