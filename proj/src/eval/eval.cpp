#include "pvc/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "pvc/hash.hpp"

namespace fs = std::filesystem;

namespace pvc::eval {

std::vector<EvalPair> build_eval_set(const corpus::Manifest& m, const std::string& split,
                                     i64 n_sources,
                                     const std::vector<std::string>& target_speakers, Rng& rng) {
  require_arg(n_sources >= 1, "build_eval_set: n_sources must be >= 1");
  require_arg(!target_speakers.empty(), "build_eval_set: no target speakers given");

  std::vector<const corpus::UtteranceRecord*> pool = m.in_split(split);
  if (pool.empty()) fail("build_eval_set: split '" + split + "' holds no utterances");
  std::sort(pool.begin(), pool.end(), [](const auto* a, const auto* b) {
    return a->utterance_id < b->utterance_id;
  });

  std::map<std::string, std::vector<const corpus::UtteranceRecord*>> by_speaker;
  for (const auto* r : pool) by_speaker[r->speaker_id].push_back(r);

  std::vector<EvalPair> pairs;
  pairs.reserve((size_t)(n_sources * (i64)target_speakers.size()));
  for (const std::string& target : target_speakers) {
    auto it = by_speaker.find(target);
    if (it == by_speaker.end() || it->second.empty())
      fail("build_eval_set: target speaker '" + target + "' has no utterances in split '" +
           split + "'");
    const auto& own = it->second;
    const corpus::UtteranceRecord* reference = own[rng.uniform_int((i64)own.size())];

    std::vector<const corpus::UtteranceRecord*> candidates;
    for (const auto* r : pool)
      if (r->speaker_id != target) candidates.push_back(r);
    if ((i64)candidates.size() < n_sources)
      fail("build_eval_set: target speaker '" + target + "' leaves only " +
           std::to_string(candidates.size()) + " candidate sources, " +
           std::to_string(n_sources) + " requested");

    std::vector<i64> order(candidates.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = (i64)i;
    rng.shuffle(order);

    for (i64 k = 0; k < n_sources; ++k) {
      EvalPair p;
      p.source_id = candidates[order[k]]->utterance_id;
      p.target_speaker_id = target;
      p.reference_id = reference->utterance_id;
      pairs.push_back(std::move(p));
    }
  }
  return pairs;
}

double secs(const Tensor& a, const Tensor& b) {
  require_arg(a.numel() == b.numel() && a.numel() > 0,
              "secs: embeddings must be non-empty and the same size");
  double na = 0.0, nb = 0.0, dot = 0.0;
  for (i64 i = 0; i < a.numel(); ++i) {
    na += a.data[i] * a.data[i];
    nb += b.data[i] * b.data[i];
    dot += a.data[i] * b.data[i];
  }
  require_arg(na > 0.0 && nb > 0.0, "secs: zero-norm embedding");
  double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

std::vector<std::string> normalize_text(const std::string& s) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char ch : s) {
    if (std::isalnum(ch)) {
      cur.push_back((char)std::tolower(ch));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

i64 word_edit_distance(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  const size_t r = ref.size(), h = hyp.size();
  std::vector<i64> prev(h + 1), cur(h + 1);
  for (size_t j = 0; j <= h; ++j) prev[j] = (i64)j;
  for (size_t i = 1; i <= r; ++i) {
    cur[0] = (i64)i;
    for (size_t j = 1; j <= h; ++j) {
      const i64 sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[h];
}

WerStats corpus_wer(const std::vector<std::vector<std::string>>& refs,
                    const std::vector<std::vector<std::string>>& hyps) {
  require_arg(refs.size() == hyps.size(), "corpus_wer: refs and hyps differ in length");
  WerStats st;
  for (size_t i = 0; i < refs.size(); ++i) {
    const i64 edits = word_edit_distance(refs[i], hyps[i]);
    st.per_pair_edits.push_back(edits);
    st.per_pair_ref_tokens.push_back((i64)refs[i].size());
    st.total_edits += edits;
    st.total_ref_tokens += (i64)refs[i].size();
  }
  require_arg(st.total_ref_tokens > 0, "corpus_wer: reference corpus is empty");
  st.wer = (double)st.total_edits / (double)st.total_ref_tokens;
  return st;
}

Ci bootstrap_ci(const std::vector<double>& values, i64 n_resamples, u64 seed) {
  require_arg(!values.empty(), "bootstrap_ci: no values");
  require_arg(n_resamples >= 1, "bootstrap_ci: n_resamples must be >= 1");
  Rng rng(mix64(seed));
  std::vector<double> means;
  means.reserve((size_t)n_resamples);
  const i64 n = (i64)values.size();
  for (i64 r = 0; r < n_resamples; ++r) {
    double s = 0.0;
    for (i64 i = 0; i < n; ++i) s += values[(size_t)rng.uniform_int(n)];
    means.push_back(s / (double)n);
  }
  std::sort(means.begin(), means.end());
  auto pick = [&](double q) {
    i64 idx = (i64)std::llround(q * (double)(n_resamples - 1));
    idx = std::clamp<i64>(idx, 0, n_resamples - 1);
    return means[(size_t)idx];
  };
  return {pick(0.025), pick(0.975)};
}

double mean_pairwise_distance(const Tensor& emb) {
  require_arg(emb.shape.size() == 2, "mean_pairwise_distance: expected (n, d)");
  const i64 n = emb.dim(0), d = emb.dim(1);
  if (n < 2) return 0.0;
  double total = 0.0;
  i64 count = 0;
  for (i64 i = 0; i < n; ++i)
    for (i64 j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (i64 k = 0; k < d; ++k) {
        const double v = emb.at(i, k) - emb.at(j, k);
        s += v * v;
      }
      total += std::sqrt(s);
      count += 1;
    }
  return total / (double)count;
}

void finalize_report(EvalReport& report, u64 seed) {
  std::vector<double> secs_vals;
  std::vector<std::vector<std::string>> refs, hyps;
  i64 edits = 0, ref_tokens = 0;
  report.asr_failures = 0;
  report.wer_pairs = 0;
  for (const PairResult& pr : report.pairs) {
    secs_vals.push_back(pr.secs);
    if (!pr.asr_ok) {
      report.asr_failures += 1;
      continue;
    }
    if (pr.ref_tokens > 0) {
      edits += pr.wer_edits;
      ref_tokens += pr.ref_tokens;
      report.wer_pairs += 1;
    }
  }
  require_arg(!secs_vals.empty(), "finalize_report: no pair results");
  double mean = 0.0;
  for (double v : secs_vals) mean += v;
  report.mean_secs = mean / (double)secs_vals.size();
  report.secs_ci = bootstrap_ci(secs_vals, 1000, seed);
  report.wer = ref_tokens > 0 ? (double)edits / (double)ref_tokens : 0.0;
  if (report.normalization.empty())
    report.normalization = "lowercase, strip punctuation, collapse whitespace";
}

void write_eval_report(const EvalReport& report, const std::string& dir) {
  fs::create_directories(dir);
  using json = nlohmann::ordered_json;

  {
    std::ofstream rows(dir + "/report.jsonl", std::ios::trunc);
    if (!rows) fail("cannot write eval report under '" + dir + "'");
    for (const PairResult& pr : report.pairs) {
      json j;
      j["source_id"] = pr.pair.source_id;
      j["target_speaker"] = pr.pair.target_speaker_id;
      j["reference_id"] = pr.pair.reference_id;
      j["converted_path"] = pr.pair.converted_path;
      j["secs"] = pr.secs;
      j["asr_ok"] = pr.asr_ok;
      j["wer_edits"] = pr.wer_edits;
      j["ref_tokens"] = pr.ref_tokens;
      j["wer_contribution"] = pr.ref_tokens > 0 && pr.asr_ok
                                  ? (double)pr.wer_edits / (double)pr.ref_tokens
                                  : 0.0;
      rows << j.dump() << "\n";
    }
  }

  {
    json j;
    j["n_pairs"] = report.pairs.size();
    j["mean_secs"] = report.mean_secs;
    j["secs_ci_lo"] = report.secs_ci.lo;
    j["secs_ci_hi"] = report.secs_ci.hi;
    j["wer"] = report.wer;
    j["wer_pairs"] = report.wer_pairs;
    j["asr_failures"] = report.asr_failures;
    j["normalization"] = report.normalization;
    json div = json::object();
    for (const auto& [k, v] : report.diversity) div[k] = v;
    j["diversity"] = div;
    json cfg = json::object();
    for (const auto& [k, v] : report.config_snapshot) cfg[k] = v;
    j["config"] = cfg;
    std::ofstream out(dir + "/summary.json", std::ios::trunc);
    if (!out) fail("cannot write eval summary under '" + dir + "'");
    out << j.dump(2) << "\n";
  }

  {
    std::ofstream out(dir + "/summary.txt", std::ios::trunc);
    char buf[256];
    std::snprintf(buf, sizeof(buf), "pairs: %zu\n", report.pairs.size());
    out << buf;
    std::snprintf(buf, sizeof(buf), "mean SECS: %.4f  (95%% CI [%.4f, %.4f])\n",
                  report.mean_secs, report.secs_ci.lo, report.secs_ci.hi);
    out << buf;
    std::snprintf(buf, sizeof(buf), "corpus WER: %.4f over %lld pairs\n", report.wer,
                  (long long)report.wer_pairs);
    out << buf;
    std::snprintf(buf, sizeof(buf), "ASR failures (excluded): %lld\n",
                  (long long)report.asr_failures);
    out << buf;
    out << "text normalization: " << report.normalization << "\n";
    for (const auto& [k, v] : report.diversity) {
      std::snprintf(buf, sizeof(buf), "diversity[%s]: %.4f\n", k.c_str(), v);
      out << buf;
    }
  }
}

}  // namespace pvc::eval
