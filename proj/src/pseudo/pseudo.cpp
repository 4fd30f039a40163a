#include "pvc/pseudo.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pvc/hash.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace pvc::pseudo {
namespace {

// train-split records from speakers other than the source's
std::vector<const corpus::UtteranceRecord*> other_speaker_pool(const corpus::Manifest& m,
                                                               const std::string& source_speaker) {
  std::vector<const corpus::UtteranceRecord*> pool;
  for (const auto& r : m.records)
    if (r.split == "train" && r.speaker_id != source_speaker) pool.push_back(&r);
  return pool;
}

Waveform convert_once(const TeacherHandle& t, const Waveform& src,
                      const corpus::Manifest& m, const corpus::UtteranceRecord& ref) {
  Waveform ref_wav = read_wav(m.resolve(ref));
  return model::convert(*t.net, *t.content, *t.speaker, src, ref_wav);
}

void fit_length(Waveform& w, i64 n) {
  if ((i64)w.samples.size() >= n)
    w.samples.resize((size_t)n);
  else
    w.samples.resize((size_t)n, 0.0);
}

}  // namespace

PseudoSet generate_pseudo_set(const TeacherHandle& t, const corpus::UtteranceRecord& source,
                              const corpus::Manifest& m, i64 n, Rng& rng,
                              const std::string& out_root) {
  require_arg(n >= 0, "pseudo: n must be >= 0");
  require(t.net && t.content && t.speaker, "pseudo: teacher not loaded");
  PseudoSet set;
  set.source_id = source.utterance_id;
  if (n == 0) return set;

  auto pool = other_speaker_pool(m, source.speaker_id);
  if (pool.empty())
    fail("pseudo: no training utterance from a speaker other than '" + source.speaker_id +
         "'; need at least two speakers");

  // cycle through the other speakers in a shuffled order so reference
  // speakers stay pairwise distinct until the pool is exhausted
  std::vector<std::string> speakers;
  for (const auto* r : pool)
    if (std::find(speakers.begin(), speakers.end(), r->speaker_id) == speakers.end())
      speakers.push_back(r->speaker_id);
  std::sort(speakers.begin(), speakers.end());
  std::vector<i64> order((size_t)speakers.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = (i64)i;
  rng.shuffle(order);

  const Waveform src = read_wav(m.resolve(source));
  const fs::path dir = fs::path(out_root) / "pseudo" / t.tag / source.utterance_id;
  fs::create_directories(dir);

  for (i64 k = 0; k < n; ++k) {
    const std::string& spk = speakers[(size_t)order[(size_t)(k % (i64)speakers.size())]];
    std::vector<const corpus::UtteranceRecord*> of_spk;
    for (const auto* r : pool)
      if (r->speaker_id == spk) of_spk.push_back(r);
    const corpus::UtteranceRecord* ref = of_spk[(size_t)rng.uniform_int((i64)of_spk.size())];

    Waveform out;
    try {
      out = convert_once(t, src, m, *ref);
    } catch (const std::exception& first) {
      // one retry with a different reference, then give up
      std::vector<const corpus::UtteranceRecord*> remaining;
      for (const auto* r : pool)
        if (r != ref) remaining.push_back(r);
      if (remaining.empty())
        fail("pseudo: conversion failed for source '" + source.utterance_id +
             "' and no alternative reference exists: " + first.what());
      const corpus::UtteranceRecord* retry =
          remaining[(size_t)rng.uniform_int((i64)remaining.size())];
      try {
        out = convert_once(t, src, m, *retry);
      } catch (const std::exception& second) {
        fail("pseudo: conversion failed twice for source '" + source.utterance_id + "' (refs '" +
             ref->utterance_id + "', '" + retry->utterance_id + "'): " + second.what());
      }
      ref = retry;
    }
    fit_length(out, source.n_samples);

    const std::string rel =
        "pseudo/" + t.tag + "/" + source.utterance_id + "/" + std::to_string(k) + ".wav";
    write_wav((fs::path(out_root) / rel).string(), out);

    PseudoEntry e;
    e.source_id = source.utterance_id;
    e.pseudo_path = rel;
    e.reference_id = ref->utterance_id;
    e.reference_speaker = ref->speaker_id;
    e.teacher_tag = t.tag;
    set.entries.push_back(std::move(e));
  }
  return set;
}

std::vector<PseudoSet> generate_pseudo_corpus(
    const TeacherHandle& t, const corpus::Manifest& m, i64 n, u64 global_seed,
    const std::string& out_root, const std::function<void(const std::string&)>& progress) {
  std::vector<const corpus::UtteranceRecord*> sources;
  for (const auto& r : m.records)
    if (r.split == "train") sources.push_back(&r);
  std::sort(sources.begin(), sources.end(),
            [](const auto* a, const auto* b) { return a->utterance_id < b->utterance_id; });

  std::vector<PseudoSet> sets;
  for (const auto* src : sources) {
    const u64 seed = derive_seed(global_seed, src->utterance_id);
    Rng rng(seed);
    PseudoSet set = generate_pseudo_set(t, *src, m, n, rng, out_root);
    for (auto& e : set.entries) e.seed = seed;
    sets.push_back(std::move(set));
    if (progress) progress(src->utterance_id);
  }
  return sets;
}

void write_pseudo_manifest(const std::vector<PseudoSet>& sets, const std::string& path) {
  const fs::path root = fs::path(path).has_parent_path() ? fs::path(path).parent_path() : ".";
  std::vector<std::string> missing;
  for (const auto& s : sets)
    for (const auto& e : s.entries)
      if (!fs::is_regular_file(root / e.pseudo_path)) missing.push_back(e.pseudo_path);
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << "pseudo manifest: audio missing for " << missing.size() << " entr" <<
        (missing.size() == 1 ? "y" : "ies") << ":";
    for (const auto& p : missing) msg << "\n  " << p;
    fail(msg.str());
  }
  fs::create_directories(root);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail("cannot write pseudo manifest: " + path);
    for (const auto& s : sets)
      for (const auto& e : s.entries) {
        ordered_json j;
        j["source_id"] = e.source_id;
        j["pseudo_path"] = e.pseudo_path;
        j["reference_id"] = e.reference_id;
        j["reference_speaker"] = e.reference_speaker;
        j["seed"] = e.seed;
        j["teacher_tag"] = e.teacher_tag;
        out << j.dump() << "\n";
      }
    if (!out) fail("short write for pseudo manifest: " + path);
  }
  fs::rename(tmp, path);
}

std::vector<PseudoSet> read_pseudo_manifest(const std::string& path, i64 expected_n) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot read pseudo manifest: " + path);
  const fs::path root = fs::path(path).has_parent_path() ? fs::path(path).parent_path() : ".";
  static const std::vector<std::string> kKeys = {"source_id",        "pseudo_path", "reference_id",
                                                 "reference_speaker", "seed",        "teacher_tag"};
  std::vector<PseudoSet> sets;
  std::set<std::string> seen_sources;
  std::vector<std::string> missing;
  std::string line;
  i64 line_no = 0;
  while (std::getline(in, line)) {
    line_no += 1;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      fail("pseudo manifest " + path + ":" + std::to_string(line_no) + ": bad record: " + e.what());
    }
    for (const auto& k : kKeys)
      if (!j.contains(k))
        fail("pseudo manifest " + path + ":" + std::to_string(line_no) + ": missing key '" + k + "'");
    for (const auto& [k, v] : j.items()) {
      (void)v;
      if (std::find(kKeys.begin(), kKeys.end(), k) == kKeys.end())
        fail("pseudo manifest " + path + ":" + std::to_string(line_no) + ": unknown key '" + k + "'");
    }
    PseudoEntry e;
    try {
      e.source_id = j["source_id"].get<std::string>();
      e.pseudo_path = j["pseudo_path"].get<std::string>();
      e.reference_id = j["reference_id"].get<std::string>();
      e.reference_speaker = j["reference_speaker"].get<std::string>();
      e.seed = j["seed"].get<u64>();
      e.teacher_tag = j["teacher_tag"].get<std::string>();
    } catch (const std::exception& ex) {
      fail("pseudo manifest " + path + ":" + std::to_string(line_no) + ": bad value: " + ex.what());
    }
    if (!fs::is_regular_file(root / e.pseudo_path)) missing.push_back(e.pseudo_path);
    if (sets.empty() || sets.back().source_id != e.source_id) {
      if (!seen_sources.insert(e.source_id).second)
        fail("pseudo manifest " + path + ": entries for source '" + e.source_id +
             "' are not contiguous");
      sets.push_back(PseudoSet{e.source_id, {}});
    }
    sets.back().entries.push_back(std::move(e));
  }
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << "pseudo manifest " << path << ": audio missing for " << missing.size() << " entr"
        << (missing.size() == 1 ? "y" : "ies") << ":";
    for (const auto& p : missing) msg << "\n  " << p;
    fail(msg.str());
  }
  if (expected_n >= 0)
    for (const auto& s : sets)
      if ((i64)s.entries.size() != expected_n)
        fail("pseudo manifest " + path + ": source '" + s.source_id + "' has " +
             std::to_string(s.entries.size()) + " entries, expected " + std::to_string(expected_n));
  return sets;
}

const PseudoEntry& sample_pseudo(const PseudoSet& s, Rng& rng) {
  require_arg(!s.entries.empty(), "sample_pseudo: empty set");
  return s.entries[(size_t)rng.uniform_int((i64)s.entries.size())];
}

}  // namespace pvc::pseudo
