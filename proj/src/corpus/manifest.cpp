#include "pvc/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace pvc::corpus {

void Manifest::rebuild_speakers() {
  speakers.clear();
  for (const auto& r : records) speakers[r.speaker_id].push_back(r.utterance_id);
}

void Manifest::validate() const {
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (r.utterance_id.empty()) fail("manifest: empty utterance_id");
    if (!seen.insert(r.utterance_id).second)
      fail("manifest: duplicate utterance_id '" + r.utterance_id + "'");
    if (r.speaker_id.empty()) fail("manifest: " + r.utterance_id + ": empty speaker_id");
    if (r.sample_rate <= 0) fail("manifest: " + r.utterance_id + ": sample_rate must be positive");
    if (r.n_samples <= 0) fail("manifest: " + r.utterance_id + ": n_samples must be positive");
    if (r.split != "train" && r.split != "val" && r.split != "test")
      fail("manifest: " + r.utterance_id + ": unknown split '" + r.split + "'");
    if (r.path.empty() || r.path.front() == '/' || r.path.find("..") != std::string::npos)
      fail("manifest: " + r.utterance_id + ": path must be relative to the root: '" + r.path + "'");
  }
  for (const auto& [spk, ids] : speakers) {
    if (ids.empty()) fail("manifest: speaker '" + spk + "' has no utterances");
    for (const auto& id : ids) {
      if (!seen.count(id)) fail("manifest: speakers map references unknown id '" + id + "'");
      if (by_id(id).speaker_id != spk)
        fail("manifest: speakers map lists '" + id + "' under the wrong speaker");
    }
  }
  std::map<std::string, i64> counts;
  for (const auto& r : records) counts[r.speaker_id] += 1;
  for (const auto& [spk, n] : counts) {
    auto it = speakers.find(spk);
    if (it == speakers.end() || (i64)it->second.size() != n)
      fail("manifest: speakers map out of sync for '" + spk + "' (call rebuild_speakers)");
  }
}

bool Manifest::has_id(const std::string& utterance_id) const {
  for (const auto& r : records)
    if (r.utterance_id == utterance_id) return true;
  return false;
}

const UtteranceRecord& Manifest::by_id(const std::string& utterance_id) const {
  for (const auto& r : records)
    if (r.utterance_id == utterance_id) return r;
  fail_arg("manifest: unknown utterance_id '" + utterance_id + "'");
}

std::vector<const UtteranceRecord*> Manifest::in_split(const std::string& split) const {
  std::vector<const UtteranceRecord*> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(&r);
  return out;
}

void write_manifest(const Manifest& m, const std::string& path) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail("cannot write manifest: " + path);
    for (const auto& r : m.records) {
      ordered_json j;
      j["utterance_id"] = r.utterance_id;
      j["speaker_id"] = r.speaker_id;
      j["path"] = r.path;
      j["sample_rate"] = r.sample_rate;
      j["n_samples"] = r.n_samples;
      j["split"] = r.split;
      out << j.dump() << "\n";
    }
    if (!out) fail("short write for manifest: " + path);
  }
  fs::rename(tmp, path);
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot read manifest: " + path);
  Manifest m;
  m.root = fs::path(path).has_parent_path() ? fs::path(path).parent_path().string() : ".";
  std::string line;
  i64 line_no = 0;
  static const std::vector<std::string> kKeys = {"utterance_id", "speaker_id", "path",
                                                 "sample_rate",  "n_samples",  "split"};
  while (std::getline(in, line)) {
    line_no += 1;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      fail("manifest " + path + ":" + std::to_string(line_no) + ": bad record: " + e.what());
    }
    if (!j.is_object())
      fail("manifest " + path + ":" + std::to_string(line_no) + ": record is not an object");
    for (const auto& k : kKeys)
      if (!j.contains(k))
        fail("manifest " + path + ":" + std::to_string(line_no) + ": missing key '" + k + "'");
    for (const auto& [k, v] : j.items()) {
      (void)v;
      if (std::find(kKeys.begin(), kKeys.end(), k) == kKeys.end())
        fail("manifest " + path + ":" + std::to_string(line_no) + ": unknown key '" + k + "'");
    }
    UtteranceRecord r;
    try {
      r.utterance_id = j["utterance_id"].get<std::string>();
      r.speaker_id = j["speaker_id"].get<std::string>();
      r.path = j["path"].get<std::string>();
      r.sample_rate = j["sample_rate"].get<int>();
      r.n_samples = j["n_samples"].get<i64>();
      r.split = j["split"].get<std::string>();
    } catch (const std::exception& e) {
      fail("manifest " + path + ":" + std::to_string(line_no) + ": bad value: " + e.what());
    }
    m.records.push_back(std::move(r));
  }
  m.rebuild_speakers();
  m.validate();
  return m;
}

Manifest split_manifest(const Manifest& m, const SplitSpec& spec, u64 seed) {
  Manifest out = m;
  if (spec.use_lists) {
    std::vector<std::string> missing;
    for (const auto& [split, ids] : spec.lists) {
      if (split != "train" && split != "val" && split != "test")
        fail_arg("split: unknown split name '" + split + "'");
      for (const auto& id : ids)
        if (!out.has_id(id)) missing.push_back(id);
    }
    if (!missing.empty()) {
      std::sort(missing.begin(), missing.end());
      std::ostringstream msg;
      msg << "split: ids not in manifest:";
      for (const auto& id : missing) msg << " " << id;
      fail(msg.str());
    }
    std::map<std::string, std::string> assign;
    for (const auto& [split, ids] : spec.lists)
      for (const auto& id : ids) {
        auto [it, inserted] = assign.emplace(id, split);
        if (!inserted && it->second != split)
          fail_arg("split: id '" + id + "' listed under both '" + it->second + "' and '" + split + "'");
      }
    for (auto& r : out.records) {
      auto it = assign.find(r.utterance_id);
      if (it != assign.end()) r.split = it->second;
    }
  } else {
    const double sum = spec.train + spec.val + spec.test;
    if (std::abs(sum - 1.0) > 1e-9)
      fail_arg("split: fractions must sum to 1, got " + std::to_string(sum));
    if (spec.train < 0 || spec.val < 0 || spec.test < 0)
      fail_arg("split: fractions must be non-negative");
    std::vector<i64> order(out.records.size());
    for (i64 i = 0; i < (i64)order.size(); ++i) order[i] = i;
    Rng rng(mix64(seed));
    rng.shuffle(order);
    const i64 n = (i64)order.size();
    const i64 n_train = (i64)std::llround(spec.train * (double)n);
    const i64 n_val = (i64)std::llround(spec.val * (double)n);
    for (i64 i = 0; i < n; ++i) {
      auto& r = out.records[order[i]];
      r.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    }
  }
  out.rebuild_speakers();
  out.validate();
  return out;
}

const UtteranceRecord& sample_other_utterance(const Manifest& m, const std::string& speaker_id,
                                              const std::string& exclude_id, Rng& rng,
                                              i64* fallback_count) {
  auto it = m.speakers.find(speaker_id);
  if (it == m.speakers.end()) fail_arg("sample_other_utterance: unknown speaker '" + speaker_id + "'");
  std::vector<const std::string*> candidates;
  candidates.reserve(it->second.size());
  for (const auto& id : it->second)
    if (id != exclude_id) candidates.push_back(&id);
  if (candidates.empty()) {
    if (fallback_count) *fallback_count += 1;
    return m.by_id(exclude_id);
  }
  return m.by_id(*candidates[(size_t)rng.uniform_int((i64)candidates.size())]);
}

}  // namespace pvc::corpus
