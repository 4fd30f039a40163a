#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "pvc/corpus.hpp"

namespace fs = std::filesystem;

namespace pvc::corpus {
namespace {

std::string forward_slashes(std::string s) {
  std::replace(s.begin(), s.end(), '\\', '/');
  return s;
}

bool is_audio(const fs::path& p) { return p.extension() == ".wav"; }

// (speaker_id, absolute source path), lexicographic by relative path.
std::vector<std::pair<std::string, fs::path>> enumerate(const std::string& src_root,
                                                        const std::string& layout) {
  std::vector<std::pair<std::string, fs::path>> out;
  if (layout == "speaker_dirs") {
    std::vector<fs::path> rel;
    for (const auto& e : fs::recursive_directory_iterator(src_root))
      if (e.is_regular_file() && is_audio(e.path())) rel.push_back(fs::relative(e.path(), src_root));
    std::sort(rel.begin(), rel.end(),
              [](const fs::path& a, const fs::path& b) { return a.generic_string() < b.generic_string(); });
    for (const auto& r : rel) {
      if (!r.has_parent_path()) continue;  // audio at the top level has no speaker
      out.emplace_back(r.begin()->string(), fs::path(src_root) / r);
    }
  } else if (layout.rfind("list:", 0) == 0) {
    const fs::path meta = fs::path(src_root) / layout.substr(5);
    std::ifstream in(meta);
    if (!in) fail("ingest: cannot read metadata file: " + meta.string());
    std::string line;
    i64 line_no = 0;
    while (std::getline(in, line)) {
      line_no += 1;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string speaker, rel;
      if (!(ls >> speaker >> rel))
        fail("ingest: " + meta.string() + ":" + std::to_string(line_no) +
             ": expected '<speaker_id> <relative path>'");
      out.emplace_back(speaker, fs::path(src_root) / rel);
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
      return a.second.generic_string() < b.second.generic_string();
    });
  } else {
    fail_arg("ingest: unknown layout '" + layout + "' (use speaker_dirs or list:<file>)");
  }
  return out;
}

}  // namespace

std::string IngestReport::summary() const {
  std::ostringstream s;
  s << "ingested " << ingested << " utterance(s), skipped " << skipped.size();
  for (const auto& [path, reason] : skipped) s << "\n  skipped " << path << ": " << reason;
  return s.str();
}

Manifest ingest_corpus(const std::string& src_root, const std::string& out_root,
                       const IngestOptions& options, IngestReport* report) {
  if (!fs::is_directory(src_root)) fail("ingest: corpus root not found: " + src_root);
  require_arg(options.target_rate > 0, "ingest: target_rate must be positive");
  require_arg(options.trim_multiple >= 1, "ingest: trim_multiple must be >= 1");
  require_arg(options.peak > 0 && options.peak <= 1.0, "ingest: peak must be in (0, 1]");

  IngestReport local;
  IngestReport& rep = report ? *report : local;
  Manifest m;
  m.root = out_root;
  std::set<std::string> ids;

  for (const auto& [speaker, src] : enumerate(src_root, options.layout)) {
    const std::string shown = src.generic_string();
    Waveform w;
    try {
      w = read_wav(src.string());
    } catch (const std::exception& e) {
      rep.skipped.emplace_back(shown, e.what());
      continue;
    }
    if (w.rate != options.target_rate) w = resample(w, options.target_rate);
    peak_normalize(w, options.peak);
    const i64 n = ((i64)w.samples.size() / options.trim_multiple) * options.trim_multiple;
    if (n <= 0) {
      rep.skipped.emplace_back(shown, "shorter than trim_multiple after resampling");
      continue;
    }
    w.samples.resize((size_t)n);

    const std::string utt_id = speaker + "_" + src.stem().string();
    if (!ids.insert(utt_id).second) {
      rep.skipped.emplace_back(shown, "duplicate utterance id '" + utt_id + "'");
      continue;
    }
    const std::string rel = forward_slashes(speaker + "/" + src.stem().string() + ".wav");
    const fs::path dst = fs::path(out_root) / rel;
    fs::create_directories(dst.parent_path());
    write_wav(dst.string(), w);
    const fs::path sidecar = fs::path(src).replace_extension(".txt");
    if (fs::is_regular_file(sidecar))
      fs::copy_file(sidecar, fs::path(dst).replace_extension(".txt"),
                    fs::copy_options::overwrite_existing);

    UtteranceRecord r;
    r.utterance_id = utt_id;
    r.speaker_id = speaker;
    r.path = rel;
    r.sample_rate = options.target_rate;
    r.n_samples = n;
    r.split = "train";
    m.records.push_back(std::move(r));
    rep.ingested += 1;
  }

  m.rebuild_speakers();
  m.validate();
  return m;
}

}  // namespace pvc::corpus
