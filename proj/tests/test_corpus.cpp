#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "pvc/corpus.hpp"
#include "support/oracles.hpp"

using namespace pvc;
using namespace pvc::corpus;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "pvc_corpus_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Waveform tone(double freq, int rate, i64 n, double amp = 0.5) {
  Waveform w;
  w.rate = rate;
  w.samples.resize((size_t)n);
  for (i64 i = 0; i < n; ++i)
    w.samples[(size_t)i] = amp * std::sin(2.0 * testsup::kPi * freq * (double)i / rate);
  return w;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// 2 speakers x 3 utterances, mixed rates, one non-audio file, one broken wav
fs::path make_raw_corpus() {
  fs::path root = fresh_dir("raw");
  const struct {
    const char* spk;
    const char* name;
    double freq;
    int rate;
    double secs;
  } utts[] = {
      {"alice", "a1", 220.0, 16000, 0.5}, {"alice", "a2", 240.0, 22050, 0.7},
      {"alice", "a3", 260.0, 16000, 0.4}, {"bob", "b1", 150.0, 16000, 0.6},
      {"bob", "b2", 170.0, 48000, 0.5},   {"bob", "b3", 190.0, 16000, 0.8},
  };
  for (const auto& u : utts) {
    fs::create_directories(root / u.spk);
    write_wav((root / u.spk / (std::string(u.name) + ".wav")).string(),
              tone(u.freq, u.rate, (i64)(u.secs * u.rate)));
    std::ofstream txt(root / u.spk / (std::string(u.name) + ".txt"));
    txt << "ana belo\n";
  }
  std::ofstream notes(root / "alice" / "notes.md");
  notes << "not audio\n";
  std::ofstream broken(root / "bob" / "broken.wav", std::ios::binary);
  broken << "RIFFgarbage";
  return root;
}

}  // namespace

TEST_CASE("ingest counts utterances and speakers and reports skips") {
  fs::path raw = make_raw_corpus();
  fs::path out = fresh_dir("ingested");
  IngestOptions opt;
  opt.trim_multiple = 64;
  IngestReport rep;
  Manifest m = ingest_corpus(raw.string(), out.string(), opt, &rep);

  CHECK(m.records.size() == 6);
  CHECK(m.speakers.size() == 2);
  CHECK(m.speakers.at("alice").size() == 3);
  CHECK(m.speakers.at("bob").size() == 3);
  CHECK(rep.ingested == 6);
  REQUIRE(rep.skipped.size() == 1);
  CHECK(rep.skipped[0].first.find("broken.wav") != std::string::npos);
  CHECK(rep.summary().find("skipped 1") != std::string::npos);

  // deterministic lexicographic order by relative path
  std::vector<std::string> ids;
  for (const auto& r : m.records) ids.push_back(r.utterance_id);
  CHECK(ids == std::vector<std::string>{"alice_a1", "alice_a2", "alice_a3", "bob_b1", "bob_b2",
                                        "bob_b3"});
  for (const auto& r : m.records) {
    CHECK(r.sample_rate == 16000);
    CHECK(r.n_samples % 64 == 0);
    CHECK(r.n_samples > 0);
    Waveform w = read_wav(m.resolve(r));
    CHECK((i64)w.samples.size() == r.n_samples);
    CHECK(max_abs(w) <= 0.95 + 1e-9);
    CHECK(fs::is_regular_file(fs::path(m.resolve(r)).replace_extension(".txt")));
  }
}

TEST_CASE("ingest of a missing root fails, of an empty root yields an empty manifest") {
  CHECK_THROWS_AS(ingest_corpus("/nonexistent/corpus", "/tmp/pvc_x", IngestOptions{}),
                  FatalError);
  fs::path raw = fresh_dir("empty_raw");
  fs::path out = fresh_dir("empty_out");
  Manifest m = ingest_corpus(raw.string(), out.string(), IngestOptions{});
  CHECK(m.records.empty());
  CHECK(m.speakers.empty());
}

TEST_CASE("re-ingesting the same tree gives byte-identical audio and equal manifests") {
  fs::path raw = make_raw_corpus();
  fs::path out1 = fresh_dir("re1");
  fs::path out2 = fresh_dir("re2");
  IngestOptions opt;
  opt.trim_multiple = 64;
  Manifest m1 = ingest_corpus(raw.string(), out1.string(), opt);
  Manifest m2 = ingest_corpus(raw.string(), out2.string(), opt);
  REQUIRE(m1.records.size() == m2.records.size());
  for (size_t i = 0; i < m1.records.size(); ++i) {
    CHECK(m1.records[i] == m2.records[i]);
    CHECK(read_bytes(m1.resolve(m1.records[i])) == read_bytes(m2.resolve(m2.records[i])));
  }
}

TEST_CASE("ingest via metadata list layout") {
  fs::path raw = fresh_dir("listed");
  fs::create_directories(raw / "audio");
  write_wav((raw / "audio" / "x1.wav").string(), tone(200, 16000, 8000));
  write_wav((raw / "audio" / "x2.wav").string(), tone(300, 16000, 8000));
  {
    std::ofstream meta(raw / "files.tsv");
    meta << "# speaker path\n";
    meta << "carol audio/x1.wav\n";
    meta << "dave audio/x2.wav\n";
  }
  fs::path out = fresh_dir("listed_out");
  IngestOptions opt;
  opt.layout = "list:files.tsv";
  Manifest m = ingest_corpus(raw.string(), out.string(), opt);
  REQUIRE(m.records.size() == 2);
  CHECK(m.records[0].utterance_id == "carol_x1");
  CHECK(m.records[1].utterance_id == "dave_x2");

  opt.layout = "bogus";
  CHECK_THROWS_AS(ingest_corpus(raw.string(), out.string(), opt), ArgumentError);
}

TEST_CASE("manifest writes one record per line and round-trips exactly") {
  fs::path raw = make_raw_corpus();
  fs::path out = fresh_dir("roundtrip");
  IngestOptions opt;
  opt.trim_multiple = 64;
  Manifest m = ingest_corpus(raw.string(), out.string(), opt);
  const std::string mpath = (out / "manifest.jsonl").string();
  write_manifest(m, mpath);

  // fixed key order in the serialized form
  std::ifstream in(mpath);
  std::string first;
  REQUIRE(std::getline(in, first));
  const char* keys[] = {"utterance_id", "speaker_id", "path", "sample_rate", "n_samples", "split"};
  size_t pos = 0;
  for (const char* k : keys) {
    size_t at = first.find(std::string("\"") + k + "\"");
    REQUIRE(at != std::string::npos);
    CHECK(at >= pos);
    pos = at;
  }

  Manifest back = read_manifest(mpath);
  CHECK(back.root == out.string());
  REQUIRE(back.records.size() == m.records.size());
  for (size_t i = 0; i < m.records.size(); ++i) CHECK(back.records[i] == m.records[i]);
  CHECK(back.speakers == m.speakers);
}

TEST_CASE("manifest reader rejects missing, unknown, and malformed fields") {
  fs::path dir = fresh_dir("badmanifest");
  auto write_lines = [&](const std::string& name, const std::string& body) {
    std::ofstream f(dir / name);
    f << body;
    return (dir / name).string();
  };
  const std::string ok =
      R"({"utterance_id":"u1","speaker_id":"s1","path":"s1/u1.wav","sample_rate":16000,"n_samples":640,"split":"train"})";
  CHECK_THROWS_AS(read_manifest(write_lines("missing.jsonl",
                                            R"({"utterance_id":"u1","speaker_id":"s1","path":"p.wav","sample_rate":16000,"n_samples":640})"
                                            "\n")),
                  FatalError);
  CHECK_THROWS_AS(read_manifest(write_lines("unknown.jsonl",
                                            R"({"utterance_id":"u1","speaker_id":"s1","path":"p.wav","sample_rate":16000,"n_samples":640,"split":"train","extra":1})"
                                            "\n")),
                  FatalError);
  CHECK_THROWS_AS(read_manifest(write_lines("garbage.jsonl", "not json\n")), FatalError);
  CHECK_THROWS_AS(read_manifest(write_lines("dup.jsonl", ok + "\n" + ok + "\n")), FatalError);
  CHECK_THROWS_AS(read_manifest((dir / "absent.jsonl").string()), FatalError);
  Manifest good = read_manifest(write_lines("good.jsonl", ok + "\n"));
  CHECK(good.records.size() == 1);
}

TEST_CASE("fractional split covers all records and is seed-deterministic") {
  Manifest m;
  m.root = ".";
  for (int i = 0; i < 40; ++i) {
    UtteranceRecord r;
    r.utterance_id = "u" + std::to_string(i);
    r.speaker_id = "s" + std::to_string(i % 4);
    r.path = r.speaker_id + "/" + r.utterance_id + ".wav";
    r.sample_rate = 16000;
    r.n_samples = 6400;
    m.records.push_back(r);
  }
  m.rebuild_speakers();

  SplitSpec spec;
  spec.train = 0.8;
  spec.val = 0.1;
  spec.test = 0.1;
  Manifest a = split_manifest(m, spec, 7);
  Manifest b = split_manifest(m, spec, 7);
  Manifest c = split_manifest(m, spec, 8);
  std::map<std::string, int> counts;
  for (const auto& r : a.records) counts[r.split] += 1;
  CHECK(counts["train"] == 32);
  CHECK(counts["val"] == 4);
  CHECK(counts["test"] == 4);
  bool same = true, differs = false;
  for (size_t i = 0; i < a.records.size(); ++i) {
    same = same && a.records[i].split == b.records[i].split;
    differs = differs || a.records[i].split != c.records[i].split;
  }
  CHECK(same);
  CHECK(differs);

  spec.train = 0.8;
  spec.val = 0.3;
  CHECK_THROWS_AS(split_manifest(m, spec, 7), ArgumentError);
}

TEST_CASE("explicit split lists are applied exactly and missing ids are fatal") {
  Manifest m;
  m.root = ".";
  for (int i = 0; i < 6; ++i) {
    UtteranceRecord r;
    r.utterance_id = "u" + std::to_string(i);
    r.speaker_id = "s0";
    r.path = "s0/" + r.utterance_id + ".wav";
    r.sample_rate = 16000;
    r.n_samples = 640;
    m.records.push_back(r);
  }
  m.rebuild_speakers();

  SplitSpec spec;
  spec.use_lists = true;
  spec.lists["val"] = {"u1", "u4"};
  spec.lists["test"] = {"u5"};
  Manifest out = split_manifest(m, spec, 0);
  CHECK(out.by_id("u0").split == "train");
  CHECK(out.by_id("u1").split == "val");
  CHECK(out.by_id("u4").split == "val");
  CHECK(out.by_id("u5").split == "test");
  CHECK(out.in_split("train").size() == 3);

  SplitSpec bad = spec;
  bad.lists["val"].push_back("zz1");
  bad.lists["test"].push_back("zz0");
  try {
    split_manifest(m, bad, 0);
    FAIL("expected FatalError");
  } catch (const FatalError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("zz0") != std::string::npos);
    CHECK(msg.find("zz1") != std::string::npos);
  }

  SplitSpec conflict = spec;
  conflict.lists["train"] = {"u1"};  // u1 also in val
  CHECK_THROWS_AS(split_manifest(m, conflict, 0), ArgumentError);
}

TEST_CASE("sample_other_utterance is uniform over the other utterances") {
  Manifest m;
  m.root = ".";
  for (int i = 0; i < 6; ++i) {
    UtteranceRecord r;
    r.utterance_id = "u" + std::to_string(i);
    r.speaker_id = "s0";
    r.path = "s0/" + r.utterance_id + ".wav";
    r.sample_rate = 16000;
    r.n_samples = 640;
    m.records.push_back(r);
  }
  m.rebuild_speakers();

  Rng rng(123);
  std::map<std::string, i64> counts;
  i64 fallback = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto& r = sample_other_utterance(m, "s0", "u2", rng, &fallback);
    CHECK(r.speaker_id == "s0");
    CHECK(r.utterance_id != "u2");
    counts[r.utterance_id] += 1;
  }
  CHECK(fallback == 0);
  REQUIRE(counts.size() == 5);
  std::vector<u64> freq;
  for (const auto& [id, n] : counts) freq.push_back((u64)n);
  // chi-square over 5 candidates, df = 4: 13.2767 is the 1% tail
  CHECK(testsup::chi_square_uniform(freq) < 13.2767);
}

TEST_CASE("sampling a single-utterance speaker falls back to the excluded record") {
  Manifest m;
  m.root = ".";
  UtteranceRecord r;
  r.utterance_id = "only";
  r.speaker_id = "solo";
  r.path = "solo/only.wav";
  r.sample_rate = 16000;
  r.n_samples = 640;
  m.records.push_back(r);
  m.rebuild_speakers();

  Rng rng(9);
  i64 fallback = 0;
  const auto& got = sample_other_utterance(m, "solo", "only", rng, &fallback);
  CHECK(got.utterance_id == "only");
  CHECK(fallback == 1);
  CHECK_THROWS_AS(sample_other_utterance(m, "ghost", "only", rng), ArgumentError);
}

TEST_CASE("sampling sequences reproduce under an equal rng state") {
  fs::path raw = make_raw_corpus();
  fs::path out = fresh_dir("seq");
  IngestOptions opt;
  opt.trim_multiple = 64;
  Manifest m = ingest_corpus(raw.string(), out.string(), opt);

  Rng r1(42), r2(42);
  for (int i = 0; i < 200; ++i) {
    const auto& a = sample_other_utterance(m, "alice", "alice_a1", r1);
    const auto& b = sample_other_utterance(m, "alice", "alice_a1", r2);
    CHECK(a.utterance_id == b.utterance_id);
  }
}

TEST_CASE("resampling preserves duration across rate pairs") {
  const int rates[] = {8000, 16000, 22050, 24000, 48000};
  for (int src_rate : rates) {
    Waveform w = tone(200, src_rate, (i64)(0.5 * src_rate));
    for (int dst_rate : rates) {
      Waveform out = resample(w, dst_rate);
      CHECK(out.rate == dst_rate);
      const double want = 0.5 * dst_rate;
      CHECK(std::abs((double)out.samples.size() - want) <= 2.0);
    }
  }
  // 24000 samples at 24 kHz land at exactly 16000 samples at 16 kHz
  Waveform w = tone(300, 24000, 24000);
  CHECK(resample(w, 16000).samples.size() == 16000);
}

TEST_CASE("toy corpus generates a deterministic multi-speaker tree") {
  fs::path root1 = fresh_dir("toy1");
  fs::path root2 = fresh_dir("toy2");
  ToyCorpusSpec spec;
  spec.n_speakers = 3;
  spec.utts_per_speaker = 2;
  spec.seed = 5;
  make_toy_corpus(root1.string(), spec);
  make_toy_corpus(root2.string(), spec);

  for (int s = 0; s < 3; ++s) {
    char spk[8];
    std::snprintf(spk, sizeof(spk), "s%02d", s);
    for (int u = 0; u < 2; ++u) {
      char utt[8];
      std::snprintf(utt, sizeof(utt), "u%02d", u);
      fs::path wav1 = root1 / spk / (std::string(utt) + ".wav");
      fs::path txt1 = root1 / spk / (std::string(utt) + ".txt");
      REQUIRE(fs::is_regular_file(wav1));
      REQUIRE(fs::is_regular_file(txt1));
      CHECK(read_bytes(wav1) == read_bytes(root2 / spk / (std::string(utt) + ".wav")));
      CHECK(read_bytes(txt1) == read_bytes(root2 / spk / (std::string(utt) + ".txt")));
    }
  }

  // speakers differ in pitch: f0 rises with the speaker index
  Waveform w0 = read_wav((root1 / "s00" / "u00.wav").string());
  Waveform w2 = read_wav((root1 / "s02" / "u00.wav").string());
  const double f0_a = testsup::autocorr_f0(w0.samples, w0.rate, 60, 400);
  const double f0_b = testsup::autocorr_f0(w2.samples, w2.rate, 60, 400);
  CHECK(f0_a > 60.0);
  CHECK(f0_b > f0_a + 20.0);

  // ingestable end to end
  fs::path out = fresh_dir("toy_ingested");
  IngestOptions opt;
  opt.trim_multiple = 64;
  Manifest m = ingest_corpus(root1.string(), out.string(), opt);
  CHECK(m.records.size() == 6);
  CHECK(m.speakers.size() == 3);
}
