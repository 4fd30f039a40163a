#include "pvc/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "pvc/eval.hpp"
#include "pvc/hash.hpp"
#include "pvc/model/net.hpp"
#include "pvc/trainer/trainer.hpp"

namespace fs = std::filesystem;

namespace pvc::cli {

namespace {

struct Logger {
  std::ofstream file;
  explicit Logger(const std::string& path) : file(path, std::ios::app) {}
  void line(const std::string& s) {
    std::cout << s << "\n";
    if (file) {
      file << s << "\n";
      file.flush();
    }
  }
  std::function<void(const std::string&)> fn() {
    return [this](const std::string& s) { line(s); };
  }
};

std::string timestamp_utc() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
  return buf;
}

void require_artifact(const std::string& path, const std::string& hint) {
  if (!fs::exists(path)) fail("missing prerequisite '" + path + "'; " + hint);
}

std::string sanitize_id(std::string s) {
  for (char& c : s)
    if (c == '/' || c == '\\') c = '_';
  return s;
}

bool is_signal_perturbation(const std::string& p) {
  return p == "vtlp" || p == "nansy" || p == "sr";
}

Waveform load_at_rate(const std::string& path, int rate) {
  Waveform w = read_wav(path);
  if (w.rate != rate) w = dsp::resample(w, rate);
  return w;
}

std::string resolve_split(const corpus::Manifest& m, const std::string& requested) {
  if (requested != "auto") return requested;
  for (const char* s : {"test", "val", "train"})
    if (!m.in_split(s).empty()) return s;
  return "train";
}

std::string read_sidecar_text(const std::string& wav_path) {
  std::ifstream in(fs::path(wav_path).replace_extension(".txt"));
  if (!in) return "";
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::unique_ptr<eval::AsrClient> make_asr(const trainer::PipelineConfig& cfg) {
  const trainer::EvalSettings& e = cfg.eval;
  if (e.asr == "mock") return std::make_unique<eval::MockAsr>(e.mock_sub_every);
  if (e.asr == "http") {
    require_arg(!e.asr_endpoint.empty(),
                "eval.asr = http needs eval.asr_endpoint (or PVC_ASR_ENDPOINT)");
    return std::make_unique<eval::HttpAsr>(e.asr_endpoint, e.asr_timeout_ms);
  }
  require_arg(!e.asr_command.empty(), "eval.asr = command needs eval.asr_command");
  return std::make_unique<eval::CommandAsr>(e.asr_command);
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  Tensor out({static_cast<i64>(rows.size()), rows.front().numel()});
  for (size_t i = 0; i < rows.size(); ++i)
    for (i64 k = 0; k < rows[i].numel(); ++k) out.at(static_cast<i64>(i), k) = rows[i].data[(size_t)k];
  return out;
}

// --- prerequisite checks, before any side effect ---------------------------

void check_prerequisites(const std::string& stage, const trainer::PipelineConfig& cfg,
                         const WorkLayout& wp) {
  if (stage == "prepare") {
    if (!cfg.data.synthetic) {
      require_arg(!cfg.data.raw_dir.empty(),
                  "prepare needs data.raw_dir (or data.synthetic = true)");
      require_artifact(cfg.data.raw_dir, "point data.raw_dir at the source corpus");
    }
    return;
  }
  if (stage == "convert") {
    require_arg(!cfg.convert_source.empty() && !cfg.convert_reference.empty(),
                "convert needs convert.source and convert.reference");
    require_artifact(cfg.convert_source, "point convert.source at a wav file");
    require_artifact(cfg.convert_reference, "point convert.reference at a wav file");
    const std::string ckpt =
        cfg.convert_checkpoint.empty() ? wp.student_ckpt : cfg.convert_checkpoint;
    require_artifact(ckpt, "run the train stage first (or set convert.checkpoint)");
    return;
  }

  require_artifact(wp.manifest, "run the prepare stage first");
  if (stage == "train-teacher") {
    if (cfg.teacher_perturbation != "none")
      require_artifact(wp.perturb_cache, "run the prepare stage first");
  } else if (stage == "gen-pseudo") {
    require_arg(cfg.train.n_pseudo >= 1, "gen-pseudo needs train.n_pseudo >= 1");
    require_artifact(wp.teacher_ckpt, "run the train-teacher stage first");
  } else if (stage == "train") {
    if (cfg.train.perturbation == "pseudo" && cfg.train.n_pseudo > 0)
      require_artifact(wp.pseudo_manifest, "run the gen-pseudo stage first");
    if (is_signal_perturbation(cfg.train.perturbation))
      require_artifact(wp.perturb_cache, "run the prepare stage first");
  } else if (stage == "eval") {
    const std::string ckpt = cfg.eval.checkpoint.empty() ? wp.student_ckpt : cfg.eval.checkpoint;
    require_artifact(ckpt, "run the train stage first (or set eval.checkpoint)");
  }
}

// --- stages -----------------------------------------------------------------

void do_prepare(const trainer::PipelineConfig& cfg, const WorkLayout& wp, Logger& log) {
  std::string raw = cfg.data.raw_dir;
  if (cfg.data.synthetic) {
    corpus::ToyCorpusSpec spec;
    spec.n_speakers = static_cast<int>(cfg.data.synthetic_speakers);
    spec.utts_per_speaker = static_cast<int>(cfg.data.synthetic_utts);
    spec.rate = cfg.model.stft.rate;
    spec.seed = derive_seed(cfg.seed, "toy-corpus");
    raw = wp.raw_synth;
    corpus::make_toy_corpus(raw, spec);
    log.line("[prepare] synthesized " +
             std::to_string(spec.n_speakers * spec.utts_per_speaker) + " utterances under " + raw);
  }

  corpus::IngestOptions opt;
  opt.target_rate = cfg.model.stft.rate;
  opt.trim_multiple = cfg.model.stft.hop;
  corpus::IngestReport rep;
  corpus::Manifest m = corpus::ingest_corpus(raw, wp.corpus_dir, opt, &rep);
  log.line("[prepare] " + rep.summary());

  corpus::SplitSpec split;
  split.train = cfg.data.train_frac;
  split.val = cfg.data.val_frac;
  split.test = cfg.data.test_frac;
  m = corpus::split_manifest(m, split, derive_seed(cfg.seed, "split"));
  corpus::write_manifest(m, wp.manifest);
  log.line("[prepare] manifest: " + wp.manifest + " (" + std::to_string(m.records.size()) +
           " utterances)");

  std::set<std::string> methods;
  if (cfg.teacher_perturbation != "none") methods.insert(cfg.teacher_perturbation);
  if (is_signal_perturbation(cfg.train.perturbation)) methods.insert(cfg.train.perturbation);
  for (const std::string& method : methods) {
    log.line("[prepare] perturbation cache '" + method + "': " +
             std::to_string(cfg.data.n_perturb) + " variants per train utterance");
    trainer::generate_perturb_cache(m, method, cfg.data.n_perturb,
                                    derive_seed(cfg.seed, "perturb"), wp.perturb_cache, log.fn());
  }
}

void log_outcome(const std::string& stage, const trainer::TrainOutcome& out, Logger& log) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "[%s] steps %lld..%lld done; checkpoint %s", stage.c_str(),
                (long long)out.start_step, (long long)out.end_step, out.checkpoint_path.c_str());
  log.line(buf);
  if (!out.trace.empty()) {
    const losses::LossBreakdown& b = out.trace.back();
    std::snprintf(buf, sizeof(buf),
                  "[%s] final losses: rec %.4f kl %.4f adv_d %.4f adv_g %.4f fm %.4f",
                  stage.c_str(), b.rec, b.kl, b.adv_d, b.adv_g, b.fm);
    log.line(buf);
  }
  if (out.speaker_selections > 0) {
    std::snprintf(buf, sizeof(buf), "[%s] speaker substitutions: %lld of %lld draws",
                  stage.c_str(), (long long)out.speaker_substitutions,
                  (long long)out.speaker_selections);
    log.line(buf);
  }
}

void do_train_teacher(const trainer::PipelineConfig& cfg, const WorkLayout& wp, Logger& log) {
  corpus::Manifest m = corpus::read_manifest(wp.manifest);
  trainer::TrainOutcome out = trainer::train_teacher(cfg, m, wp.teacher_dir, wp.perturb_cache,
                                                     log.fn());
  log_outcome("train-teacher", out, log);
}

void do_gen_pseudo(const trainer::PipelineConfig& cfg, const WorkLayout& wp, Logger& log) {
  corpus::Manifest m = corpus::read_manifest(wp.manifest);
  pseudo::TeacherHandle teacher = trainer::load_model_handle(cfg, wp.teacher_ckpt);
  log.line("[gen-pseudo] teacher " + teacher.tag + ", " + std::to_string(cfg.train.n_pseudo) +
           " pseudo utterances per source");
  std::vector<pseudo::PseudoSet> sets = pseudo::generate_pseudo_corpus(
      teacher, m, cfg.train.n_pseudo, cfg.seed, wp.pseudo_dir, log.fn());
  pseudo::write_pseudo_manifest(sets, wp.pseudo_manifest);
  log.line("[gen-pseudo] manifest: " + wp.pseudo_manifest + " (" + std::to_string(sets.size()) +
           " sources)");
}

void do_train(const trainer::PipelineConfig& cfg, const WorkLayout& wp, Logger& log) {
  corpus::Manifest m = corpus::read_manifest(wp.manifest);
  trainer::TrainOutcome out = trainer::train_pseudovc(cfg, m, wp.student_dir, wp.pseudo_manifest,
                                                      log.fn());
  log_outcome("train", out, log);
}

void do_convert(const trainer::PipelineConfig& cfg, const WorkLayout& wp, Logger& log) {
  const std::string ckpt =
      cfg.convert_checkpoint.empty() ? wp.student_ckpt : cfg.convert_checkpoint;
  pseudo::TeacherHandle h = trainer::load_model_handle(cfg, ckpt);
  const int rate = cfg.model.stft.rate;
  Waveform src = load_at_rate(cfg.convert_source, rate);
  Waveform ref = load_at_rate(cfg.convert_reference, rate);

  Rng rng(derive_seed(cfg.seed, "convert"));
  Waveform out_w = model::convert(*h.net, *h.content, *h.speaker, src, ref,
                                  cfg.eval.temperature, &rng);

  auto wav_tag = [](const std::string& p) {
    const fs::path fp(p);
    const std::string parent = fp.parent_path().filename().string();
    return parent.empty() ? fp.stem().string() : parent + "_" + fp.stem().string();
  };
  std::string out_path = cfg.convert_out;
  if (out_path.empty())
    out_path = wp.converted_dir + "/" + wav_tag(cfg.convert_source) + "_as_" +
               wav_tag(cfg.convert_reference) + ".wav";
  fs::create_directories(fs::path(out_path).parent_path());
  write_wav(out_path, out_w);
  log.line("[convert] " + out_path + " (" + std::to_string(out_w.size()) + " samples at " +
           std::to_string(out_w.rate) + " Hz, model " + h.tag + ")");
}

void do_eval(const trainer::PipelineConfig& cfg, const WorkLayout& wp, Logger& log) {
  corpus::Manifest m = corpus::read_manifest(wp.manifest);
  const std::string split = resolve_split(m, cfg.eval.split);

  std::vector<std::string> targets = cfg.eval.target_speakers;
  if (targets.empty()) {
    std::set<std::string> seen;
    for (const auto* r : m.in_split(split)) seen.insert(r->speaker_id);
    targets.assign(seen.begin(), seen.end());
  }
  require(!targets.empty(), "eval: split '" + split + "' holds no speakers");

  Rng rng(derive_seed(cfg.seed, "eval"));
  std::vector<eval::EvalPair> pairs =
      eval::build_eval_set(m, split, cfg.eval.n_sources, targets, rng);
  const std::string ckpt = cfg.eval.checkpoint.empty() ? wp.student_ckpt : cfg.eval.checkpoint;
  pseudo::TeacherHandle h = trainer::load_model_handle(cfg, ckpt);
  std::unique_ptr<eval::AsrClient> asr = make_asr(cfg);
  log.line("[eval] " + std::to_string(pairs.size()) + " pairs (" + std::to_string(targets.size()) +
           " target speakers, split '" + split + "'), model " + h.tag + ", asr " +
           asr->describe());

  const std::string conv_dir = wp.eval_dir + "/converted";
  fs::create_directories(conv_dir);

  std::map<std::string, Tensor> ref_emb;     // target speaker -> reference embedding
  std::map<std::string, Waveform> ref_wavs;  // reference utterance cache per target
  eval::EvalReport rep;
  std::vector<Tensor> conv_embs, src_embs;
  std::set<std::string> src_embedded;
  const size_t kDiversityCap = 64;

  for (size_t i = 0; i < pairs.size(); ++i) {
    eval::EvalPair& p = pairs[i];
    const corpus::UtteranceRecord& src_rec = m.by_id(p.source_id);
    Waveform src = read_wav(m.resolve(src_rec));
    if (!ref_wavs.count(p.target_speaker_id)) {
      ref_wavs[p.target_speaker_id] = read_wav(m.resolve(m.by_id(p.reference_id)));
      ref_emb[p.target_speaker_id] = h.speaker->embed(ref_wavs[p.target_speaker_id]).values;
    }
    const Waveform& ref = ref_wavs[p.target_speaker_id];

    Waveform conv = model::convert(*h.net, *h.content, *h.speaker, src, ref,
                                   cfg.eval.temperature, &rng);
    p.converted_path = conv_dir + "/" + sanitize_id(p.source_id) + "_to_" +
                       sanitize_id(p.target_speaker_id) + ".wav";
    write_wav(p.converted_path, conv);

    eval::PairResult pr;
    pr.pair = p;
    Tensor emb = h.speaker->embed(conv).values;
    pr.secs = eval::secs(emb, ref_emb[p.target_speaker_id]);
    if (conv_embs.size() < kDiversityCap) conv_embs.push_back(emb);
    if (src_embs.size() < kDiversityCap && src_embedded.insert(p.source_id).second)
      src_embs.push_back(h.speaker->embed(src).values);

    const std::string hint = read_sidecar_text(m.resolve(src_rec));
    eval::TranscribeOutcome tr = eval::transcribe_batch(
        {conv}, {hint}, *asr, cfg.eval.asr_retries, cfg.eval.asr_backoff_ms);
    pr.asr_ok = tr.texts[0].has_value();
    if (pr.asr_ok) {
      const std::vector<std::string> ref_toks = eval::normalize_text(hint);
      const std::vector<std::string> hyp_toks = eval::normalize_text(*tr.texts[0]);
      pr.ref_tokens = static_cast<i64>(ref_toks.size());
      pr.wer_edits = eval::word_edit_distance(ref_toks, hyp_toks);
    }
    rep.pairs.push_back(std::move(pr));
    if ((i + 1) % 25 == 0 || i + 1 == pairs.size())
      log.line("[eval] " + std::to_string(i + 1) + "/" + std::to_string(pairs.size()) + " pairs");
  }

  if (src_embs.size() >= 2) rep.diversity["source"] = eval::mean_pairwise_distance(stack_rows(src_embs));
  if (conv_embs.size() >= 2)
    rep.diversity["converted"] = eval::mean_pairwise_distance(stack_rows(conv_embs));
  if (fs::exists(wp.pseudo_manifest)) {
    // timbre spread inside each source's pseudo set, averaged over sources
    std::vector<pseudo::PseudoSet> sets = pseudo::read_pseudo_manifest(wp.pseudo_manifest);
    double acc = 0.0;
    i64 used = 0;
    for (const pseudo::PseudoSet& s : sets) {
      if (used >= 16) break;
      if (s.entries.size() < 2) continue;
      std::vector<Tensor> embs;
      for (const pseudo::PseudoEntry& e : s.entries)
        embs.push_back(h.speaker->embed(read_wav(wp.pseudo_dir + "/" + e.pseudo_path)).values);
      acc += eval::mean_pairwise_distance(stack_rows(embs));
      used += 1;
    }
    if (used > 0) rep.diversity["pseudo"] = acc / static_cast<double>(used);
  }

  rep.config_snapshot = cfg.to_map();
  eval::finalize_report(rep, derive_seed(cfg.seed, "bootstrap"));
  eval::write_eval_report(rep, wp.eval_dir);

  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "[eval] mean SECS %.4f (95%% CI [%.4f, %.4f]); WER %.4f over %lld pairs; "
                "%lld ASR failures",
                rep.mean_secs, rep.secs_ci.lo, rep.secs_ci.hi, rep.wer, (long long)rep.wer_pairs,
                (long long)rep.asr_failures);
  log.line(buf);
  log.line("[eval] report: " + wp.eval_dir);
}

void do_tsne(const trainer::PipelineConfig& cfg, const WorkLayout& wp, Logger& log) {
  corpus::Manifest m = corpus::read_manifest(wp.manifest);
  const std::string split = resolve_split(m, cfg.eval.split);
  trainer::Backends backends = trainer::make_backends(cfg);

  std::vector<const corpus::UtteranceRecord*> recs = m.in_split(split);
  std::sort(recs.begin(), recs.end(),
            [](const auto* a, const auto* b) { return a->utterance_id < b->utterance_id; });

  std::vector<Tensor> embs;
  std::vector<std::string> labels;
  for (const auto* r : recs) {
    embs.push_back(backends.speaker->embed(read_wav(m.resolve(*r))).values);
    labels.push_back(r->speaker_id);
  }
  const std::string conv_dir = wp.eval_dir + "/converted";
  if (fs::is_directory(conv_dir)) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(conv_dir))
      if (e.path().extension() == ".wav") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    for (const std::string& f : files) {
      embs.push_back(backends.speaker->embed(read_wav(f)).values);
      labels.push_back("converted");
    }
  }
  require(embs.size() >= 2, "tsne: need at least two utterances in split '" + split + "'");
  log.line("[tsne] projecting " + std::to_string(embs.size()) + " embeddings (split '" + split +
           "')");

  Tensor xy = eval::project_embeddings(stack_rows(embs), cfg.tsne_perplexity, cfg.tsne_iters,
                                       cfg.tsne_seed);
  fs::create_directories(wp.tsne_dir);
  eval::write_projection(xy, labels, wp.tsne_dir + "/projection.svg",
                         wp.tsne_dir + "/projection.txt");
  log.line("[tsne] wrote " + wp.tsne_dir + "/projection.svg");
}

}  // namespace

WorkLayout work_layout(const std::string& work_dir) {
  WorkLayout wp;
  wp.raw_synth = work_dir + "/raw_synth";
  wp.corpus_dir = work_dir + "/corpus";
  wp.manifest = wp.corpus_dir + "/manifest.jsonl";
  wp.perturb_cache = work_dir + "/perturb_cache";
  wp.teacher_dir = work_dir + "/teacher";
  wp.teacher_ckpt = wp.teacher_dir + "/checkpoint.bin";
  wp.pseudo_dir = work_dir + "/pseudo";
  wp.pseudo_manifest = wp.pseudo_dir + "/pseudo_manifest.jsonl";
  wp.student_dir = work_dir + "/student";
  wp.student_ckpt = wp.student_dir + "/checkpoint.bin";
  wp.converted_dir = work_dir + "/converted";
  wp.eval_dir = work_dir + "/eval";
  wp.tsne_dir = work_dir + "/tsne";
  wp.runs_dir = work_dir + "/runs";
  return wp;
}

int run_command(const Command& cmd) {
  static const std::set<std::string> kStages = {"prepare", "train-teacher", "gen-pseudo",
                                                "train",   "convert",       "eval",
                                                "tsne"};
  try {
    if (!kStages.count(cmd.name)) fail_arg("unknown command '" + cmd.name + "'");

    trainer::PipelineConfig cfg =
        trainer::load_config(cmd.config_path, cmd.overrides, cmd.profile_flag, cmd.seed_flag);
    if (const char* ep = std::getenv("PVC_ASR_ENDPOINT"); ep && *ep) cfg.eval.asr_endpoint = ep;

    const WorkLayout wp = work_layout(cfg.work_dir);
    check_prerequisites(cmd.name, cfg, wp);

    std::string run_dir = cfg.run_dir;
    if (run_dir.empty()) {
      const std::string base =
          wp.runs_dir + "/" + cmd.name + "-" + to_hex(cfg.hash()) + "-" + timestamp_utc();
      run_dir = base;
      for (int k = 2; fs::exists(run_dir); ++k) run_dir = base + "-" + std::to_string(k);
    }
    fs::create_directories(run_dir);
    trainer::write_config_snapshot(cfg, run_dir + "/config.txt");
    Logger log(run_dir + "/log.txt");
    log.line("[" + cmd.name + "] run dir: " + run_dir);

    if (cmd.name == "prepare") do_prepare(cfg, wp, log);
    else if (cmd.name == "train-teacher") do_train_teacher(cfg, wp, log);
    else if (cmd.name == "gen-pseudo") do_gen_pseudo(cfg, wp, log);
    else if (cmd.name == "train") do_train(cfg, wp, log);
    else if (cmd.name == "convert") do_convert(cfg, wp, log);
    else if (cmd.name == "eval") do_eval(cfg, wp, log);
    else do_tsne(cfg, wp, log);
    return 0;
  } catch (const ArgumentError& e) {
    // config validation may legitimately list several problems
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ';');
    std::cerr << "error: " << msg << "\n";
    return 2;
  }
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"one-shot voice conversion pipeline (PseudoVC)"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, profile;
  std::vector<std::string> sets;
  u64 seed = 0;
  app.add_option("--config", config_path, "config file (key = value lines)");
  app.add_option("--set", sets, "override, key=value (repeatable)")->type_size(1);
  app.add_option("--profile", profile, "toy or paper")
      ->check(CLI::IsMember({"toy", "paper"}));
  auto* seed_opt = app.add_option("--seed", seed, "master seed");

  app.add_subcommand("prepare", "ingest (or synthesize) the corpus, split it, fill caches");
  app.add_subcommand("train-teacher", "train the teacher model on perturbed inputs");
  app.add_subcommand("gen-pseudo", "generate the pseudo corpus with the teacher");
  app.add_subcommand("train", "train the student with pseudo conversion + speaker sampling");
  app.add_subcommand("convert", "convert one source wav to a reference speaker's voice");
  app.add_subcommand("eval", "build eval pairs, convert, score SECS and WER");
  app.add_subcommand("tsne", "project speaker embeddings to 2-D");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  Command cmd;
  cmd.name = app.get_subcommands().front()->get_name();
  cmd.config_path = config_path;
  cmd.overrides = sets;
  cmd.profile_flag = profile;
  if (seed_opt->count() > 0) cmd.seed_flag = seed;
  return run_command(cmd);
}

}  // namespace pvc::cli
