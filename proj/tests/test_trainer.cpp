#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pvc/corpus.hpp"
#include "pvc/dsp/perturb.hpp"
#include "pvc/hash.hpp"
#include "pvc/model/checkpoint.hpp"
#include "pvc/trainer/trainer.hpp"
#include "support/modcheck.hpp"

namespace fs = std::filesystem;
using namespace pvc;

namespace {

model::ModelConfig tiny_config() {
  model::ModelConfig c = model::ModelConfig::toy();
  c.d_content = 6;
  c.d_z = 4;
  c.d_spk = 3;
  c.hidden = 8;
  c.wn_layers = 2;
  c.wn_kernel = 5;
  c.wn_dilation_growth = 1;
  c.n_flow_couplings = 2;
  c.flow_wn_layers = 1;
  c.upsample = {2, 2};
  c.gen_ch0 = 8;
  c.resblock_kernels = {3};
  c.resblock_dilations = {1, 3};
  c.periods = {2, 3};
  c.n_scales = 1;
  c.disc_ch0 = 4;
  c.stft.rate = 16000;
  c.stft.n_fft = 8;
  c.stft.hop = 4;
  c.stft.win = 8;
  c.mel.n_mels = 4;
  c.mel.fmin = 0.0;
  c.mel.fmax = 0.0;
  c.validate();
  return c;
}

std::string fresh_dir(const std::string& name) {
  std::string root = "tmp_trainer_" + name;
  fs::remove_all(root);
  fs::create_directories(root);
  return root;
}

struct LoopFixture {
  std::string root;
  corpus::Manifest m;
  trainer::PipelineConfig cfg;
};

LoopFixture make_loop_fixture(const std::string& name, int n_spk = 3, int n_utt = 3) {
  LoopFixture f;
  f.root = fresh_dir(name);
  corpus::ToyCorpusSpec spec;
  spec.n_speakers = n_spk;
  spec.utts_per_speaker = n_utt;
  spec.min_seconds = 0.3;
  spec.max_seconds = 0.5;
  spec.seed = 17;
  corpus::make_toy_corpus(f.root + "/raw", spec);
  corpus::IngestOptions opt;
  opt.trim_multiple = 64;
  f.m = corpus::ingest_corpus(f.root + "/raw", f.root + "/corpus", opt);

  f.cfg = trainer::PipelineConfig::defaults("toy");
  f.cfg.seed = 5;
  f.cfg.work_dir = f.root + "/work";
  f.cfg.train.batch_size = 2;
  f.cfg.train.segment_frames = 16;
  f.cfg.train.total_steps = 4;
  f.cfg.train.checkpoint_every = 2;
  f.cfg.train.log_every = 4;
  f.cfg.train.n_pseudo = 2;
  return f;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

u64 fingerprint_of(nn::Module& mod) {
  return model::params_fingerprint(mod.parameters(), 0);
}

}  // namespace

TEST_CASE("config: paper profile defaults from an empty file") {
  std::string dir = fresh_dir("cfg_paper");
  std::string path = dir + "/empty.cfg";
  std::ofstream(path) << "";

  trainer::PipelineConfig cfg = trainer::load_config(path, {}, "paper");
  CHECK(cfg.profile == "paper");
  CHECK(cfg.train.alpha == doctest::Approx(0.01));
  CHECK(cfg.train.n_pseudo == 25);
  CHECK(cfg.train.batch_size == 64);
  CHECK(cfg.train.segment_frames == 128);
  CHECK(cfg.train.total_steps == 200000);
  CHECK(cfg.model.d_z == 192);
  CHECK(cfg.model.stft.hop == 320);
  CHECK(cfg.teacher_perturbation == "sr");

  // the paper profile pins its published training shape
  CHECK_THROWS_AS((void)trainer::load_config(path, {"train.batch_size=8"}, "paper"),
                  ArgumentError);
}

TEST_CASE("config: out-of-range alpha is rejected") {
  CHECK_THROWS_AS((void)trainer::load_config("", {"train.alpha=1.5"}, "toy"), ArgumentError);
  CHECK_THROWS_AS((void)trainer::load_config("", {"train.alpha=-0.1"}, "toy"), ArgumentError);
  trainer::PipelineConfig ok = trainer::load_config("", {"train.alpha=1.0"}, "toy");
  CHECK(ok.train.alpha == doctest::Approx(1.0));
}

TEST_CASE("config: every problem is reported in one pass") {
  std::string dir = fresh_dir("cfg_problems");
  std::string path = dir + "/bad.cfg";
  {
    std::ofstream out(path);
    out << "# comment line\n";
    out << "train.alpha = 2\n";
    out << "bogus.key = 1\n";
    out << "train.batch_size = zero\n";
  }
  try {
    (void)trainer::load_config(path, {}, "toy");
    FAIL("expected a validation error");
  } catch (const ArgumentError& e) {
    std::string msg = e.what();
    CHECK(msg.find("train.alpha") != std::string::npos);
    CHECK(msg.find("unknown key 'bogus.key'") != std::string::npos);
    CHECK(msg.find("train.batch_size") != std::string::npos);
  }
}

TEST_CASE("config: overrides beat the file and snapshots round-trip") {
  std::string dir = fresh_dir("cfg_snap");
  std::string path = dir + "/base.cfg";
  {
    std::ofstream out(path);
    out << "train.alpha = 0.05\n";
    out << "model.hidden = 24\n";
  }
  trainer::PipelineConfig cfg =
      trainer::load_config(path, {"train.alpha=0.2", "work.dir=" + dir + "/w"}, "toy", 99);
  CHECK(cfg.train.alpha == doctest::Approx(0.2));
  CHECK(cfg.model.hidden == 24);
  CHECK(cfg.seed == 99);

  std::string snap = dir + "/snapshot.cfg";
  trainer::write_config_snapshot(cfg, snap);
  trainer::PipelineConfig cfg2 = trainer::load_config(snap, {});
  CHECK(cfg2.to_map() == cfg.to_map());
  CHECK(cfg2.hash() == cfg.hash());

  trainer::PipelineConfig cfg3 = trainer::load_config(snap, {"seed=100"});
  CHECK(cfg3.hash() != cfg.hash());
}

TEST_CASE("config: syntax errors carry the origin and line") {
  CHECK_THROWS_WITH_AS((void)trainer::parse_config_text("a = 1\nnonsense line\n", "mem"),
                       doctest::Contains("mem:2"), ArgumentError);
  auto pairs = trainer::parse_config_text("a = 1 # trailing comment\n\nb=2\n", "mem");
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0] == std::pair<std::string, std::string>("a", "1"));
  CHECK(pairs[1] == std::pair<std::string, std::string>("b", "2"));
}

TEST_CASE("select_inputs: alpha endpoints and binomial bands") {
  LoopFixture f = make_loop_fixture("select", 3, 3);
  trainer::DataContext ctx;
  ctx.manifest = &f.m;

  std::vector<corpus::UtteranceRecord> train;
  for (const auto& r : f.m.records)
    if (r.split == "train") train.push_back(r);
  REQUIRE(train.size() == 9);

  auto run_draws = [&](double alpha, i64 n, Rng& rng) {
    i64 subs = 0;
    for (i64 i = 0; i < n; ++i) {
      const auto& rec = train[rng.uniform_int((i64)train.size())];
      auto sel = trainer::select_inputs(rec, nullptr, "none", alpha, ctx, rng);
      if (sel.speaker_substituted) {
        subs += 1;
        CHECK(sel.speaker_choice != rec.utterance_id);
      } else {
        CHECK(sel.speaker_choice == rec.utterance_id);
      }
      CHECK(sel.content_choice == rec.utterance_id);
    }
    return subs;
  };

  SUBCASE("alpha 0 never substitutes, alpha 1 always does") {
    Rng rng(1);
    CHECK(run_draws(0.0, 400, rng) == 0);
    CHECK(run_draws(1.0, 400, rng) == 400);
  }

  SUBCASE("alpha 0.01 over 1e5 draws stays inside the published window") {
    // File reads dominate, so the big-draw cases run on a tiny in-memory
    // style loop: same corpus, sequential scan instead of CHECK-per-draw.
    Rng rng(2);
    i64 n = 100000, subs = 0;
    for (i64 i = 0; i < n; ++i) {
      const auto& rec = train[rng.uniform_int((i64)train.size())];
      auto sel = trainer::select_inputs(rec, nullptr, "none", 0.01, ctx, rng);
      if (sel.speaker_substituted) subs += 1;
    }
    double freq = (double)subs / (double)n;
    CHECK(freq >= 0.0075);
    CHECK(freq <= 0.0125);
    // and the tighter 99% binomial band
    double sd = std::sqrt(0.01 * 0.99 / (double)n);
    CHECK(freq >= 0.01 - 2.576 * sd);
    CHECK(freq <= 0.01 + 2.576 * sd);
  }

  SUBCASE("alpha 0.1 over 1e5 draws lands in the 99% band") {
    Rng rng(3);
    i64 n = 100000, subs = 0;
    for (i64 i = 0; i < n; ++i) {
      const auto& rec = train[rng.uniform_int((i64)train.size())];
      auto sel = trainer::select_inputs(rec, nullptr, "none", 0.1, ctx, rng);
      if (sel.speaker_substituted) subs += 1;
    }
    double freq = (double)subs / (double)n;
    double sd = std::sqrt(0.1 * 0.9 / (double)n);
    CHECK(freq >= 0.1 - 2.576 * sd);
    CHECK(freq <= 0.1 + 2.576 * sd);
  }
}

TEST_CASE("select_inputs: single-utterance speaker falls back to the source") {
  std::string root = fresh_dir("select_single");
  corpus::ToyCorpusSpec spec;
  spec.n_speakers = 2;
  spec.utts_per_speaker = 1;
  spec.min_seconds = 0.3;
  spec.max_seconds = 0.4;
  spec.seed = 9;
  corpus::make_toy_corpus(root + "/raw", spec);
  corpus::IngestOptions opt;
  opt.trim_multiple = 64;
  corpus::Manifest m = corpus::ingest_corpus(root + "/raw", root + "/corpus", opt);

  trainer::DataContext ctx;
  ctx.manifest = &m;
  Rng rng(4);
  i64 fallbacks = 0;
  auto sel = trainer::select_inputs(m.records[0], nullptr, "none", 1.0, ctx, rng, &fallbacks);
  CHECK(sel.speaker_substituted);
  CHECK(sel.speaker_choice == m.records[0].utterance_id);
  CHECK(fallbacks == 1);
}

TEST_CASE("select_inputs: pseudo content comes from the set, empty set degrades to source") {
  LoopFixture f = make_loop_fixture("select_pseudo", 2, 2);

  // a fake pseudo set: copies of a train utterance under the pseudo layout
  const auto& rec = f.m.records[0];
  Waveform src = read_wav(f.m.resolve(rec));
  std::string proot = f.root + "/pseudo_root";
  pseudo::PseudoSet set;
  set.source_id = rec.utterance_id;
  for (int k = 0; k < 2; ++k) {
    pseudo::PseudoEntry e;
    e.source_id = rec.utterance_id;
    e.pseudo_path = "pseudo/tag/" + rec.utterance_id + "/" + std::to_string(k) + ".wav";
    e.reference_id = "ref";
    e.reference_speaker = "s01";
    e.teacher_tag = "tag";
    fs::create_directories(fs::path(proot + "/" + e.pseudo_path).parent_path());
    write_wav(proot + "/" + e.pseudo_path, src);
    set.entries.push_back(e);
  }

  trainer::DataContext ctx;
  ctx.manifest = &f.m;
  ctx.pseudo_root = proot;

  Rng rng(5);
  auto sel = trainer::select_inputs(rec, &set, "pseudo", 0.0, ctx, rng);
  CHECK(sel.content_choice.substr(0, 7) == "pseudo/");
  CHECK(sel.content.samples.size() == src.samples.size());

  pseudo::PseudoSet empty;
  empty.source_id = rec.utterance_id;
  auto sel2 = trainer::select_inputs(rec, &empty, "pseudo", 0.0, ctx, rng);
  CHECK(sel2.content_choice == rec.utterance_id);
}

TEST_CASE("select_inputs: perturbation cache miss is fatal with a hint") {
  LoopFixture f = make_loop_fixture("select_perturb", 2, 2);
  trainer::DataContext ctx;
  ctx.manifest = &f.m;
  ctx.perturb_root = f.root + "/cache";
  ctx.n_perturb = 2;
  ctx.perturb_seed_base = derive_seed(f.cfg.seed, "perturb");

  Rng rng(6);
  CHECK_THROWS_WITH_AS(
      (void)trainer::select_inputs(f.m.records[0], nullptr, "vtlp", 0.0, ctx, rng),
      doctest::Contains("prepare"), FatalError);

  trainer::generate_perturb_cache(f.m, "vtlp", 2, ctx.perturb_seed_base, ctx.perturb_root);
  auto sel = trainer::select_inputs(f.m.records[0], nullptr, "vtlp", 0.0, ctx, rng);
  Waveform src = read_wav(f.m.resolve(f.m.records[0]));
  CHECK(sel.content.samples.size() == src.samples.size());
  CHECK(sel.content_choice.find(ctx.perturb_root) == 0);
}

TEST_CASE("crop_segment: uniform start, padding and alignment") {
  Rng rng(7);
  const i64 hop = 64;

  auto make_pair = [&](i64 n) {
    trainer::SelectedInputs sel;
    Waveform w;
    w.rate = 16000;
    w.samples.resize(n);
    for (i64 i = 0; i < n; ++i) w.samples[i] = std::sin(0.01 * (double)i);
    sel.content = w;
    sel.speaker = w;
    return std::make_pair(sel, w);
  };

  SUBCASE("long grid: start covers [0, grid - segment] and hits both ends") {
    auto [sel, target] = make_pair(200 * hop);
    i64 lo = 1 << 30, hi = -1;
    for (int i = 0; i < 2000; ++i) {
      auto item = trainer::crop_segment("u", sel, target, hop, 128, rng);
      CHECK(item.grid_frames == 200);
      REQUIRE(item.crop_start_frame >= 0);
      REQUIRE(item.crop_start_frame <= 72);
      lo = std::min(lo, item.crop_start_frame);
      hi = std::max(hi, item.crop_start_frame);
    }
    CHECK(lo == 0);
    CHECK(hi == 72);
  }

  SUBCASE("short grid: zero-padded to the segment and start pinned to 0") {
    auto [sel, target] = make_pair(50 * hop);
    auto item = trainer::crop_segment("u", sel, target, hop, 128, rng);
    CHECK(item.crop_start_frame == 0);
    CHECK(item.grid_frames == 50);
    CHECK((i64)item.target_waveform.samples.size() == 128 * hop);
    CHECK((i64)item.content_input.samples.size() == 128 * hop);
    for (i64 i = 50 * hop; i < 128 * hop; ++i) {
      CHECK(item.target_waveform.samples[i] == 0.0);
      CHECK(item.content_input.samples[i] == 0.0);
    }
  }

  SUBCASE("one window: the same crop indexes content and target") {
    auto [sel, target] = make_pair(40 * hop);
    for (i64 i = 0; i < 40 * hop; ++i) sel.content.samples[i] = (double)i;
    auto item = trainer::crop_segment("u", sel, target, hop, 8, rng);
    const i64 s = item.crop_start_frame * hop;
    for (i64 i = 0; i < 8 * hop; ++i) {
      CHECK(item.content_input.samples[s + i] == (double)(s + i));
      CHECK(item.target_waveform.samples[s + i] == target.samples[s + i]);
    }
  }

  SUBCASE("mismatched content length is rejected") {
    auto [sel, target] = make_pair(40 * hop);
    sel.content.samples.pop_back();
    CHECK_THROWS_AS((void)trainer::crop_segment("u", sel, target, hop, 8, rng), ArgumentError);
  }
}

namespace {

// Mirrors the generator-side graph of a training step so the total can be
// differentiated without touching the optimizers.
struct StepGraph {
  Tensor xc, xlin, xmel, xwav, gemb, mask;

  static StepGraph random(const model::ModelConfig& mc, i64 seg, Rng& rng) {
    StepGraph s;
    const i64 span = seg * mc.stft.hop;
    s.xc = Tensor({1, mc.d_content, seg});
    s.xlin = Tensor({1, mc.stft.bins(), seg});
    s.xmel = Tensor({1, mc.mel.n_mels, seg});
    s.xwav = Tensor({1, 1, span});
    s.gemb = Tensor({1, mc.d_spk, 1});
    s.mask = Tensor({1, 1, seg});
    for (auto& v : s.xc.data) v = rng.normal();
    for (auto& v : s.xlin.data) v = std::abs(rng.normal()) + 0.05;
    for (auto& v : s.xmel.data) v = rng.normal();
    for (auto& v : s.xwav.data) v = 0.5 * rng.normal();
    double norm = 0.0;
    for (auto& v : s.gemb.data) {
      v = rng.normal();
      norm += v * v;
    }
    for (auto& v : s.gemb.data) v /= std::sqrt(norm);
    for (auto& v : s.mask.data) v = 1.0;
    return s;
  }
};

nn::Var total_g_of(model::SynthModel& net, model::DiscriminatorBank& disc,
                   const dsp::FeatureExtractor& feats, const StepGraph& s,
                   const losses::LossWeights& w, Rng& rng) {
  nn::Var vlin(s.xlin), vg(s.gemb), vc(s.xc), vwav(s.xwav);
  auto [z, q] = net.posterior(vlin, vg, rng, 1.0);
  auto [z_p, log_det] = net.flow_forward(z, vg);
  model::GaussianSeq p = net.bottleneck(vc);
  nn::Var y = net.decode(z, vg);
  model::DiscOutput d_real = disc.forward(vwav);
  model::DiscOutput d_fake = disc.forward(y);
  auto [adv_d, adv_g] = losses::adversarial(d_real.logits, d_fake.logits);
  (void)adv_d;
  nn::Var fm = losses::feature_matching(d_real.features, d_fake.features);
  nn::Var mel_pred = nn::mul_mask(feats.mel(y), s.mask);
  nn::Var rec = losses::recon(nn::Var(s.xmel), mel_pred);
  nn::Var klv = losses::kl(q, z, z_p, log_det, p);
  return losses::weighted_generator_total(rec, klv, adv_g, fm, w);
}

}  // namespace

TEST_CASE("training_step: total_g gradient matches central differences on 2 frames") {
  model::ModelConfig mc = tiny_config();
  Rng init(mix64(11));
  model::SynthModel net(mc, init);
  model::DiscriminatorBank disc(mc, init);
  dsp::FeatureExtractor feats(mc.stft, mc.mel);
  losses::LossWeights w;

  Rng data(mix64(12));
  StepGraph s = StepGraph::random(mc, 2, data);

  Rng noise(mix64(13));
  const auto noise_state = noise.state();
  auto loss_fn = [&]() {
    noise.set_state(noise_state);
    return total_g_of(net, disc, feats, s, w, noise);
  };
  testsup::module_grad_check(net, loss_fn, 1e-3, 6);
}

TEST_CASE("training_step: optimizer alternation keeps parameter sets disjoint") {
  model::ModelConfig mc = tiny_config();
  Rng init(mix64(21));
  model::SynthModel net(mc, init);
  model::DiscriminatorBank disc(mc, init);
  dsp::FeatureExtractor feats(mc.stft, mc.mel);
  losses::LossWeights w;

  nn::AdamW::Config oc;
  nn::AdamW opt_g(net.parameters(), oc);
  nn::AdamW opt_d(disc.parameters(), oc);

  Rng data(mix64(22));
  StepGraph s = StepGraph::random(mc, 4, data);

  const u64 g0 = fingerprint_of(net);
  const u64 d0 = fingerprint_of(disc);

  // discriminator phase: the generator is fenced off by detach
  Rng noise(mix64(23));
  {
    nn::Var vlin(s.xlin), vg(s.gemb), vwav(s.xwav);
    auto [z, q] = net.posterior(vlin, vg, noise, 1.0);
    (void)q;
    nn::Var y = net.decode(z, vg);
    model::DiscOutput d_real = disc.forward(vwav);
    model::DiscOutput d_fake = disc.forward(nn::detach(y));
    auto [adv_d, adv_g] = losses::adversarial(d_real.logits, d_fake.logits);
    (void)adv_g;
    opt_d.zero_grad();
    nn::backward(adv_d);
    for (const auto& [name, p] : net.parameters()) {
      CAPTURE(name);
      CHECK(p.grad().numel() == 0);
    }
    opt_d.step();
  }
  const u64 d1 = fingerprint_of(disc);
  CHECK(fingerprint_of(net) == g0);
  CHECK(d1 != d0);

  // generator phase: discriminator values must not move
  {
    Rng noise2(mix64(23));
    nn::Var total = total_g_of(net, disc, feats, s, w, noise2);
    opt_g.zero_grad();
    nn::backward(total);
    opt_g.step();
  }
  CHECK(fingerprint_of(disc) == d1);
  CHECK(fingerprint_of(net) != g0);
}

TEST_CASE("training_step: deterministic, updates both nets, masks padded frames") {
  model::ModelConfig mc = tiny_config();
  const i64 hop = mc.stft.hop;

  auto make_setup = [&](u64 seed) {
    struct Setup {
      std::unique_ptr<model::SynthModel> net;
      std::unique_ptr<model::DiscriminatorBank> disc;
      std::unique_ptr<model::ToyContentBackend> content;
      std::unique_ptr<model::ToySpeakerBackend> speaker;
      std::unique_ptr<dsp::FeatureExtractor> feats;
      std::unique_ptr<nn::AdamW> opt_g, opt_d;
      trainer::TrainContext ctx;
    };
    Setup st;
    Rng init(mix64(seed));
    st.net = std::make_unique<model::SynthModel>(mc, init);
    st.disc = std::make_unique<model::DiscriminatorBank>(mc, init);
    st.content = std::make_unique<model::ToyContentBackend>(mc.stft, mc.mel, mc.d_content, 1);
    st.speaker = std::make_unique<model::ToySpeakerBackend>(mc.stft, mc.d_spk, 2);
    st.feats = std::make_unique<dsp::FeatureExtractor>(mc.stft, mc.mel);
    nn::AdamW::Config oc;
    st.opt_g = std::make_unique<nn::AdamW>(st.net->parameters(), oc);
    st.opt_d = std::make_unique<nn::AdamW>(st.disc->parameters(), oc);
    st.ctx.net = st.net.get();
    st.ctx.disc = st.disc.get();
    st.ctx.opt_g = st.opt_g.get();
    st.ctx.opt_d = st.opt_d.get();
    st.ctx.content = st.content.get();
    st.ctx.speaker = st.speaker.get();
    st.ctx.features = st.feats.get();
    st.ctx.segment_frames = 6;
    return st;
  };

  auto make_batch = [&](u64 seed) {
    Rng rng(mix64(seed));
    std::vector<trainer::BatchItem> batch;
    for (int i = 0; i < 2; ++i) {
      trainer::SelectedInputs sel;
      Waveform w;
      w.rate = mc.stft.rate;
      w.samples.resize(10 * hop);
      for (auto& v : w.samples) v = 0.3 * rng.normal();
      sel.content = w;
      sel.speaker = w;
      batch.push_back(trainer::crop_segment("u" + std::to_string(i), sel, w, hop, 6, rng));
    }
    return batch;
  };

  SUBCASE("identical rng state gives an identical breakdown") {
    auto a = make_setup(31);
    auto b = make_setup(31);
    Rng ra(mix64(32)), rb(mix64(32));
    auto batch = make_batch(33);
    auto br_a = trainer::training_step(batch, a.ctx, ra);
    auto br_b = trainer::training_step(batch, b.ctx, rb);
    CHECK(br_a.rec == br_b.rec);
    CHECK(br_a.kl == br_b.kl);
    CHECK(br_a.adv_d == br_b.adv_d);
    CHECK(br_a.adv_g == br_b.adv_g);
    CHECK(br_a.fm == br_b.fm);
    CHECK(br_a.total_g == br_b.total_g);
    CHECK(br_a.total_d == br_b.total_d);
    CHECK(model::params_fingerprint(a.net->parameters(), 1) ==
          model::params_fingerprint(b.net->parameters(), 1));
    CHECK(a.ctx.step == 1);

    // a different noise draw changes the outcome
    auto c = make_setup(31);
    Rng rc(mix64(99));
    auto br_c = trainer::training_step(batch, c.ctx, rc);
    CHECK(br_c.total_g != br_a.total_g);
  }

  SUBCASE("a zeroed generator against a silent target reconstructs exactly") {
    auto st = make_setup(41);
    for (auto& [name, p] : st.net->parameters()) {
      if (name.find("gen.post.") == 0)
        for (auto& v : const_cast<Tensor&>(p.value()).data) v = 0.0;
    }
    Rng rng(mix64(42));
    trainer::SelectedInputs sel;
    Waveform silence;
    silence.rate = mc.stft.rate;
    silence.samples.assign(8 * hop, 0.0);
    sel.content = silence;
    sel.speaker = silence;
    std::vector<trainer::BatchItem> batch = {
        trainer::crop_segment("sil", sel, silence, hop, 6, rng)};
    auto br = trainer::training_step(batch, st.ctx, rng);
    CHECK(br.rec == 0.0);
  }

  SUBCASE("non-finite parameters abort the step") {
    auto st = make_setup(51);
    auto params = st.net->parameters();
    const_cast<Tensor&>(params[0].second.value()).data[0] =
        std::numeric_limits<double>::quiet_NaN();
    Rng rng(mix64(52));
    auto batch = make_batch(53);
    CHECK_THROWS((void)trainer::training_step(batch, st.ctx, rng));
  }
}

TEST_CASE("train_teacher: runs, logs, checkpoints and reproduces bit-for-bit") {
  LoopFixture f = make_loop_fixture("teacher");
  const std::string run_a = f.root + "/run_a";
  const std::string run_b = f.root + "/run_b";

  auto out_a = trainer::train_teacher(f.cfg, f.m, run_a, f.root + "/cache");
  CHECK(out_a.trace.size() == 4);
  CHECK(out_a.start_step == 0);
  CHECK(out_a.end_step == 4);
  CHECK(out_a.speaker_selections == 8);      // 4 steps x batch 2
  CHECK(out_a.speaker_substitutions == 0);   // teacher keeps speaker sampling off
  CHECK(fs::exists(out_a.checkpoint_path));

  auto lines = read_lines(run_a + "/metrics.tsv");
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] ==
        "step\trec\tkl\tadv_d\tadv_g\tfm\ttotal_g\ttotal_d\tspeaker_sub_rate");
  CHECK(lines[1].substr(0, 2) == "1\t");
  CHECK(lines[4].substr(0, 2) == "4\t");

  auto out_b = trainer::train_teacher(f.cfg, f.m, run_b, f.root + "/cache");
  CHECK(out_b.model_fingerprint == out_a.model_fingerprint);
  CHECK(read_file(run_b + "/metrics.tsv") == read_file(run_a + "/metrics.tsv"));

  // the checkpoint reloads into a usable model handle
  auto handle = trainer::load_model_handle(f.cfg, out_a.checkpoint_path);
  CHECK(handle.tag == to_hex(out_a.model_fingerprint));
}

TEST_CASE("train_teacher: resume continues the metric trace and matches a straight run") {
  LoopFixture f = make_loop_fixture("resume");
  const std::string run_full = f.root + "/run_full";
  const std::string run_resumed = f.root + "/run_resumed";

  auto full = trainer::train_teacher(f.cfg, f.m, run_full, f.root + "/cache");

  trainer::PipelineConfig half = f.cfg;
  half.train.total_steps = 2;
  auto first = trainer::train_teacher(half, f.m, run_resumed, f.root + "/cache");
  CHECK(first.end_step == 2);

  auto second = trainer::train_teacher(f.cfg, f.m, run_resumed, f.root + "/cache");
  CHECK(second.start_step == 2);
  CHECK(second.end_step == 4);
  CHECK(second.trace.size() == 2);
  CHECK(second.model_fingerprint == full.model_fingerprint);

  auto lines = read_lines(run_resumed + "/metrics.tsv");
  REQUIRE(lines.size() == 5);
  for (int i = 1; i <= 4; ++i)
    CHECK(lines[i].substr(0, 2) == std::to_string(i) + "\t");
  CHECK(read_file(run_resumed + "/metrics.tsv") == read_file(run_full + "/metrics.tsv"));
}

TEST_CASE("train_teacher: cached signal perturbations feed the content encoder") {
  LoopFixture f = make_loop_fixture("teacher_vtlp", 2, 2);
  f.cfg.teacher_perturbation = "vtlp";
  f.cfg.data.n_perturb = 2;
  f.cfg.train.total_steps = 2;
  const std::string cache = f.root + "/cache";

  CHECK_THROWS_WITH_AS(
      (void)trainer::train_teacher(f.cfg, f.m, f.root + "/run_miss", cache),
      doctest::Contains("prepare"), FatalError);

  trainer::generate_perturb_cache(f.m, "vtlp", 2, derive_seed(f.cfg.seed, "perturb"), cache);
  auto out = trainer::train_teacher(f.cfg, f.m, f.root + "/run_hit", cache);
  CHECK(out.trace.size() == 2);
}

TEST_CASE("train_pseudovc: consumes pseudo sets, validates the manifest, counts substitutions") {
  LoopFixture f = make_loop_fixture("student");

  // teacher first, then pseudo data from it
  trainer::PipelineConfig tcfg = f.cfg;
  tcfg.train.total_steps = 2;
  auto tout = trainer::train_teacher(tcfg, f.m, f.root + "/teacher", f.root + "/cache");
  auto handle = trainer::load_model_handle(tcfg, tout.checkpoint_path);

  const std::string proot = f.root + "/pseudo";
  auto sets = pseudo::generate_pseudo_corpus(handle, f.m, 2, f.cfg.seed, proot);
  const std::string pmanifest = proot + "/pseudo_manifest.jsonl";
  pseudo::write_pseudo_manifest(sets, pmanifest);

  SUBCASE("a missing manifest names the stage that creates it") {
    CHECK_THROWS_WITH_AS((void)trainer::train_pseudovc(f.cfg, f.m, f.root + "/s0",
                                                       f.root + "/nowhere.jsonl"),
                         doctest::Contains("gen-pseudo"), FatalError);
  }

  SUBCASE("a cardinality mismatch against n_pseudo is fatal") {
    trainer::PipelineConfig bad = f.cfg;
    bad.train.n_pseudo = 3;
    CHECK_THROWS_AS((void)trainer::train_pseudovc(bad, f.m, f.root + "/s1", pmanifest),
                    FatalError);
  }

  SUBCASE("training runs and tracks the substitution rate") {
    trainer::PipelineConfig scfg = f.cfg;
    scfg.train.alpha = 0.5;
    scfg.train.total_steps = 3;
    auto out = trainer::train_pseudovc(scfg, f.m, f.root + "/s2", pmanifest);
    CHECK(out.trace.size() == 3);
    CHECK(out.speaker_selections == 6);
    CHECK(out.speaker_substitutions >= 0);
    CHECK(out.speaker_substitutions <= 6);

    auto lines = read_lines(f.root + "/s2/metrics.tsv");
    REQUIRE(lines.size() == 4);
    // last column carries the cumulative substitution rate
    const std::string& last = lines.back();
    double rate = std::stod(last.substr(last.rfind('\t') + 1));
    CHECK(rate == doctest::Approx((double)out.speaker_substitutions / 6.0));

    // alpha = 1 substitutes on every selection
    trainer::PipelineConfig acfg = f.cfg;
    acfg.train.alpha = 1.0;
    acfg.train.total_steps = 2;
    auto out1 = trainer::train_pseudovc(acfg, f.m, f.root + "/s3", pmanifest);
    CHECK(out1.speaker_substitutions == out1.speaker_selections);
  }
}

TEST_CASE("training leaves the frozen backends untouched") {
  LoopFixture f = make_loop_fixture("frozen", 2, 2);
  f.cfg.train.total_steps = 2;
  auto backs = trainer::make_backends(f.cfg);
  Waveform probe = read_wav(f.m.resolve(f.m.records[0]));
  Tensor before = backs.content->extract(probe).values;
  Tensor emb_before = backs.speaker->embed(probe).values;

  (void)trainer::train_teacher(f.cfg, f.m, f.root + "/run", f.root + "/cache");

  CHECK(max_abs_diff(backs.content->extract(probe).values, before) == 0.0);
  CHECK(max_abs_diff(backs.speaker->embed(probe).values, emb_before) == 0.0);
}
