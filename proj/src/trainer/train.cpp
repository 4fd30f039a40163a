#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pvc/dsp/stft.hpp"
#include "pvc/hash.hpp"
#include "pvc/model/checkpoint.hpp"
#include "pvc/trainer/trainer.hpp"

namespace fs = std::filesystem;

namespace pvc::trainer {

namespace {

Waveform slice_wave(const Waveform& w, i64 start, i64 len) {
  require_arg(start >= 0 && start + len <= (i64)w.samples.size(),
              "trainer: crop window out of range");
  Waveform out;
  out.rate = w.rate;
  out.samples.assign(w.samples.begin() + start, w.samples.begin() + start + len);
  return out;
}

}  // namespace

Backends make_backends(const PipelineConfig& cfg) {
  Backends b;
  if (cfg.content_command.empty()) {
    b.content = std::make_shared<model::ToyContentBackend>(cfg.model.stft, cfg.model.mel,
                                                           cfg.model.d_content,
                                                           cfg.model.content_seed);
  } else {
    b.content = std::make_shared<model::CommandContentBackend>(
        cfg.content_command, cfg.model.d_content, cfg.model.stft.rate, cfg.content_frame_ms,
        cfg.content_layer);
  }
  if (cfg.speaker_command.empty()) {
    b.speaker = std::make_shared<model::ToySpeakerBackend>(cfg.model.stft, cfg.model.d_spk,
                                                           cfg.model.speaker_seed);
  } else {
    b.speaker = std::make_shared<model::CommandSpeakerBackend>(cfg.speaker_command,
                                                               cfg.model.d_spk,
                                                               cfg.model.stft.rate);
  }
  return b;
}

losses::LossBreakdown training_step(const std::vector<BatchItem>& batch, TrainContext& ctx,
                                    Rng& rng) {
  require_arg(!batch.empty(), "training_step: empty batch");
  require_arg(ctx.net && ctx.disc && ctx.opt_g && ctx.opt_d && ctx.content && ctx.speaker &&
                  ctx.features,
              "training_step: incomplete context");
  const model::ModelConfig& mc = ctx.net->config();
  const i64 hop = mc.stft.hop;
  const i64 seg = ctx.segment_frames;
  const i64 nb = (i64)batch.size();
  const i64 span = seg * hop;
  const i64 bins = mc.stft.bins();

  Tensor xc({nb, mc.d_content, seg});
  Tensor xlin({nb, bins, seg});
  Tensor xmel({nb, mc.mel.n_mels, seg});
  Tensor xwav({nb, 1, span});
  Tensor gemb({nb, mc.d_spk, 1});
  Tensor mask({nb, 1, seg});

  for (i64 b = 0; b < nb; ++b) {
    const BatchItem& it = batch[b];
    const i64 start = it.crop_start_frame;
    i64 valid = std::min<i64>(seg, it.grid_frames - start);
    if (valid < 0) valid = 0;
    require_arg(valid > 0, "training_step: crop of '" + it.source_id + "' holds no real frames");

    const Waveform tgt = slice_wave(it.target_waveform, start * hop, span);
    const Waveform cnt = slice_wave(it.content_input, start * hop, span);

    model::ContentFeatures feats = ctx.content->extract(cnt);
    require(feats.n_frames() == seg,
            "training_step: content backend produced " + std::to_string(feats.n_frames()) +
                " frames for a " + std::to_string(seg) + " frame segment");
    dsp::LinSpec lin = dsp::linear_spectrogram(tgt, mc.stft);
    dsp::MelSpec mel = dsp::mel_spectrogram(tgt, mc.stft, mc.mel);
    require(lin.values.dim(0) == seg && mel.values.dim(0) == seg,
            "training_step: spectrogram framing mismatch");

    for (i64 f = 0; f < seg; ++f) {
      const bool keep = f < valid;
      mask.at(b, 0, f) = keep ? 1.0 : 0.0;
      for (i64 c = 0; c < mc.d_content; ++c)
        xc.at(b, c, f) = keep ? feats.values.at(f, c) : 0.0;
      for (i64 c = 0; c < bins; ++c) xlin.at(b, c, f) = lin.values.at(f, c);
      for (i64 c = 0; c < mc.mel.n_mels; ++c)
        xmel.at(b, c, f) = keep ? mel.values.at(f, c) : 0.0;
    }
    for (i64 t = 0; t < span; ++t) xwav.at(b, 0, t) = tgt.samples[t];

    Tensor emb = it.speaker_emb.numel() > 0 ? it.speaker_emb
                                            : ctx.speaker->embed(it.speaker_input).values;
    require(emb.numel() == mc.d_spk, "training_step: speaker embedding size mismatch");
    for (i64 c = 0; c < mc.d_spk; ++c) gemb.at(b, c, 0) = emb.data[c];
  }

  nn::Var vlin(xlin), vg(gemb), vc(xc), vwav(xwav);

  auto [z, q] = ctx.net->posterior(vlin, vg, rng, 1.0);
  auto [z_p, log_det] = ctx.net->flow_forward(z, vg);
  model::GaussianSeq p = ctx.net->bottleneck(vc);
  nn::Var y = ctx.net->decode(z, vg);

  // Discriminator update on the frozen generator output.
  model::DiscOutput d_real = ctx.disc->forward(vwav);
  model::DiscOutput d_fake = ctx.disc->forward(nn::detach(y));
  auto [adv_d, adv_g_stale] = losses::adversarial(d_real.logits, d_fake.logits);
  (void)adv_g_stale;
  ctx.opt_d->zero_grad();
  nn::backward(adv_d);
  ctx.opt_d->step();

  // Generator update against the discriminator it will actually face.
  model::DiscOutput d_real2 = ctx.disc->forward(vwav);
  model::DiscOutput d_fake2 = ctx.disc->forward(y);
  auto [adv_d_stale, adv_g] = losses::adversarial(d_real2.logits, d_fake2.logits);
  (void)adv_d_stale;
  nn::Var fm = losses::feature_matching(d_real2.features, d_fake2.features);
  nn::Var mel_pred = nn::mul_mask(ctx.features->mel(y), mask);
  nn::Var rec = losses::recon(nn::Var(xmel), mel_pred);
  nn::Var klv = losses::kl(q, z, z_p, log_det, p);
  nn::Var total_g = losses::weighted_generator_total(rec, klv, adv_g, fm, ctx.weights);
  ctx.opt_g->zero_grad();
  nn::backward(total_g);
  ctx.opt_g->step();

  losses::LossBreakdown out = losses::assemble(rec.item(), klv.item(), adv_d.item(),
                                               adv_g.item(), fm.item(), ctx.weights);
  ctx.step += 1;
  return out;
}

namespace {

void store_opt(model::Checkpoint& ck, const std::string& prefix, const nn::AdamW& opt) {
  const auto& params = opt.params();
  const auto& slots = opt.slots();
  for (size_t i = 0; i < params.size(); ++i) {
    ck.blobs.emplace_back(prefix + ".m." + params[i].first, slots[i].m);
    ck.blobs.emplace_back(prefix + ".v." + params[i].first, slots[i].v);
  }
}

void load_opt(const model::Checkpoint& ck, const std::string& prefix, nn::AdamW& opt) {
  const auto& params = opt.params();
  auto& slots = opt.slots();
  for (size_t i = 0; i < params.size(); ++i) {
    for (const char* kind : {"m", "v"}) {
      const std::string name = prefix + "." + kind + "." + params[i].first;
      const Tensor* t = ck.find(name);
      if (t == nullptr) fail("checkpoint is missing optimizer state '" + name + "'");
      Tensor& dst = kind[0] == 'm' ? slots[i].m : slots[i].v;
      require(t->shape == dst.shape, "checkpoint optimizer state '" + name + "' has shape " +
                                         t->shape_str() + ", expected " + dst.shape_str());
      dst = *t;
    }
  }
}

void dump_diagnostic(const std::string& run_dir, i64 step, const std::vector<BatchItem>& batch) {
  const std::string dir = run_dir + "/diagnostic_step_" + std::to_string(step + 1);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) return;  // best effort; the original error matters more
  std::ofstream info(dir + "/batch.txt");
  for (size_t i = 0; i < batch.size(); ++i) {
    const BatchItem& it = batch[i];
    info << "item " << i << ": source_id=" << it.source_id
         << " crop_start_frame=" << it.crop_start_frame << " grid_frames=" << it.grid_frames
         << "\n";
    const std::string stem = dir + "/item" + std::to_string(i);
    try {
      write_wav(stem + "_content.wav", it.content_input);
      write_wav(stem + "_speaker.wav", it.speaker_input);
      write_wav(stem + "_target.wav", it.target_waveform);
    } catch (const std::exception&) {
      // audio may itself be non-finite; the text record still helps
    }
  }
}

struct MetaCounters {
  i64 opt_g_step = 0;
  i64 opt_d_step = 0;
  i64 substitutions = 0;
  i64 selections = 0;
};

Tensor meta_to_tensor(const MetaCounters& mc) {
  Tensor t({4});
  t.data = {(double)mc.opt_g_step, (double)mc.opt_d_step, (double)mc.substitutions,
            (double)mc.selections};
  return t;
}

MetaCounters meta_from_tensor(const Tensor& t) {
  require(t.numel() == 4, "checkpoint meta block has unexpected size");
  MetaCounters mc;
  mc.opt_g_step = (i64)t.data[0];
  mc.opt_d_step = (i64)t.data[1];
  mc.substitutions = (i64)t.data[2];
  mc.selections = (i64)t.data[3];
  return mc;
}

TrainOutcome run_training(const PipelineConfig& cfg, const corpus::Manifest& m, bool teacher,
                          const std::string& run_dir, const std::string& pseudo_manifest,
                          const std::string& perturb_root,
                          const std::function<void(const std::string&)>& log) {
  cfg.validate();
  fs::create_directories(run_dir);

  const std::string perturbation = teacher ? cfg.teacher_perturbation : cfg.train.perturbation;
  const double alpha = teacher ? (cfg.teacher_speaker_sampling ? cfg.train.alpha : 0.0)
                               : cfg.train.alpha;

  std::vector<corpus::UtteranceRecord> train_recs;
  for (const auto& r : m.records)
    if (r.split == "train") train_recs.push_back(r);
  std::sort(train_recs.begin(), train_recs.end(),
            [](const auto& a, const auto& b) { return a.utterance_id < b.utterance_id; });
  if (train_recs.empty()) fail("training needs at least one train-split utterance");

  std::map<std::string, pseudo::PseudoSet> sets;
  std::string pseudo_root;
  if (perturbation == "pseudo" && cfg.train.n_pseudo > 0) {
    if (pseudo_manifest.empty() || !fs::exists(pseudo_manifest))
      fail("pseudo manifest not found at '" + pseudo_manifest +
           "'; run the gen-pseudo stage first");
    pseudo_root = fs::path(pseudo_manifest).parent_path().string();
    for (auto& s : pseudo::read_pseudo_manifest(pseudo_manifest, cfg.train.n_pseudo)) {
      std::string id = s.source_id;
      sets.emplace(std::move(id), std::move(s));
    }
    for (const auto& r : train_recs)
      if (!sets.count(r.utterance_id))
        fail("pseudo manifest '" + pseudo_manifest + "' has no set for train utterance '" +
             r.utterance_id + "'");
  }

  DataContext dctx;
  dctx.manifest = &m;
  dctx.pseudo_sets = sets.empty() ? nullptr : &sets;
  dctx.pseudo_root = pseudo_root;
  dctx.perturb_root = perturb_root;
  dctx.n_perturb = cfg.data.n_perturb;
  dctx.perturb_seed_base = derive_seed(cfg.seed, "perturb");

  Rng master(mix64(cfg.seed));
  Rng init_rng = master.fork(teacher ? "init/teacher" : "init/student");
  Rng data_rng = master.fork(teacher ? "data/teacher" : "data/student");

  model::SynthModel net(cfg.model, init_rng);
  model::DiscriminatorBank disc(cfg.model, init_rng);
  Backends backs = make_backends(cfg);
  dsp::FeatureExtractor feats(cfg.model.stft, cfg.model.mel);

  nn::AdamW::Config oc;
  oc.lr = cfg.train.lr;
  oc.beta1 = cfg.train.beta1;
  oc.beta2 = cfg.train.beta2;
  oc.eps = cfg.train.eps;
  oc.weight_decay = cfg.train.weight_decay;
  oc.lr_decay = cfg.train.lr_decay;
  nn::AdamW opt_g(net.parameters(), oc);
  nn::AdamW opt_d(disc.parameters(), oc);

  const std::string ckpt_path = run_dir + "/checkpoint.bin";
  i64 start_step = 0;
  MetaCounters counters;
  if (fs::exists(ckpt_path)) {
    model::Checkpoint ck = model::load_checkpoint(ckpt_path);
    if (ck.config_hash != cfg.model.hash())
      fail("checkpoint '" + ckpt_path + "' was written for a different model configuration");
    model::load_params(ck, "model.", net.parameters());
    model::load_params(ck, "disc.", disc.parameters());
    load_opt(ck, "optg", opt_g);
    load_opt(ck, "optd", opt_d);
    const Tensor* meta = ck.find("meta");
    if (meta == nullptr) fail("checkpoint '" + ckpt_path + "' is missing its meta block");
    counters = meta_from_tensor(*meta);
    opt_g.set_step_count(counters.opt_g_step);
    opt_d.set_step_count(counters.opt_d_step);
    data_rng.set_state(ck.rng_state);
    start_step = (i64)ck.step;
    if (log) log("resuming from step " + std::to_string(start_step));
  }

  std::ofstream metrics;
  const std::string metrics_path = run_dir + "/metrics.tsv";
  if (start_step > 0 && fs::exists(metrics_path)) {
    metrics.open(metrics_path, std::ios::app);
  } else {
    metrics.open(metrics_path, std::ios::trunc);
    metrics << "step\trec\tkl\tadv_d\tadv_g\tfm\ttotal_g\ttotal_d\tspeaker_sub_rate\n";
  }
  if (!metrics) fail("cannot open metrics log at '" + metrics_path + "'");

  TrainContext tctx;
  tctx.net = &net;
  tctx.disc = &disc;
  tctx.opt_g = &opt_g;
  tctx.opt_d = &opt_d;
  tctx.content = backs.content.get();
  tctx.speaker = backs.speaker.get();
  tctx.features = &feats;
  tctx.weights = cfg.weights;
  tctx.segment_frames = cfg.train.segment_frames;
  tctx.step = (u64)start_step;

  auto save = [&](i64 completed) {
    model::Checkpoint ck;
    ck.config_hash = cfg.model.hash();
    ck.step = (u64)completed;
    ck.rng_state = data_rng.state();
    model::store_params(ck, "model.", net.parameters());
    model::store_params(ck, "disc.", disc.parameters());
    store_opt(ck, "optg", opt_g);
    store_opt(ck, "optd", opt_d);
    counters.opt_g_step = opt_g.step_count();
    counters.opt_d_step = opt_d.step_count();
    ck.blobs.emplace_back("meta", meta_to_tensor(counters));
    model::save_checkpoint(ckpt_path, ck);
  };

  std::map<std::string, Tensor> emb_cache;
  TrainOutcome out;
  out.start_step = start_step;
  out.checkpoint_path = ckpt_path;

  char row[256];
  for (i64 step = start_step; step < cfg.train.total_steps; ++step) {
    std::vector<BatchItem> batch;
    batch.reserve(cfg.train.batch_size);
    for (i64 b = 0; b < cfg.train.batch_size; ++b) {
      const corpus::UtteranceRecord& rec =
          train_recs[data_rng.uniform_int((i64)train_recs.size())];
      const pseudo::PseudoSet* set = nullptr;
      if (!sets.empty()) {
        auto it = sets.find(rec.utterance_id);
        if (it != sets.end()) set = &it->second;
      }
      SelectedInputs sel =
          select_inputs(rec, set, perturbation, alpha, dctx, data_rng, nullptr);
      counters.selections += 1;
      if (sel.speaker_substituted) counters.substitutions += 1;

      Waveform target = read_wav(m.resolve(rec));
      BatchItem item = crop_segment(rec.utterance_id, sel, target, cfg.model.stft.hop,
                                    cfg.train.segment_frames, data_rng);
      auto itc = emb_cache.find(sel.speaker_choice);
      if (itc == emb_cache.end())
        itc = emb_cache.emplace(sel.speaker_choice, backs.speaker->embed(item.speaker_input).values)
                  .first;
      item.speaker_emb = itc->second;
      batch.push_back(std::move(item));
    }

    losses::LossBreakdown br;
    try {
      br = training_step(batch, tctx, data_rng);
    } catch (const std::exception& e) {
      dump_diagnostic(run_dir, step, batch);
      fail(std::string(e.what()) + "; diagnostic batch saved under '" + run_dir +
           "/diagnostic_step_" + std::to_string(step + 1) + "'");
    }
    out.trace.push_back(br);

    const double sub_rate =
        counters.selections > 0 ? (double)counters.substitutions / (double)counters.selections
                                : 0.0;
    std::snprintf(row, sizeof(row),
                  "%lld\t%.8g\t%.8g\t%.8g\t%.8g\t%.8g\t%.8g\t%.8g\t%.8g\n",
                  (long long)(step + 1), br.rec, br.kl, br.adv_d, br.adv_g, br.fm, br.total_g,
                  br.total_d, sub_rate);
    metrics << row;

    const bool last = step + 1 == cfg.train.total_steps;
    if (log && ((step + 1) % cfg.train.log_every == 0 || last)) {
      char msg[160];
      std::snprintf(msg, sizeof(msg), "step %lld/%lld rec %.4f kl %.4f total_g %.4f total_d %.4f",
                    (long long)(step + 1), (long long)cfg.train.total_steps, br.rec, br.kl,
                    br.total_g, br.total_d);
      log(msg);
    }
    if ((step + 1) % cfg.train.checkpoint_every == 0 || last) {
      metrics.flush();
      save(step + 1);
    }
  }

  if (start_step >= cfg.train.total_steps && !fs::exists(ckpt_path)) save(start_step);

  out.end_step = std::max(start_step, cfg.train.total_steps);
  out.speaker_substitutions = counters.substitutions;
  out.speaker_selections = counters.selections;
  out.model_fingerprint = model::params_fingerprint(net.parameters(), (u64)out.end_step);
  return out;
}

}  // namespace

TrainOutcome train_teacher(const PipelineConfig& cfg, const corpus::Manifest& m,
                           const std::string& run_dir, const std::string& perturb_root,
                           const std::function<void(const std::string&)>& log) {
  return run_training(cfg, m, true, run_dir, "", perturb_root, log);
}

TrainOutcome train_pseudovc(const PipelineConfig& cfg, const corpus::Manifest& m,
                            const std::string& run_dir, const std::string& pseudo_manifest,
                            const std::function<void(const std::string&)>& log) {
  return run_training(cfg, m, false, run_dir, pseudo_manifest,
                      cfg.work_dir + "/perturb_cache", log);
}

pseudo::TeacherHandle load_model_handle(const PipelineConfig& cfg, const std::string& ckpt_path) {
  if (!fs::exists(ckpt_path)) fail("model checkpoint not found at '" + ckpt_path + "'");
  model::Checkpoint ck = model::load_checkpoint(ckpt_path);
  if (ck.config_hash != cfg.model.hash())
    fail("checkpoint '" + ckpt_path + "' was written for a different model configuration");

  Rng scratch(mix64(cfg.seed));
  auto net = std::make_shared<model::SynthModel>(cfg.model, scratch);
  model::load_params(ck, "model.", net->parameters());

  Backends backs = make_backends(cfg);
  pseudo::TeacherHandle h;
  h.net = net;
  h.content = backs.content;
  h.speaker = backs.speaker;
  h.tag = to_hex(model::params_fingerprint(net->parameters(), ck.step));
  return h;
}

}  // namespace pvc::trainer
