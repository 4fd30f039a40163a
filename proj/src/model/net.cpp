#include "pvc/model/net.hpp"

#include <cmath>

namespace pvc::model {

using namespace pvc::nn;

namespace {

constexpr double kLeaky = 0.1;

ModelConfig checked(ModelConfig cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

PriorEncoder::PriorEncoder(const ModelConfig& cfg, Rng& rng)
    : d_z_(cfg.d_z),
      pre_(cfg.d_content, cfg.hidden, 1, 1, 0, 1, rng),
      mid_(cfg.hidden, cfg.hidden, 5, 1, 2, 1, rng),
      proj_(cfg.hidden, 2 * cfg.d_z, 1, 1, 0, 1, rng, /*zero_init=*/true) {
  adopt("pre", pre_);
  adopt("mid", mid_);
  adopt("proj", proj_);
}

GaussianSeq PriorEncoder::forward(const Var& content) const {
  Var h = leaky_relu(pre_.forward(content), kLeaky);
  h = leaky_relu(mid_.forward(h), kLeaky);
  Var stats = proj_.forward(h);
  return {slice_channels(stats, 0, d_z_), slice_channels(stats, d_z_, d_z_)};
}

PosteriorEncoder::PosteriorEncoder(const ModelConfig& cfg, Rng& rng)
    : d_z_(cfg.d_z),
      pre_(cfg.stft.bins(), cfg.hidden, 1, 1, 0, 1, rng),
      proj_(cfg.hidden, 2 * cfg.d_z, 1, 1, 0, 1, rng),
      wn_(cfg.hidden, cfg.wn_kernel, cfg.wn_layers, cfg.wn_dilation_growth, cfg.d_spk, rng) {
  adopt("pre", pre_);
  adopt("proj", proj_);
  adopt("wn", wn_);
}

std::pair<Var, GaussianSeq> PosteriorEncoder::forward(const Var& x_lin, const Var& g, Rng& rng,
                                                      double temperature) const {
  Var h = pre_.forward(x_lin);
  h = wn_.forward(h, g);
  Var stats = proj_.forward(h);
  GaussianSeq q{slice_channels(stats, 0, d_z_), slice_channels(stats, d_z_, d_z_)};
  Var z = q.mu;
  if (temperature != 0.0) {
    Var eps = randn(q.mu.shape(), rng);
    z = add(z, scale(mul(exp(q.log_sigma), eps), temperature));
  }
  return {z, q};
}

Flow::Flow(const ModelConfig& cfg, Rng& rng) : d_z_(cfg.d_z), mean_only_(cfg.flow_mean_only) {
  const int half = cfg.d_z / 2;
  for (int i = 0; i < cfg.n_flow_couplings; ++i) {
    Coupling c;
    c.pre = std::make_unique<Conv1d>(half, cfg.hidden, 1, 1, 0, 1, rng);
    c.wn = std::make_unique<WaveNet>(cfg.hidden, cfg.wn_kernel, cfg.flow_wn_layers,
                                     cfg.wn_dilation_growth, cfg.d_spk, rng);
    c.post = std::make_unique<Conv1d>(cfg.hidden, mean_only_ ? half : 2 * half, 1, 1, 0, 1, rng,
                                      /*zero_init=*/true);
    const std::string p = "c" + std::to_string(i) + ".";
    adopt(p + "pre", *c.pre);
    adopt(p + "wn", *c.wn);
    adopt(p + "post", *c.post);
    couplings_.push_back(std::move(c));
  }
}

Var Flow::heads(const Coupling& c, const Var& z1, const Var& g) const {
  return c.post->forward(c.wn->forward(c.pre->forward(z1), g));
}

std::vector<Var> Flow::forward_logdets(const Var& z, const Var& g) const {
  std::vector<Var> lds;
  const i64 half = d_z_ / 2;
  Var h = z;
  for (const auto& c : couplings_) {
    Var z1 = slice_channels(h, 0, half);
    Var z2 = slice_channels(h, half, half);
    Var stats = heads(c, z1, g);
    if (mean_only_) {
      z2 = add(z2, stats);
      lds.push_back(Var::constant(Tensor::scalar(0.0)));
    } else {
      Var m = slice_channels(stats, 0, half);
      Var logs = slice_channels(stats, half, half);
      z2 = add(mul(z2, exp(logs)), m);
      lds.push_back(sum_all(logs));
    }
    h = flip_channels(concat_channels({z1, z2}));
  }
  lds.push_back(h);  // transformed latent rides along in the last slot
  return lds;
}

std::pair<Var, Var> Flow::forward(const Var& z, const Var& g) const {
  std::vector<Var> lds = forward_logdets(z, g);
  Var z_p = lds.back();
  lds.pop_back();
  Var total = lds[0];
  for (size_t i = 1; i < lds.size(); ++i) total = add(total, lds[i]);
  return {z_p, total};
}

Var Flow::inverse(const Var& z_p, const Var& g) const {
  const i64 half = d_z_ / 2;
  Var h = z_p;
  for (auto it = couplings_.rbegin(); it != couplings_.rend(); ++it) {
    h = flip_channels(h);  // flips are involutions
    Var z1 = slice_channels(h, 0, half);
    Var z2 = slice_channels(h, half, half);
    Var stats = heads(*it, z1, g);
    if (mean_only_) {
      z2 = sub(z2, stats);
    } else {
      Var m = slice_channels(stats, 0, half);
      Var logs = slice_channels(stats, half, half);
      z2 = mul(sub(z2, m), exp(neg(logs)));
    }
    h = concat_channels({z1, z2});
  }
  return h;
}

Generator::Generator(const ModelConfig& cfg, Rng& rng)
    : cfg_(cfg),
      pre_(cfg.d_z, cfg.gen_ch0, 7, 1, 3, 1, rng),
      cond_(cfg.d_spk, cfg.gen_ch0, 1, 1, 0, 1, rng),
      post_(std::max(2, cfg.gen_ch0 >> (int)cfg.upsample.size()), 1, 7, 1, 3, 1, rng) {
  adopt("pre", pre_);
  adopt("cond", cond_);
  int ch = cfg.gen_ch0;
  for (size_t i = 0; i < cfg.upsample.size(); ++i) {
    const int u = cfg.upsample[i];
    const int next = std::max(2, cfg.gen_ch0 >> (int)(i + 1));
    const int k = u % 2 == 0 ? 2 * u : u;
    const int p = u % 2 == 0 ? u / 2 : 0;
    ups_.push_back(std::make_unique<ConvTranspose1d>(ch, next, k, u, p, rng));
    adopt("up" + std::to_string(i), *ups_.back());
    std::vector<ResBlock> stage;
    for (size_t j = 0; j < cfg.resblock_kernels.size(); ++j) {
      ResBlock rb;
      rb.kernel = cfg.resblock_kernels[j];
      rb.dilations = cfg.resblock_dilations;
      for (size_t d = 0; d < rb.dilations.size(); ++d) {
        const int dil = rb.dilations[d];
        rb.convs.push_back(std::make_unique<Conv1d>(next, next, rb.kernel, 1,
                                                    dil * (rb.kernel - 1) / 2, dil, rng));
        rb.convs.push_back(
            std::make_unique<Conv1d>(next, next, rb.kernel, 1, (rb.kernel - 1) / 2, 1, rng));
        const std::string p2 = "res" + std::to_string(i) + "." + std::to_string(j) + "." +
                               std::to_string(d) + ".";
        adopt(p2 + "a", *rb.convs[rb.convs.size() - 2]);
        adopt(p2 + "b", *rb.convs.back());
      }
      stage.push_back(std::move(rb));
    }
    resblocks_.push_back(std::move(stage));
    ch = next;
  }
  adopt("post", post_);
}

Var Generator::forward(const Var& z, const Var& g) const {
  Var h = add(pre_.forward(z), broadcast_time(cond_.forward(g), z.shape()[2]));
  for (size_t i = 0; i < ups_.size(); ++i) {
    h = leaky_relu(h, kLeaky);
    h = ups_[i]->forward(h);
    Var acc;
    for (const auto& rb : resblocks_[i]) {
      Var x = h;
      size_t ci = 0;
      for (size_t d = 0; d < rb.dilations.size(); ++d) {
        Var t = rb.convs[ci++]->forward(leaky_relu(x, kLeaky));
        t = rb.convs[ci++]->forward(leaky_relu(t, kLeaky));
        x = add(x, t);
      }
      acc = acc.defined() ? add(acc, x) : x;
    }
    h = scale(acc, 1.0 / (double)resblocks_[i].size());
  }
  h = leaky_relu(h, kLeaky);
  return tanh(post_.forward(h));
}

DiscriminatorBank::DiscriminatorBank(const ModelConfig& cfg, Rng& rng)
    : periods_(cfg.periods), n_scales_(cfg.n_scales) {
  const int c = cfg.disc_ch0;
  for (size_t i = 0; i < periods_.size(); ++i) {
    Stack s;
    s.convs.push_back(std::make_unique<Conv1d>(1, c, 5, 3, 2, 1, rng));
    s.convs.push_back(std::make_unique<Conv1d>(c, 2 * c, 5, 3, 2, 1, rng));
    s.convs.push_back(std::make_unique<Conv1d>(2 * c, 4 * c, 5, 3, 2, 1, rng));
    s.convs.push_back(std::make_unique<Conv1d>(4 * c, 4 * c, 5, 1, 2, 1, rng));
    s.head = std::make_unique<Conv1d>(4 * c, 1, 3, 1, 1, 1, rng);
    const std::string p = "p" + std::to_string(periods_[i]) + ".";
    for (size_t j = 0; j < s.convs.size(); ++j) adopt(p + std::to_string(j), *s.convs[j]);
    adopt(p + "head", *s.head);
    period_stacks_.push_back(std::move(s));
  }
  for (int i = 0; i < n_scales_; ++i) {
    Stack s;
    s.convs.push_back(std::make_unique<Conv1d>(1, c, 15, 1, 7, 1, rng));
    s.convs.push_back(std::make_unique<Conv1d>(c, 2 * c, 41, 4, 20, 1, rng));
    s.convs.push_back(std::make_unique<Conv1d>(2 * c, 4 * c, 41, 4, 20, 1, rng));
    s.convs.push_back(std::make_unique<Conv1d>(4 * c, 4 * c, 5, 1, 2, 1, rng));
    s.head = std::make_unique<Conv1d>(4 * c, 1, 3, 1, 1, 1, rng);
    const std::string p = "s" + std::to_string(i) + ".";
    for (size_t j = 0; j < s.convs.size(); ++j) adopt(p + std::to_string(j), *s.convs[j]);
    adopt(p + "head", *s.head);
    scale_stacks_.push_back(std::move(s));
  }
}

void DiscriminatorBank::run_stack(const Stack& s, Var x, DiscOutput& out) const {
  std::vector<Var> feats;
  for (const auto& conv : s.convs) {
    x = leaky_relu(conv->forward(x), kLeaky);
    feats.push_back(x);
  }
  Var logit = s.head->forward(x);
  feats.push_back(logit);
  out.logits.push_back(logit);
  out.features.push_back(std::move(feats));
}

DiscOutput DiscriminatorBank::forward(const Var& w) const {
  require_arg(w.shape().size() == 3 && w.shape()[1] == 1, "discriminator expects (B, 1, T)");
  DiscOutput out;
  for (size_t i = 0; i < periods_.size(); ++i) {
    const i64 p = periods_[i];
    Var x = w;
    const i64 rem = x.shape()[2] % p;
    if (rem) x = pad_time(x, 0, p - rem);
    run_stack(period_stacks_[i], fold_period(x, p), out);
  }
  Var x = w;
  for (int i = 0; i < n_scales_; ++i) {
    if (i > 0) x = avg_pool1d(x, 4, 4);
    run_stack(scale_stacks_[(size_t)i], x, out);
  }
  return out;
}

SynthModel::SynthModel(const ModelConfig& cfg, Rng& rng)
    : cfg_(checked(cfg)), prior_(cfg_, rng), post_(cfg_, rng), flow_(cfg_, rng), gen_(cfg_, rng) {
  adopt("prior", prior_);
  adopt("post", post_);
  adopt("flow", flow_);
  adopt("gen", gen_);
}

Var content_to_var(const ContentFeatures& c, i64 n_frames) {
  require_arg(n_frames > 0 && n_frames <= c.n_frames(), "content_to_var: bad frame count");
  const i64 d = c.values.dim(1);
  Tensor t({1, d, n_frames});
  for (i64 i = 0; i < n_frames; ++i)
    for (i64 j = 0; j < d; ++j) t.at(0, j, i) = c.values.at(i, j);
  return Var::constant(std::move(t));
}

Var embedding_to_var(const SpeakerEmbedding& e) {
  const i64 d = e.values.numel();
  Tensor t({1, d, 1});
  t.data = e.values.data;
  return Var::constant(std::move(t));
}

Waveform convert(const SynthModel& model, const ContentBackend& content,
                 const SpeakerBackend& speaker, const Waveform& source, const Waveform& reference,
                 double temperature, Rng* rng) {
  NoGradGuard ng;
  const ModelConfig& cfg = model.config();
  if (source.rate != content.rate())
    fail_arg("convert: source rate " + std::to_string(source.rate) + " does not match backend rate " +
             std::to_string(content.rate()));
  if (reference.rate != speaker.rate())
    fail_arg("convert: reference rate " + std::to_string(reference.rate) +
             " does not match backend rate " + std::to_string(speaker.rate()));
  ContentFeatures c = content.extract(source);
  Var cv = content_to_var(c, c.n_frames());
  GaussianSeq prior = model.bottleneck(cv);
  Var z_p = prior.mu;
  if (temperature > 0.0) {
    require_arg(rng != nullptr, "convert: stochastic inference needs an rng");
    Var eps = randn(prior.mu.shape(), *rng);
    z_p = add(z_p, scale(mul(exp(prior.log_sigma), eps), temperature));
  }
  Var g = embedding_to_var(speaker.embed(reference));
  Var z = model.flow_inverse(z_p, g);
  Var out = model.decode(z, g);
  Waveform w;
  w.rate = cfg.stft.rate;
  w.samples = out.value().data;
  return w;
}

}  // namespace pvc::model
