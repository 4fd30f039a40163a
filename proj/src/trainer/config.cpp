#include "pvc/trainer/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "pvc/hash.hpp"

namespace pvc::trainer {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <class V>
std::string join_ints(const V& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string join_str(const std::vector<std::string>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += v[i];
  }
  return out;
}

// Parsers push a problem and leave the target untouched on failure.
struct ValueReader {
  const std::string& key;
  const std::string& value;
  std::vector<std::string>& problems;

  void bad(const std::string& what) const {
    problems.push_back("key '" + key + "': " + what + " (got '" + value + "')");
  }

  void read(std::string& out) const { out = value; }

  void read(bool& out) const {
    if (value == "true" || value == "1") out = true;
    else if (value == "false" || value == "0") out = false;
    else bad("expected a boolean (true/false)");
  }

  void read(i64& out) const {
    try {
      size_t pos = 0;
      i64 v = std::stoll(value, &pos);
      if (pos != value.size()) throw std::invalid_argument("trailing");
      out = v;
    } catch (const std::exception&) {
      bad("expected an integer");
    }
  }

  void read(int& out) const {
    i64 wide = out;
    size_t before = problems.size();
    read(wide);
    if (problems.size() != before) return;
    if (wide < INT32_MIN || wide > INT32_MAX) {
      bad("integer out of range");
      return;
    }
    out = static_cast<int>(wide);
  }

  void read(u64& out) const {
    try {
      size_t pos = 0;
      u64 v = std::stoull(value, &pos);
      if (pos != value.size() || value.find('-') != std::string::npos)
        throw std::invalid_argument("trailing");
      out = v;
    } catch (const std::exception&) {
      bad("expected a non-negative integer");
    }
  }

  void read(double& out) const {
    try {
      size_t pos = 0;
      double v = std::stod(value, &pos);
      if (pos != value.size()) throw std::invalid_argument("trailing");
      out = v;
    } catch (const std::exception&) {
      bad("expected a number");
    }
  }

  void read(std::vector<i64>& out) const {
    std::vector<i64> parsed;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      try {
        size_t pos = 0;
        parsed.push_back(std::stoll(item, &pos));
        if (pos != item.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        bad("expected a comma-separated integer list");
        return;
      }
    }
    out = parsed;
  }

  void read(std::vector<int>& out) const {
    std::vector<i64> wide(out.begin(), out.end());
    size_t before = problems.size();
    read(wide);
    if (problems.size() != before) return;
    std::vector<int> narrow;
    for (i64 v : wide) {
      if (v < INT32_MIN || v > INT32_MAX) {
        bad("integer out of range");
        return;
      }
      narrow.push_back(static_cast<int>(v));
    }
    out = narrow;
  }

  void read(std::vector<std::string>& out) const {
    std::vector<std::string> parsed;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) parsed.push_back(item);
    }
    out = parsed;
  }
};

using Applier = std::function<void(PipelineConfig&, const ValueReader&)>;

const std::map<std::string, Applier>& key_table() {
  static const std::map<std::string, Applier> table = [] {
    std::map<std::string, Applier> t;
    auto bind = [&t](const std::string& key, auto member_ptr) {
      t[key] = [member_ptr](PipelineConfig& c, const ValueReader& r) { r.read(c.*member_ptr); };
    };
    auto bind2 = [&t](const std::string& key, auto outer, auto inner) {
      t[key] = [outer, inner](PipelineConfig& c, const ValueReader& r) { r.read(c.*outer.*inner); };
    };

    bind("profile", &PipelineConfig::profile);
    bind("seed", &PipelineConfig::seed);
    bind("work.dir", &PipelineConfig::work_dir);

    bind2("data.raw_dir", &PipelineConfig::data, &DataSettings::raw_dir);
    bind2("data.synthetic", &PipelineConfig::data, &DataSettings::synthetic);
    bind2("data.synthetic_speakers", &PipelineConfig::data, &DataSettings::synthetic_speakers);
    bind2("data.synthetic_utts", &PipelineConfig::data, &DataSettings::synthetic_utts);
    bind2("data.train_frac", &PipelineConfig::data, &DataSettings::train_frac);
    bind2("data.val_frac", &PipelineConfig::data, &DataSettings::val_frac);
    bind2("data.test_frac", &PipelineConfig::data, &DataSettings::test_frac);
    bind2("data.n_perturb", &PipelineConfig::data, &DataSettings::n_perturb);

    bind2("train.alpha", &PipelineConfig::train, &TrainSettings::alpha);
    bind2("train.n_pseudo", &PipelineConfig::train, &TrainSettings::n_pseudo);
    bind2("train.batch_size", &PipelineConfig::train, &TrainSettings::batch_size);
    bind2("train.segment_frames", &PipelineConfig::train, &TrainSettings::segment_frames);
    bind2("train.total_steps", &PipelineConfig::train, &TrainSettings::total_steps);
    bind2("train.lr", &PipelineConfig::train, &TrainSettings::lr);
    bind2("train.beta1", &PipelineConfig::train, &TrainSettings::beta1);
    bind2("train.beta2", &PipelineConfig::train, &TrainSettings::beta2);
    bind2("train.eps", &PipelineConfig::train, &TrainSettings::eps);
    bind2("train.weight_decay", &PipelineConfig::train, &TrainSettings::weight_decay);
    bind2("train.lr_decay", &PipelineConfig::train, &TrainSettings::lr_decay);
    bind2("train.perturbation", &PipelineConfig::train, &TrainSettings::perturbation);
    bind2("train.checkpoint_every", &PipelineConfig::train, &TrainSettings::checkpoint_every);
    bind2("train.log_every", &PipelineConfig::train, &TrainSettings::log_every);
    bind("teacher.perturbation", &PipelineConfig::teacher_perturbation);
    bind("teacher.speaker_sampling", &PipelineConfig::teacher_speaker_sampling);

    bind2("loss.w_rec", &PipelineConfig::weights, &losses::LossWeights::w_rec);
    bind2("loss.w_kl", &PipelineConfig::weights, &losses::LossWeights::w_kl);
    bind2("loss.w_fm", &PipelineConfig::weights, &losses::LossWeights::w_fm);

    bind2("model.d_content", &PipelineConfig::model, &model::ModelConfig::d_content);
    bind2("model.d_z", &PipelineConfig::model, &model::ModelConfig::d_z);
    bind2("model.d_spk", &PipelineConfig::model, &model::ModelConfig::d_spk);
    bind2("model.hidden", &PipelineConfig::model, &model::ModelConfig::hidden);
    bind2("model.wn_layers", &PipelineConfig::model, &model::ModelConfig::wn_layers);
    bind2("model.wn_kernel", &PipelineConfig::model, &model::ModelConfig::wn_kernel);
    bind2("model.wn_dilation_growth", &PipelineConfig::model, &model::ModelConfig::wn_dilation_growth);
    bind2("model.n_flow_couplings", &PipelineConfig::model, &model::ModelConfig::n_flow_couplings);
    bind2("model.flow_wn_layers", &PipelineConfig::model, &model::ModelConfig::flow_wn_layers);
    bind2("model.flow_mean_only", &PipelineConfig::model, &model::ModelConfig::flow_mean_only);
    bind2("model.upsample", &PipelineConfig::model, &model::ModelConfig::upsample);
    bind2("model.gen_ch0", &PipelineConfig::model, &model::ModelConfig::gen_ch0);
    bind2("model.resblock_kernels", &PipelineConfig::model, &model::ModelConfig::resblock_kernels);
    bind2("model.resblock_dilations", &PipelineConfig::model, &model::ModelConfig::resblock_dilations);
    bind2("model.periods", &PipelineConfig::model, &model::ModelConfig::periods);
    bind2("model.n_scales", &PipelineConfig::model, &model::ModelConfig::n_scales);
    bind2("model.disc_ch0", &PipelineConfig::model, &model::ModelConfig::disc_ch0);
    bind2("model.content_seed", &PipelineConfig::model, &model::ModelConfig::content_seed);
    bind2("model.speaker_seed", &PipelineConfig::model, &model::ModelConfig::speaker_seed);

    t["audio.rate"] = [](PipelineConfig& c, const ValueReader& r) { r.read(c.model.stft.rate); };
    t["audio.n_fft"] = [](PipelineConfig& c, const ValueReader& r) { r.read(c.model.stft.n_fft); };
    t["audio.hop"] = [](PipelineConfig& c, const ValueReader& r) { r.read(c.model.stft.hop); };
    t["audio.win"] = [](PipelineConfig& c, const ValueReader& r) { r.read(c.model.stft.win); };
    t["audio.n_mels"] = [](PipelineConfig& c, const ValueReader& r) { r.read(c.model.mel.n_mels); };
    t["audio.fmin"] = [](PipelineConfig& c, const ValueReader& r) { r.read(c.model.mel.fmin); };
    t["audio.fmax"] = [](PipelineConfig& c, const ValueReader& r) { r.read(c.model.mel.fmax); };

    bind("content.command", &PipelineConfig::content_command);
    bind("content.layer", &PipelineConfig::content_layer);
    bind("content.frame_ms", &PipelineConfig::content_frame_ms);
    bind("speaker.command", &PipelineConfig::speaker_command);

    bind2("eval.n_sources", &PipelineConfig::eval, &EvalSettings::n_sources);
    bind2("eval.target_speakers", &PipelineConfig::eval, &EvalSettings::target_speakers);
    bind2("eval.split", &PipelineConfig::eval, &EvalSettings::split);
    bind2("eval.asr", &PipelineConfig::eval, &EvalSettings::asr);
    bind2("eval.asr_endpoint", &PipelineConfig::eval, &EvalSettings::asr_endpoint);
    bind2("eval.asr_command", &PipelineConfig::eval, &EvalSettings::asr_command);
    bind2("eval.asr_timeout_ms", &PipelineConfig::eval, &EvalSettings::asr_timeout_ms);
    bind2("eval.asr_retries", &PipelineConfig::eval, &EvalSettings::asr_retries);
    bind2("eval.asr_backoff_ms", &PipelineConfig::eval, &EvalSettings::asr_backoff_ms);
    bind2("eval.mock_sub_every", &PipelineConfig::eval, &EvalSettings::mock_sub_every);
    bind2("eval.temperature", &PipelineConfig::eval, &EvalSettings::temperature);
    bind2("eval.checkpoint", &PipelineConfig::eval, &EvalSettings::checkpoint);

    bind("tsne.perplexity", &PipelineConfig::tsne_perplexity);
    bind("tsne.iters", &PipelineConfig::tsne_iters);
    bind("tsne.seed", &PipelineConfig::tsne_seed);

    bind("convert.source", &PipelineConfig::convert_source);
    bind("convert.reference", &PipelineConfig::convert_reference);
    bind("convert.out", &PipelineConfig::convert_out);
    bind("convert.checkpoint", &PipelineConfig::convert_checkpoint);
    bind("run.dir", &PipelineConfig::run_dir);
    return t;
  }();
  return table;
}

void collect_problems(const PipelineConfig& c, std::vector<std::string>& out) {
  auto problem = [&out](const std::string& msg) { out.push_back(msg); };

  if (c.profile != "toy" && c.profile != "paper")
    problem("profile must be 'toy' or 'paper', got '" + c.profile + "'");
  if (c.work_dir.empty()) problem("work.dir must not be empty");

  if (c.train.alpha < 0.0 || c.train.alpha > 1.0)
    problem("train.alpha must lie in [0, 1], got " + fmt_double(c.train.alpha));
  if (c.train.n_pseudo < 0) problem("train.n_pseudo must be >= 0");
  if (c.train.batch_size < 1) problem("train.batch_size must be >= 1");
  if (c.train.segment_frames < 1) problem("train.segment_frames must be >= 1");
  if (c.train.total_steps < 1) problem("train.total_steps must be >= 1");
  if (c.train.lr <= 0.0) problem("train.lr must be > 0");
  if (c.train.beta1 < 0.0 || c.train.beta1 >= 1.0) problem("train.beta1 must lie in [0, 1)");
  if (c.train.beta2 < 0.0 || c.train.beta2 >= 1.0) problem("train.beta2 must lie in [0, 1)");
  if (c.train.eps <= 0.0) problem("train.eps must be > 0");
  if (c.train.weight_decay < 0.0) problem("train.weight_decay must be >= 0");
  if (c.train.lr_decay <= 0.0 || c.train.lr_decay > 1.0)
    problem("train.lr_decay must lie in (0, 1]");
  if (c.train.checkpoint_every < 1) problem("train.checkpoint_every must be >= 1");
  if (c.train.log_every < 1) problem("train.log_every must be >= 1");

  static const std::vector<std::string> kPerturb = {"none", "vtlp", "nansy", "sr", "pseudo"};
  if (std::find(kPerturb.begin(), kPerturb.end(), c.train.perturbation) == kPerturb.end())
    problem("train.perturbation must be one of none/vtlp/nansy/sr/pseudo, got '" +
            c.train.perturbation + "'");
  static const std::vector<std::string> kTeacherPerturb = {"none", "vtlp", "nansy", "sr"};
  if (std::find(kTeacherPerturb.begin(), kTeacherPerturb.end(), c.teacher_perturbation) ==
      kTeacherPerturb.end())
    problem("teacher.perturbation must be one of none/vtlp/nansy/sr, got '" +
            c.teacher_perturbation + "'");

  if (c.profile == "paper") {
    if (c.train.batch_size != 64) problem("paper profile fixes train.batch_size = 64");
    if (c.train.segment_frames != 128) problem("paper profile fixes train.segment_frames = 128");
    if (c.train.total_steps != 200000) problem("paper profile fixes train.total_steps = 200000");
    if (c.train.n_pseudo != 25) problem("paper profile fixes train.n_pseudo = 25");
  }

  if (c.data.synthetic_speakers < 1) problem("data.synthetic_speakers must be >= 1");
  if (c.data.synthetic_utts < 1) problem("data.synthetic_utts must be >= 1");
  if (c.data.n_perturb < 1) problem("data.n_perturb must be >= 1");
  if (c.data.train_frac < 0 || c.data.val_frac < 0 || c.data.test_frac < 0)
    problem("split fractions must be non-negative");
  else if (std::abs(c.data.train_frac + c.data.val_frac + c.data.test_frac - 1.0) > 1e-9)
    problem("split fractions must sum to 1");

  try {
    c.weights.validate();
  } catch (const std::exception& e) {
    problem(e.what());
  }
  try {
    c.model.validate();
  } catch (const std::exception& e) {
    problem(e.what());
  }

  if (c.content_layer < 0) problem("content.layer must be >= 0");
  if (c.content_frame_ms <= 0) problem("content.frame_ms must be > 0");

  if (c.eval.n_sources < 1) problem("eval.n_sources must be >= 1");
  static const std::vector<std::string> kSplits = {"auto", "train", "val", "test"};
  if (std::find(kSplits.begin(), kSplits.end(), c.eval.split) == kSplits.end())
    problem("eval.split must be one of auto/train/val/test, got '" + c.eval.split + "'");
  static const std::vector<std::string> kAsr = {"mock", "http", "command"};
  if (std::find(kAsr.begin(), kAsr.end(), c.eval.asr) == kAsr.end())
    problem("eval.asr must be one of mock/http/command, got '" + c.eval.asr + "'");
  if (c.eval.asr_timeout_ms < 1) problem("eval.asr_timeout_ms must be >= 1");
  if (c.eval.asr_retries < 0) problem("eval.asr_retries must be >= 0");
  if (c.eval.asr_backoff_ms < 0) problem("eval.asr_backoff_ms must be >= 0");
  if (c.eval.mock_sub_every < 0) problem("eval.mock_sub_every must be >= 0");
  if (c.eval.temperature < 0) problem("eval.temperature must be >= 0");

  if (c.tsne_perplexity <= 0) problem("tsne.perplexity must be > 0");
  if (c.tsne_iters < 1) problem("tsne.iters must be >= 1");
}

}  // namespace

std::map<std::string, std::string> PipelineConfig::to_map() const {
  std::map<std::string, std::string> m;
  m["profile"] = profile;
  m["seed"] = std::to_string(seed);
  m["work.dir"] = work_dir;

  m["data.raw_dir"] = data.raw_dir;
  m["data.synthetic"] = data.synthetic ? "true" : "false";
  m["data.synthetic_speakers"] = std::to_string(data.synthetic_speakers);
  m["data.synthetic_utts"] = std::to_string(data.synthetic_utts);
  m["data.train_frac"] = fmt_double(data.train_frac);
  m["data.val_frac"] = fmt_double(data.val_frac);
  m["data.test_frac"] = fmt_double(data.test_frac);
  m["data.n_perturb"] = std::to_string(data.n_perturb);

  m["train.alpha"] = fmt_double(train.alpha);
  m["train.n_pseudo"] = std::to_string(train.n_pseudo);
  m["train.batch_size"] = std::to_string(train.batch_size);
  m["train.segment_frames"] = std::to_string(train.segment_frames);
  m["train.total_steps"] = std::to_string(train.total_steps);
  m["train.lr"] = fmt_double(train.lr);
  m["train.beta1"] = fmt_double(train.beta1);
  m["train.beta2"] = fmt_double(train.beta2);
  m["train.eps"] = fmt_double(train.eps);
  m["train.weight_decay"] = fmt_double(train.weight_decay);
  m["train.lr_decay"] = fmt_double(train.lr_decay);
  m["train.perturbation"] = train.perturbation;
  m["train.checkpoint_every"] = std::to_string(train.checkpoint_every);
  m["train.log_every"] = std::to_string(train.log_every);
  m["teacher.perturbation"] = teacher_perturbation;
  m["teacher.speaker_sampling"] = teacher_speaker_sampling ? "true" : "false";

  m["loss.w_rec"] = fmt_double(weights.w_rec);
  m["loss.w_kl"] = fmt_double(weights.w_kl);
  m["loss.w_fm"] = fmt_double(weights.w_fm);

  m["model.d_content"] = std::to_string(model.d_content);
  m["model.d_z"] = std::to_string(model.d_z);
  m["model.d_spk"] = std::to_string(model.d_spk);
  m["model.hidden"] = std::to_string(model.hidden);
  m["model.wn_layers"] = std::to_string(model.wn_layers);
  m["model.wn_kernel"] = std::to_string(model.wn_kernel);
  m["model.wn_dilation_growth"] = std::to_string(model.wn_dilation_growth);
  m["model.n_flow_couplings"] = std::to_string(model.n_flow_couplings);
  m["model.flow_wn_layers"] = std::to_string(model.flow_wn_layers);
  m["model.flow_mean_only"] = model.flow_mean_only ? "true" : "false";
  m["model.upsample"] = join_ints(model.upsample);
  m["model.gen_ch0"] = std::to_string(model.gen_ch0);
  m["model.resblock_kernels"] = join_ints(model.resblock_kernels);
  m["model.resblock_dilations"] = join_ints(model.resblock_dilations);
  m["model.periods"] = join_ints(model.periods);
  m["model.n_scales"] = std::to_string(model.n_scales);
  m["model.disc_ch0"] = std::to_string(model.disc_ch0);
  m["model.content_seed"] = std::to_string(model.content_seed);
  m["model.speaker_seed"] = std::to_string(model.speaker_seed);

  m["audio.rate"] = std::to_string(model.stft.rate);
  m["audio.n_fft"] = std::to_string(model.stft.n_fft);
  m["audio.hop"] = std::to_string(model.stft.hop);
  m["audio.win"] = std::to_string(model.stft.win);
  m["audio.n_mels"] = std::to_string(model.mel.n_mels);
  m["audio.fmin"] = fmt_double(model.mel.fmin);
  m["audio.fmax"] = fmt_double(model.mel.fmax);

  m["content.command"] = content_command;
  m["content.layer"] = std::to_string(content_layer);
  m["content.frame_ms"] = fmt_double(content_frame_ms);
  m["speaker.command"] = speaker_command;

  m["eval.n_sources"] = std::to_string(eval.n_sources);
  m["eval.target_speakers"] = join_str(eval.target_speakers);
  m["eval.split"] = eval.split;
  m["eval.asr"] = eval.asr;
  m["eval.asr_endpoint"] = eval.asr_endpoint;
  m["eval.asr_command"] = eval.asr_command;
  m["eval.asr_timeout_ms"] = std::to_string(eval.asr_timeout_ms);
  m["eval.asr_retries"] = std::to_string(eval.asr_retries);
  m["eval.asr_backoff_ms"] = std::to_string(eval.asr_backoff_ms);
  m["eval.mock_sub_every"] = std::to_string(eval.mock_sub_every);
  m["eval.temperature"] = fmt_double(eval.temperature);
  m["eval.checkpoint"] = eval.checkpoint;

  m["tsne.perplexity"] = fmt_double(tsne_perplexity);
  m["tsne.iters"] = std::to_string(tsne_iters);
  m["tsne.seed"] = std::to_string(tsne_seed);

  m["convert.source"] = convert_source;
  m["convert.reference"] = convert_reference;
  m["convert.out"] = convert_out;
  m["convert.checkpoint"] = convert_checkpoint;
  m["run.dir"] = run_dir;
  return m;
}

u64 PipelineConfig::hash() const {
  std::string blob;
  for (const auto& [k, v] : to_map()) {
    blob += k;
    blob += '=';
    blob += v;
    blob += '\n';
  }
  return fnv1a64(blob.data(), blob.size());
}

void PipelineConfig::validate() const {
  std::vector<std::string> problems;
  collect_problems(*this, problems);
  if (problems.empty()) return;
  std::string msg = "config validation failed:";
  for (const auto& p : problems) msg += "\n  - " + p;
  fail_arg(msg);
}

PipelineConfig PipelineConfig::defaults(const std::string& profile) {
  PipelineConfig c;
  if (profile == "toy" || profile.empty()) {
    c.profile = "toy";
    c.model = model::ModelConfig::toy();
  } else if (profile == "paper") {
    c.profile = "paper";
    c.model = model::ModelConfig::paper();
    c.train.alpha = 0.01;
    c.train.n_pseudo = 25;
    c.train.batch_size = 64;
    c.train.segment_frames = 128;
    c.train.total_steps = 200000;
    c.train.checkpoint_every = 5000;
    c.train.log_every = 100;
    c.data.n_perturb = 8;
    c.data.train_frac = 0.9;
    c.data.val_frac = 0.05;
    c.data.test_frac = 0.05;
    c.teacher_perturbation = "sr";
    c.eval.n_sources = 400;
  } else {
    fail_arg("unknown profile '" + profile + "' (expected 'toy' or 'paper')");
  }
  return c;
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text,
                                                                   const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<std::string> problems;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    size_t hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back(origin + ":" + std::to_string(lineno) +
                         ": expected 'key = value', got '" + line + "'");
      continue;
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      problems.push_back(origin + ":" + std::to_string(lineno) + ": empty key");
      continue;
    }
    pairs.emplace_back(key, value);
  }
  if (!problems.empty()) {
    std::string msg = "config syntax errors:";
    for (const auto& p : problems) msg += "\n  - " + p;
    fail_arg(msg);
  }
  return pairs;
}

PipelineConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                           const std::string& profile_flag, std::optional<u64> seed_flag) {
  std::vector<std::pair<std::string, std::string>> file_pairs;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) fail("cannot open config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    file_pairs = parse_config_text(buf.str(), path);
  }

  std::vector<std::pair<std::string, std::string>> override_pairs;
  for (const auto& ov : overrides) {
    size_t eq = ov.find('=');
    if (eq == std::string::npos || eq == 0)
      fail_arg("--set expects key=value, got '" + ov + "'");
    override_pairs.emplace_back(trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
  }

  // The profile decides the defaults, so resolve it first: flag beats
  // override beats file.
  std::string profile = "toy";
  for (const auto& [k, v] : file_pairs)
    if (k == "profile") profile = v;
  for (const auto& [k, v] : override_pairs)
    if (k == "profile") profile = v;
  if (!profile_flag.empty()) profile = profile_flag;
  if (profile != "toy" && profile != "paper")
    fail_arg("unknown profile '" + profile + "' (expected 'toy' or 'paper')");

  PipelineConfig cfg = PipelineConfig::defaults(profile);
  cfg.profile = profile;

  std::vector<std::string> problems;
  const auto& table = key_table();
  auto apply = [&](const std::vector<std::pair<std::string, std::string>>& pairs,
                   const std::string& origin) {
    for (const auto& [k, v] : pairs) {
      auto it = table.find(k);
      if (it == table.end()) {
        problems.push_back("unknown key '" + k + "' (" + origin + ")");
        continue;
      }
      ValueReader reader{k, v, problems};
      it->second(cfg, reader);
    }
  };
  apply(file_pairs, path.empty() ? "defaults" : path);
  apply(override_pairs, "--set");
  if (seed_flag) cfg.seed = *seed_flag;

  collect_problems(cfg, problems);
  if (!problems.empty()) {
    std::string msg = "config validation failed:";
    for (const auto& p : problems) msg += "\n  - " + p;
    fail_arg(msg);
  }
  return cfg;
}

void write_config_snapshot(const PipelineConfig& cfg, const std::string& path) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) fail("cannot write config snapshot '" + path + "'");
    for (const auto& [k, v] : cfg.to_map()) out << k << " = " << v << "\n";
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    fail("cannot rename config snapshot into place at '" + path + "'");
}

}  // namespace pvc::trainer
