#include <filesystem>

#include "pvc/dsp/perturb.hpp"
#include "pvc/hash.hpp"
#include "pvc/trainer/trainer.hpp"

namespace fs = std::filesystem;

namespace pvc::trainer {

u64 perturb_variant_seed(u64 base, const std::string& utterance_id, i64 k) {
  return derive_seed(base, utterance_id + "/" + std::to_string(k));
}

void generate_perturb_cache(const corpus::Manifest& m, const std::string& method, i64 n_variants,
                            u64 base_seed, const std::string& cache_root,
                            const std::function<void(const std::string&)>& progress) {
  require_arg(method == "vtlp" || method == "nansy" || method == "sr",
              "perturb cache: method must be vtlp, nansy or sr, got '" + method + "'");
  require_arg(n_variants >= 1, "perturb cache: n_variants must be >= 1");
  for (const auto& rec : m.records) {
    if (rec.split != "train") continue;
    Waveform w = read_wav(m.resolve(rec));
    for (i64 k = 0; k < n_variants; ++k) {
      const u64 seed = perturb_variant_seed(base_seed, rec.utterance_id, k);
      dsp::perturb_cached(w, rec.utterance_id, method, seed, cache_root);
    }
    if (progress) progress(rec.utterance_id);
  }
}

SelectedInputs select_inputs(const corpus::UtteranceRecord& rec, const pseudo::PseudoSet* set,
                             const std::string& perturbation, double alpha,
                             const DataContext& ctx, Rng& rng, i64* speaker_fallbacks) {
  require_arg(ctx.manifest != nullptr, "select_inputs: manifest not set");
  require_arg(alpha >= 0.0 && alpha <= 1.0, "select_inputs: alpha must lie in [0, 1]");
  const corpus::Manifest& m = *ctx.manifest;

  SelectedInputs out;

  // Content branch. An empty pseudo set degrades to the source itself, so a
  // run with n_pseudo = 0 is the plain reconstruction baseline.
  if (perturbation == "pseudo" && set != nullptr && !set->entries.empty()) {
    const pseudo::PseudoEntry& e = pseudo::sample_pseudo(*set, rng);
    const std::string path = ctx.pseudo_root.empty() ? e.pseudo_path
                                                     : ctx.pseudo_root + "/" + e.pseudo_path;
    out.content = read_wav(path);
    out.content_choice = e.pseudo_path;
  } else if (perturbation == "vtlp" || perturbation == "nansy" || perturbation == "sr") {
    require_arg(ctx.n_perturb >= 1, "select_inputs: n_perturb must be >= 1");
    const i64 k = rng.uniform_int(ctx.n_perturb);
    const u64 seed = perturb_variant_seed(ctx.perturb_seed_base, rec.utterance_id, k);
    const std::string path =
        dsp::perturb_cache_path(ctx.perturb_root, perturbation, rec.utterance_id, seed);
    if (!fs::exists(path))
      fail("perturbation cache miss for utterance '" + rec.utterance_id + "' (" + path +
           "); run the prepare stage to generate the cache");
    out.content = read_wav(path);
    out.content_choice = path;
  } else {
    out.content = read_wav(m.resolve(rec));
    out.content_choice = rec.utterance_id;
  }

  // Speaker sampling: with probability alpha the speaker encoder sees a
  // different utterance of the same speaker instead of the source.
  bool substitute = false;
  if (alpha >= 1.0) {
    substitute = true;
  } else if (alpha > 0.0) {
    substitute = rng.uniform() < alpha;
  }
  out.speaker_substituted = substitute;
  if (substitute) {
    const corpus::UtteranceRecord& other =
        corpus::sample_other_utterance(m, rec.speaker_id, rec.utterance_id, rng,
                                       speaker_fallbacks);
    out.speaker = read_wav(m.resolve(other));
    out.speaker_choice = other.utterance_id;
  } else {
    out.speaker = read_wav(m.resolve(rec));
    out.speaker_choice = rec.utterance_id;
  }
  return out;
}

namespace {

void pad_to(std::vector<double>& v, i64 n) {
  if ((i64)v.size() < n) v.resize(n, 0.0);
}

}  // namespace

BatchItem crop_segment(const std::string& source_id, const SelectedInputs& sel,
                       const Waveform& target, i64 hop, i64 segment_frames, Rng& rng) {
  require_arg(hop > 0 && segment_frames > 0, "crop_segment: hop and segment must be positive");
  require_arg(!target.samples.empty(), "crop_segment: empty target for '" + source_id + "'");
  require_arg(sel.content.rate == target.rate,
              "crop_segment: content/target rate mismatch for '" + source_id + "'");
  require_arg(sel.content.samples.size() == target.samples.size(),
              "crop_segment: content input of '" + source_id + "' has " +
                  std::to_string(sel.content.samples.size()) + " samples, target has " +
                  std::to_string(target.samples.size()));

  BatchItem item;
  item.source_id = source_id;
  item.content_input = sel.content;
  item.speaker_input = sel.speaker;
  item.target_waveform = target;

  const i64 n = (i64)target.samples.size();
  const i64 grid = (n + hop - 1) / hop;
  item.grid_frames = grid;

  const i64 frames = std::max(grid, segment_frames);
  pad_to(item.content_input.samples, frames * hop);
  pad_to(item.target_waveform.samples, frames * hop);

  item.crop_start_frame = grid > segment_frames ? rng.uniform_int(grid - segment_frames + 1) : 0;
  return item;
}

}  // namespace pvc::trainer
