#include "pvc/losses.hpp"

#include <cmath>

namespace pvc::losses {

using namespace pvc::nn;

namespace {

void require_finite(const Var& v, const char* what) {
  if (!v.value().all_finite()) fail_arg(std::string("loss: non-finite values in ") + what);
}

}  // namespace

void LossWeights::validate() const {
  require_arg(w_rec >= 0 && w_kl >= 0 && w_fm >= 0, "loss weights must be non-negative");
}

Var recon(const Var& mel_target, const Var& mel_pred) {
  if (mel_target.shape() != mel_pred.shape())
    fail_arg("recon loss: shape mismatch " + mel_target.value().shape_str() + " vs " +
             mel_pred.value().shape_str());
  return mean_all(abs(sub(mel_target, mel_pred)));
}

Var kl(const model::GaussianSeq& q, const Var& z, const Var& z_p, const Var& log_det,
       const model::GaussianSeq& p) {
  require_finite(q.mu, "q.mu");
  require_finite(q.log_sigma, "q.log_sigma");
  require_finite(z, "z");
  require_finite(z_p, "z_p");
  require_finite(log_det, "log_det");
  require_finite(p.mu, "p.mu");
  require_finite(p.log_sigma, "p.log_sigma");
  if (q.mu.shape() != z.shape() || p.mu.shape() != z_p.shape())
    fail_arg("kl loss: shape mismatch between distributions and samples");

  // log N(x; mu, logs) = -0.5 log 2pi - logs - 0.5 (x-mu)^2 exp(-2 logs);
  // the constant cancels between the two densities.
  Var dq = sub(z, q.mu);
  Var log_q = sub(neg(q.log_sigma),
                  scale(mul(square(dq), exp(scale(q.log_sigma, -2.0))), 0.5));
  Var dp = sub(z_p, p.mu);
  Var log_p = sub(neg(p.log_sigma),
                  scale(mul(square(dp), exp(scale(p.log_sigma, -2.0))), 0.5));
  Var cell_mean = mean_all(sub(log_q, log_p));
  return sub(cell_mean, scale(log_det, 1.0 / (double)z.value().numel()));
}

std::pair<Var, Var> adversarial(const std::vector<Var>& d_real, const std::vector<Var>& d_fake) {
  require_arg(!d_real.empty() && d_real.size() == d_fake.size(),
              "adversarial loss: need matching non-empty score lists");
  Var adv_d, adv_g;
  for (size_t i = 0; i < d_real.size(); ++i) {
    Var d_term = add(mean_all(square(add_scalar(d_real[i], -1.0))), mean_all(square(d_fake[i])));
    Var g_term = mean_all(square(add_scalar(d_fake[i], -1.0)));
    adv_d = adv_d.defined() ? add(adv_d, d_term) : d_term;
    adv_g = adv_g.defined() ? add(adv_g, g_term) : g_term;
  }
  return {adv_d, adv_g};
}

Var feature_matching(const std::vector<std::vector<Var>>& real,
                     const std::vector<std::vector<Var>>& fake) {
  require_arg(!real.empty() && real.size() == fake.size(),
              "feature matching: need matching non-empty feature lists");
  Var total;
  for (size_t i = 0; i < real.size(); ++i) {
    require_arg(real[i].size() == fake[i].size(), "feature matching: layer count mismatch");
    for (size_t j = 0; j < real[i].size(); ++j) {
      Var term = mean_all(abs(sub(detach(real[i][j]), fake[i][j])));
      total = total.defined() ? add(total, term) : term;
    }
  }
  require_arg(total.defined(), "feature matching: no layers");
  return total;
}

LossBreakdown assemble(double rec, double kl, double adv_d, double adv_g, double fm,
                       const LossWeights& w) {
  w.validate();
  const struct {
    const char* name;
    double v;
  } terms[] = {{"rec", rec}, {"kl", kl}, {"adv_d", adv_d}, {"adv_g", adv_g}, {"fm", fm}};
  for (const auto& t : terms)
    if (!std::isfinite(t.v))
      fail(std::string("loss: term '") + t.name + "' is non-finite (" + std::to_string(t.v) + ")");
  LossBreakdown b;
  b.rec = rec;
  b.kl = kl;
  b.adv_d = adv_d;
  b.adv_g = adv_g;
  b.fm = fm;
  b.total_g = w.w_rec * rec + w.w_kl * kl + adv_g + w.w_fm * fm;
  b.total_d = adv_d;
  return b;
}

Var weighted_generator_total(const Var& rec, const Var& kl, const Var& adv_g, const Var& fm,
                             const LossWeights& w) {
  w.validate();
  Var total = scale(rec, w.w_rec);
  total = add(total, scale(kl, w.w_kl));
  total = add(total, adv_g);
  return add(total, scale(fm, w.w_fm));
}

}  // namespace pvc::losses
