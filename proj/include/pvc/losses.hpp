#pragma once

#include <utility>
#include <vector>

#include "pvc/model/net.hpp"

namespace pvc::losses {

using nn::Var;

struct LossWeights {
  double w_rec = 45.0;
  double w_kl = 1.0;
  double w_fm = 2.0;
  void validate() const;
};

struct LossBreakdown {
  double rec = 0, kl = 0, adv_d = 0, adv_g = 0, fm = 0;
  double total_g = 0, total_d = 0;
};

// Mean absolute difference over all cells.
Var recon(const Var& mel_target, const Var& mel_pred);

// Sample-based KL through the flow: mean over cells of
// log q(z) - log p(z_p), minus the per-element share of log_det.
Var kl(const model::GaussianSeq& q, const Var& z, const Var& z_p, const Var& log_det,
       const model::GaussianSeq& p);

// Least-squares GAN terms, summed over sub-discriminators:
// adv_d = mean[(d_real-1)^2] + mean[d_fake^2], adv_g = mean[(d_fake-1)^2].
std::pair<Var, Var> adversarial(const std::vector<Var>& d_real, const std::vector<Var>& d_fake);

// Sum over sub-discriminators and layers of mean |f_real - f_fake|; real
// features are detached so no gradient reaches them.
Var feature_matching(const std::vector<std::vector<Var>>& real,
                     const std::vector<std::vector<Var>>& fake);

// Scalar assembly with finite checks; throws naming the offending term.
LossBreakdown assemble(double rec, double kl, double adv_d, double adv_g, double fm,
                       const LossWeights& w);

// The same weighting as a graph node for the generator update.
Var weighted_generator_total(const Var& rec, const Var& kl, const Var& adv_g, const Var& fm,
                             const LossWeights& w);

}  // namespace pvc::losses
