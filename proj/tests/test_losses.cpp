#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pvc/losses.hpp"
#include "support/gradcheck.hpp"

using namespace pvc;
using namespace pvc::losses;
using model::GaussianSeq;
using nn::backward;
using nn::NoGradGuard;
using nn::Var;

namespace {

Tensor rand_tensor(std::vector<i64> shape, Rng& rng, double s = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = s * rng.normal();
  return t;
}

Var cv(const Tensor& t) { return Var::constant(t); }

// independent scalar-loop oracles
double oracle_mean_abs_diff(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (size_t i = 0; i < a.data.size(); ++i) s += std::fabs(a.data[i] - b.data[i]);
  return s / (double)a.data.size();
}

double oracle_kl(const Tensor& mu_q, const Tensor& ls_q, const Tensor& z, const Tensor& z_p,
                 double log_det, const Tensor& mu_p, const Tensor& ls_p) {
  double s = 0;
  const size_t n = z.data.size();
  for (size_t i = 0; i < n; ++i) {
    const double lq = -ls_q.data[i] -
                      0.5 * (z.data[i] - mu_q.data[i]) * (z.data[i] - mu_q.data[i]) *
                          std::exp(-2.0 * ls_q.data[i]);
    const double lp = -ls_p.data[i] -
                      0.5 * (z_p.data[i] - mu_p.data[i]) * (z_p.data[i] - mu_p.data[i]) *
                          std::exp(-2.0 * ls_p.data[i]);
    s += lq - lp;
  }
  return s / (double)n - log_det / (double)n;
}

}  // namespace

TEST_CASE("reconstruction loss is the mean absolute difference") {
  NoGradGuard ng;
  Rng rng(1);
  Tensor a = rand_tensor({3, 4}, rng);
  CHECK(recon(cv(a), cv(a)).item() == 0.0);

  Tensor b = a;
  for (auto& v : b.data) v += 0.5;
  CHECK(recon(cv(a), cv(b)).item() == doctest::Approx(0.5).epsilon(1e-12));

  Tensor c = rand_tensor({3, 4}, rng);
  const double want = oracle_mean_abs_diff(a, c);
  CHECK(std::fabs(recon(cv(a), cv(c)).item() - want) <= 1e-6 * std::fabs(want));

  Tensor wrong = rand_tensor({4, 3}, rng);
  CHECK_THROWS_AS(recon(cv(a), cv(wrong)), ArgumentError);
}

TEST_CASE("kl vanishes when prior equals posterior under an identity flow") {
  NoGradGuard ng;
  Rng rng(2);
  Tensor mu = rand_tensor({1, 3, 5}, rng);
  Tensor ls = rand_tensor({1, 3, 5}, rng, 0.3);
  Tensor z = rand_tensor({1, 3, 5}, rng);
  GaussianSeq q{cv(mu), cv(ls)};
  GaussianSeq p{cv(mu), cv(ls)};
  Var v = kl(q, cv(z), cv(z), cv(Tensor::scalar(0.0)), p);
  CHECK(v.item() == 0.0);
}

TEST_CASE("kl matches the closed form for a shifted prior mean") {
  NoGradGuard ng;
  const double delta = 0.7;
  Tensor mu_q = Tensor::zeros({1, 2, 4});
  Tensor ls = Tensor::zeros({1, 2, 4});
  Tensor mu_p = Tensor::full({1, 2, 4}, delta);
  GaussianSeq q{cv(mu_q), cv(ls)};
  GaussianSeq p{cv(mu_p), cv(ls)};
  // z = q.mu, identity flow
  Var v = kl(q, cv(mu_q), cv(mu_q), cv(Tensor::scalar(0.0)), p);
  CHECK(v.item() == doctest::Approx(delta * delta / 2.0).epsilon(1e-12));
}

TEST_CASE("kl equals a brute-force oracle and ignores frame duplication") {
  NoGradGuard ng;
  Rng rng(3);
  Tensor mu_q = rand_tensor({1, 3, 4}, rng);
  Tensor ls_q = rand_tensor({1, 3, 4}, rng, 0.2);
  Tensor z = rand_tensor({1, 3, 4}, rng);
  Tensor z_p = rand_tensor({1, 3, 4}, rng);
  Tensor mu_p = rand_tensor({1, 3, 4}, rng);
  Tensor ls_p = rand_tensor({1, 3, 4}, rng, 0.2);
  const double log_det = 0.37;

  GaussianSeq q{cv(mu_q), cv(ls_q)};
  GaussianSeq p{cv(mu_p), cv(ls_p)};
  const double got = kl(q, cv(z), cv(z_p), cv(Tensor::scalar(log_det)), p).item();
  const double want = oracle_kl(mu_q, ls_q, z, z_p, log_det, mu_p, ls_p);
  CHECK(std::fabs(got - want) <= 1e-6 * std::max(1.0, std::fabs(want)));

  // duplicate every frame; mean (and per-element log-det share) unchanged
  auto dup = [](const Tensor& t) {
    Tensor d({t.dim(0), t.dim(1), 2 * t.dim(2)});
    for (i64 c = 0; c < t.dim(1); ++c)
      for (i64 i = 0; i < t.dim(2); ++i) {
        d.at(0, c, 2 * i) = t.at(0, c, i);
        d.at(0, c, 2 * i + 1) = t.at(0, c, i);
      }
    return d;
  };
  GaussianSeq q2{cv(dup(mu_q)), cv(dup(ls_q))};
  GaussianSeq p2{cv(dup(mu_p)), cv(dup(ls_p))};
  const double got2 =
      kl(q2, cv(dup(z)), cv(dup(z_p)), cv(Tensor::scalar(2.0 * log_det)), p2).item();
  CHECK(got2 == doctest::Approx(got).epsilon(1e-12));

  Tensor bad = z;
  bad.data[0] = std::nan("");
  CHECK_THROWS_AS(kl(q, cv(bad), cv(z_p), cv(Tensor::scalar(0.0)), p), ArgumentError);
}

TEST_CASE("kl is non-negative in expectation over z drawn from q") {
  NoGradGuard ng;
  Rng rng(4);
  Tensor mu_q = rand_tensor({1, 2, 5}, rng, 0.8);
  Tensor ls_q = rand_tensor({1, 2, 5}, rng, 0.3);
  Tensor mu_p = rand_tensor({1, 2, 5}, rng, 0.8);
  Tensor ls_p = rand_tensor({1, 2, 5}, rng, 0.3);
  GaussianSeq q{cv(mu_q), cv(ls_q)};
  GaussianSeq p{cv(mu_p), cv(ls_p)};

  const int n_draws = 10000;
  double sum = 0, sum_sq = 0;
  Rng zr(5);
  for (int k = 0; k < n_draws; ++k) {
    Tensor z = mu_q;
    for (size_t i = 0; i < z.data.size(); ++i)
      z.data[i] += std::exp(ls_q.data[i]) * zr.normal();
    const double v = kl(q, cv(z), cv(z), cv(Tensor::scalar(0.0)), p).item();
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / n_draws;
  const double var = sum_sq / n_draws - mean * mean;
  const double stderr_ = std::sqrt(var / n_draws);
  CHECK(mean > -3.0 * stderr_);
}

TEST_CASE("lsgan terms hit the canonical points") {
  NoGradGuard ng;
  Tensor ones = Tensor::full({2, 1, 6}, 1.0);
  Tensor zeros = Tensor::zeros({2, 1, 6});
  Tensor halves = Tensor::full({2, 1, 6}, 0.5);

  auto [d_perfect, g_unused] = adversarial({cv(ones)}, {cv(zeros)});
  CHECK(d_perfect.item() == 0.0);

  auto [d_unused, g_fooled] = adversarial({cv(halves)}, {cv(ones)});
  CHECK(g_fooled.item() == 0.0);

  auto [d_half, g_half] = adversarial({cv(halves)}, {cv(halves)});
  CHECK(d_half.item() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(g_half.item() == doctest::Approx(0.25).epsilon(1e-12));

  // sums over sub-discriminators
  auto [d_two, g_two] = adversarial({cv(halves), cv(halves)}, {cv(halves), cv(halves)});
  CHECK(d_two.item() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(g_two.item() == doctest::Approx(0.5).epsilon(1e-12));

  CHECK_THROWS_AS(adversarial({}, {}), ArgumentError);
  CHECK_THROWS_AS(adversarial({cv(ones)}, {}), ArgumentError);
}

TEST_CASE("lsgan terms equal a brute-force oracle on random maps") {
  NoGradGuard ng;
  Rng rng(6);
  std::vector<Tensor> real = {rand_tensor({2, 1, 7}, rng), rand_tensor({4, 1, 3}, rng)};
  std::vector<Tensor> fake = {rand_tensor({2, 1, 7}, rng), rand_tensor({4, 1, 3}, rng)};
  auto [d, g] = adversarial({cv(real[0]), cv(real[1])}, {cv(fake[0]), cv(fake[1])});

  double want_d = 0, want_g = 0;
  for (int s = 0; s < 2; ++s) {
    double dr = 0, df = 0, gf = 0;
    for (size_t i = 0; i < real[s].data.size(); ++i) {
      dr += (real[s].data[i] - 1.0) * (real[s].data[i] - 1.0);
      df += fake[s].data[i] * fake[s].data[i];
      gf += (fake[s].data[i] - 1.0) * (fake[s].data[i] - 1.0);
    }
    want_d += dr / real[s].data.size() + df / fake[s].data.size();
    want_g += gf / fake[s].data.size();
  }
  CHECK(std::fabs(d.item() - want_d) <= 1e-6 * std::fabs(want_d));
  CHECK(std::fabs(g.item() - want_g) <= 1e-6 * std::fabs(want_g));
}

TEST_CASE("feature matching sums nested means and detaches the real side") {
  Rng rng(7);
  Tensor f1 = rand_tensor({1, 2, 5}, rng);
  Tensor f2 = rand_tensor({1, 3, 4}, rng);
  {
    NoGradGuard ng;
    CHECK(feature_matching({{cv(f1), cv(f2)}}, {{cv(f1), cv(f2)}}).item() == 0.0);

    Tensor g1 = f1;
    for (auto& v : g1.data) v += 1.0;
    CHECK(feature_matching({{cv(f1)}}, {{cv(g1)}}).item() == doctest::Approx(1.0).epsilon(1e-12));

    Tensor h1 = rand_tensor({1, 2, 5}, rng);
    Tensor h2 = rand_tensor({1, 3, 4}, rng);
    const double want = oracle_mean_abs_diff(f1, h1) + oracle_mean_abs_diff(f2, h2);
    const double got = feature_matching({{cv(f1), cv(f2)}}, {{cv(h1), cv(h2)}}).item();
    CHECK(std::fabs(got - want) <= 1e-6 * std::fabs(want));

    CHECK_THROWS_AS(feature_matching({{cv(f1), cv(f2)}}, {{cv(h1)}}), ArgumentError);
    CHECK_THROWS_AS(feature_matching({{cv(f1)}}, {{cv(f2)}}), ArgumentError);
    CHECK_THROWS_AS(feature_matching({}, {}), ArgumentError);
  }

  // gradient flows to the fake side only
  Var real_param = Var::param(rand_tensor({1, 2, 3}, rng));
  Var fake_param = Var::param(rand_tensor({1, 2, 3}, rng));
  Var fm = feature_matching({{nn::scale(real_param, 2.0)}}, {{nn::scale(fake_param, 2.0)}});
  backward(fm);
  CHECK(real_param.grad().numel() == 0);
  REQUIRE(fake_param.grad().numel() == 3 * 2);
  double gmax = 0;
  for (double v : fake_param.grad().data) gmax = std::max(gmax, std::fabs(v));
  CHECK(gmax > 0.0);
}

TEST_CASE("assembly applies the default weights and flags non-finite terms") {
  LossWeights w;
  LossBreakdown zero = assemble(0, 0, 0, 0, 0, w);
  CHECK(zero.total_g == 0.0);
  CHECK(zero.total_d == 0.0);

  LossBreakdown b = assemble(1, 1, 3, 1, 1, w);
  CHECK(b.total_g == doctest::Approx(49.0));  // 45 + 1 + 1 + 2
  CHECK(b.total_d == doctest::Approx(3.0));

  // unit weights reproduce the plain sum
  LossWeights unit;
  unit.w_rec = unit.w_kl = unit.w_fm = 1.0;
  CHECK(assemble(1, 1, 3, 1, 1, unit).total_g == doctest::Approx(4.0));

  try {
    assemble(std::nan(""), 0, 0, 0, 0, w);
    FAIL("expected FatalError");
  } catch (const FatalError& e) {
    CHECK(std::string(e.what()).find("rec") != std::string::npos);
  }
  try {
    assemble(0, 0, 0, 0, std::numeric_limits<double>::infinity(), w);
    FAIL("expected FatalError");
  } catch (const FatalError& e) {
    CHECK(std::string(e.what()).find("fm") != std::string::npos);
  }

  LossWeights bad;
  bad.w_rec = -1;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
}

TEST_CASE("weighted generator total matches the scalar assembly and is differentiable") {
  LossWeights w;
  Rng rng(8);
  Tensor rt = rand_tensor({2, 3}, rng, 0.5);
  Tensor kt = rand_tensor({2, 3}, rng, 0.5);
  auto build = [&](const std::vector<Var>& params) {
    Var rec_term = nn::mean_all(nn::abs(params[0]));
    Var kl_term = nn::mean_all(nn::square(params[1]));
    Var adv_term = nn::mean_all(nn::square(nn::add_scalar(params[0], -1.0)));
    Var fm_term = nn::mean_all(nn::abs(nn::sub(params[0], params[1])));
    return weighted_generator_total(rec_term, kl_term, adv_term, fm_term, w);
  };
  auto [rel, abs_err] = testsup::grad_check({rt, kt}, build);
  CHECK(rel < 1e-5);

  NoGradGuard ng;
  Var total = build({cv(rt), cv(kt)});
  const double rec_v = nn::mean_all(nn::abs(cv(rt))).item();
  const double kl_v = nn::mean_all(nn::square(cv(kt))).item();
  const double adv_v = nn::mean_all(nn::square(nn::add_scalar(cv(rt), -1.0))).item();
  const double fm_v = nn::mean_all(nn::abs(nn::sub(cv(rt), cv(kt)))).item();
  LossBreakdown b = assemble(rec_v, kl_v, 0.0, adv_v, fm_v, w);
  CHECK(total.item() == doctest::Approx(b.total_g).epsilon(1e-12));
}
