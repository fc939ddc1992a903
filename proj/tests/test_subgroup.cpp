#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "grad_check.hpp"
#include "stedr/subgroup.hpp"

using namespace stedr;
namespace ad = stedr::ad;

namespace {

GaussianValue gauss(std::initializer_list<double> mean, double log_var = 0.0) {
  GaussianValue g;
  g.mean = Eigen::VectorXd(static_cast<Eigen::Index>(mean.size()));
  Eigen::Index i = 0;
  for (double m : mean) g.mean(i++) = m;
  g.log_variance = Eigen::VectorXd::Constant(g.mean.size(), log_var);
  return g;
}

double entropy(const Eigen::VectorXd& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p(i) > 0.0) h -= p(i) * std::log(p(i));
  return h;
}

}  // namespace

TEST_CASE("distribution encoders: shapes, zero init, determinism") {
  SubgroupConfig cfg;
  cfg.hidden = 4;
  cfg.latent_dim = 3;
  cfg.k = 3;
  SubgroupNet net(cfg);
  ParamStore params;
  Rng rng(3);
  net.init_params(params, rng);

  Eigen::RowVectorXd xhat(4);
  xhat << 0.5, -1.0, 2.0, 0.0;
  auto [global, locals] = net.encode_distributions(params, xhat);
  CHECK(global.mean.size() == 3);
  CHECK(locals.size() == 3);
  for (const auto& l : locals) {
    CHECK(l.mean.size() == 3);
    CHECK(l.log_variance.size() == 3);
  }

  // identical inputs, identical outputs
  auto [g2, l2] = net.encode_distributions(params, xhat);
  CHECK((global.mean - g2.mean).norm() == 0.0);

  // zero weights and biases: zero means, unit variances
  for (const auto& name : params.names()) params.at(name).setZero();
  auto [gz, lz] = net.encode_distributions(params, xhat);
  CHECK(gz.mean.norm() == 0.0);
  CHECK(gz.log_variance.norm() == 0.0);
  for (const auto& l : lz) {
    CHECK(l.mean.norm() == 0.0);
    CHECK(l.log_variance.norm() == 0.0);
  }
}

TEST_CASE("posterior: hand softmax, uniformity, shift invariance, tie-break") {
  auto post = subgroup_posterior(gauss({0.0, 0.0}), {gauss({0.0, 0.0}), gauss({1.0, 0.0})});
  CHECK(post.probs(0) == doctest::Approx(0.7311).epsilon(1e-3));
  CHECK(post.probs(1) == doctest::Approx(0.2689).epsilon(1e-3));
  CHECK(post.assigned == 0);
  CHECK(post.probs.sum() == doctest::Approx(1.0).epsilon(1e-9));

  // equidistant locals: uniform posterior
  auto uni = subgroup_posterior(gauss({0.0, 0.0}),
                                {gauss({1.0, 0.0}), gauss({0.0, 1.0}), gauss({-1.0, 0.0})});
  for (int k = 0; k < 3; ++k) CHECK(uni.probs(k) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  CHECK(uni.assigned == 0);  // exact tie resolves to the lowest index

  // adding a common constant to every squared distance leaves probs unchanged
  auto base = subgroup_posterior(gauss({0.0, 0.0}), {gauss({1.0, 0.0}), gauss({0.0, 2.0})});
  double c = 3.0;
  auto shifted = subgroup_posterior(
      gauss({0.0, 0.0}), {gauss({std::sqrt(1.0 + c), 0.0}), gauss({0.0, std::sqrt(4.0 + c)})});
  CHECK(base.probs(0) == doctest::Approx(shifted.probs(0)).epsilon(1e-12));
  CHECK(base.probs(1) == doctest::Approx(shifted.probs(1)).epsilon(1e-12));
}

TEST_CASE("mixture KL: exact zero for an identical single component") {
  auto g = gauss({0.3, -0.7, 1.1}, 0.2);
  Rng rng(5);
  Eigen::VectorXd w(1);
  w << 1.0;
  for (int rep = 0; rep < 20; ++rep) {
    double kl = mixture_kl_loss(g, {g}, w, 1, rng);
    CHECK(kl == 0.0);
  }
}

TEST_CASE("mixture KL: 1-D analytic value within Monte-Carlo tolerance") {
  // KL(N(0,1) || N(1,1)) = 0.5
  auto p = gauss({0.0});
  auto q = gauss({1.0});
  Eigen::VectorXd w(1);
  w << 1.0;
  Rng rng(7);
  double kl = mixture_kl_loss(p, {q}, w, 100000, rng);
  CHECK(kl == doctest::Approx(0.5).epsilon(0.04));
  CHECK(std::abs(kl - 0.5) < 0.02);
}

TEST_CASE("mixture KL: estimator variance shrinks with sample count") {
  auto p = gauss({0.0, 0.5});
  std::vector<GaussianValue> locals = {gauss({1.0, 0.0}), gauss({-0.5, 1.0}, 0.3)};
  Eigen::VectorXd w(2);
  w << 0.6, 0.4;
  auto estimator_variance = [&](int s, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> est(200);
    for (auto& e : est) e = mixture_kl_loss(p, locals, w, s, rng);
    double m = 0.0;
    for (double e : est) m += e;
    m /= static_cast<double>(est.size());
    double v = 0.0;
    for (double e : est) v += (e - m) * (e - m);
    return v / static_cast<double>(est.size());
  };
  double v1 = estimator_variance(1, 11);
  double v100 = estimator_variance(100, 12);
  CHECK(v1 / v100 > 10.0);
}

TEST_CASE("mixture KL: determinism and degenerate variances") {
  auto p = gauss({0.2, 0.1});
  std::vector<GaussianValue> locals = {gauss({0.5, 0.0}), gauss({0.0, 0.5})};
  Eigen::VectorXd w(2);
  w << 0.5, 0.5;
  Rng r1(99), r2(99);
  CHECK(mixture_kl_loss(p, locals, w, 16, r1) == mixture_kl_loss(p, locals, w, 16, r2));

  auto degenerate = gauss({0.0, 0.0}, -30.0);
  Rng r3(1);
  CHECK_THROWS_AS(mixture_kl_loss(degenerate, locals, w, 1, r3), std::domain_error);
  CHECK_THROWS_AS(mixture_kl_loss(p, {degenerate, locals[1]}, w, 1, r3), std::domain_error);
}

TEST_CASE("target distribution: worked examples") {
  Eigen::MatrixXd one_row(1, 2);
  one_row << 0.8, 0.2;
  auto td = target_distribution_loss(one_row);
  CHECK(td.q(0, 0) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(td.q(0, 1) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(td.l_td == doctest::Approx(0.0).epsilon(1e-12));

  Eigen::MatrixXd two(2, 2);
  two << 0.8, 0.2, 0.5, 0.5;
  td = target_distribution_loss(two);
  CHECK(td.q(0, 0) == doctest::Approx(0.896).epsilon(1e-3));
  CHECK(td.q(0, 1) == doctest::Approx(0.104).epsilon(1e-3));
  CHECK(td.q(1, 0) == doctest::Approx(0.350).epsilon(1e-3));
  CHECK(td.q(1, 1) == doctest::Approx(0.650).epsilon(1e-3));
  CHECK(td.l_td > 0.0);

  Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(4, 3, 1.0 / 3.0);
  td = target_distribution_loss(uniform);
  CHECK(td.l_td == doctest::Approx(0.0).epsilon(1e-12));
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index k = 0; k < 3; ++k)
      CHECK(td.q(i, k) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("target distribution: empty subgroup handling stays finite") {
  Eigen::MatrixXd probs(3, 3);
  probs << 0.5, 0.5, 0.0, 0.3, 0.7, 0.0, 0.9, 0.1, 0.0;
  auto td = target_distribution_loss(probs);
  CHECK(td.empty_subgroup[2]);
  CHECK_FALSE(td.empty_subgroup[0]);
  CHECK(std::isfinite(td.l_td));
  for (Eigen::Index i = 0; i < 3; ++i) {
    CHECK(td.q.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(td.q(i, 2) == 0.0);
  }
}

TEST_CASE("target distribution sharpens the posterior under equal frequencies") {
  Rng rng(13);
  for (int rep = 0; rep < 200; ++rep) {
    double a = rng.uniform(0.01, 0.99);
    Eigen::MatrixXd p(2, 2);
    p << a, 1.0 - a, 1.0 - a, a;  // column sums equal by construction
    auto td = target_distribution_loss(p);
    for (Eigen::Index i = 0; i < 2; ++i) {
      double hq = entropy(td.q.row(i).transpose());
      double hp = entropy(p.row(i).transpose());
      CHECK(hq <= hp + 1e-12);
      if (std::abs(a - 0.5) > 1e-3) CHECK(hq < hp);
    }
  }
}

TEST_CASE("snn loss: near-perfect reconstruction in the small-variance limit") {
  SubgroupConfig cfg;
  cfg.hidden = 3;
  cfg.latent_dim = 3;
  cfg.k = 1;
  SubgroupNet net(cfg);
  ParamStore params;
  Rng rng(17);
  net.init_params(params, rng);
  // identity mean encoders, identity decoder, variance pushed to the
  // deterministic limit (but above the degeneracy gate)
  params.at("sub.global.wm") = Eigen::MatrixXd::Identity(3, 3);
  params.at("sub.global.bm").setZero();
  params.at("sub.global.wv").setZero();
  params.at("sub.global.bv").setConstant(-20.0);
  params.at("sub.local0.wm") = Eigen::MatrixXd::Identity(3, 3);
  params.at("sub.local0.bm").setZero();
  params.at("sub.local0.wv").setZero();
  params.at("sub.local0.bv").setConstant(-20.0);
  params.at("sub.dec.w") = Eigen::MatrixXd::Identity(3, 3);
  params.at("sub.dec.b").setZero();

  Eigen::MatrixXd xhat(4, 3);
  Rng drng(18);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) xhat(i, j) = drng.normal();
  Rng lrng(19);
  auto parts = net.snn_loss(params, xhat, lrng);
  CHECK(parts.l_vae == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(std::abs(parts.l_vae) < 1e-6);
  CHECK(parts.l_kl == 0.0);  // single component identical to the global
  CHECK(parts.l_td == doctest::Approx(0.0));
  CHECK(parts.l_snn == parts.l_kl + parts.l_td + parts.l_vae);
}

TEST_CASE("snn loss parts always sum exactly") {
  SubgroupConfig cfg;
  cfg.hidden = 5;
  cfg.latent_dim = 3;
  cfg.k = 3;
  cfg.mc_samples = 2;
  SubgroupNet net(cfg);
  ParamStore params;
  Rng rng(21);
  net.init_params(params, rng);
  Eigen::MatrixXd xhat(6, 5);
  Rng drng(22);
  for (Eigen::Index i = 0; i < xhat.rows(); ++i)
    for (Eigen::Index j = 0; j < xhat.cols(); ++j) xhat(i, j) = drng.normal();
  Rng lrng(23);
  auto parts = net.snn_loss(params, xhat, lrng);
  CHECK(parts.l_snn == parts.l_kl + parts.l_td + parts.l_vae);
  CHECK(std::isfinite(parts.l_snn));
}

TEST_CASE("snn loss gradients match finite differences") {
  SubgroupConfig cfg;
  cfg.hidden = 4;
  cfg.latent_dim = 3;
  cfg.k = 2;
  cfg.mc_samples = 1;
  SubgroupNet net(cfg);
  ParamStore params;
  Rng rng(31);
  net.init_params(params, rng);

  Eigen::MatrixXd xhat(5, 4);
  Rng drng(32);
  for (Eigen::Index i = 0; i < xhat.rows(); ++i)
    for (Eigen::Index j = 0; j < xhat.cols(); ++j) xhat(i, j) = drng.normal();
  Rng nrng(33);
  Eigen::MatrixXd kl_eps = net.kl_noise(5, nrng);
  Eigen::MatrixXd vae_eps = net.vae_noise(5, nrng);

  // freeze the reference distribution at the base point (it is a constant
  // target during a step)
  Eigen::MatrixXd frozen_q;
  {
    ad::Tape tape;
    auto view = params.on_tape(tape);
    auto g = net.build(tape, view, tape.constant(xhat), kl_eps, vae_eps);
    frozen_q = g.q;
  }

  auto loss_of = [&](const ParamStore& p) {
    ad::Tape tape;
    auto view = p.on_tape(tape);
    auto g = net.build(tape, view, tape.constant(xhat), kl_eps, vae_eps, frozen_q);
    return g.l_snn->scalar();
  };

  ad::Tape tape;
  auto view = params.on_tape(tape);
  auto g = net.build(tape, view, tape.constant(xhat), kl_eps, vae_eps, frozen_q);
  tape.backward(g.l_snn);
  std::map<std::string, Eigen::MatrixXd> analytic;
  params.copy_grads_from(view, analytic);

  // reparameterization must move both mean and log-variance heads
  CHECK(analytic.at("sub.global.wm").cwiseAbs().maxCoeff() > 0.0);
  CHECK(analytic.at("sub.global.wv").cwiseAbs().maxCoeff() > 0.0);
  CHECK(analytic.at("sub.local0.wv").cwiseAbs().maxCoeff() > 0.0);

  auto res = testutil::check_gradients(params, loss_of, analytic);
  CHECK(res.checked > 50);
  CHECK_MESSAGE(res.max_rel_err <= 1e-4, "worst: ", res.worst_param, " err ", res.max_rel_err);
}
