#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "grad_check.hpp"
#include "stedr/metrics.hpp"
#include "stedr/model.hpp"
#include "stedr/synth.hpp"

using namespace stedr;
namespace ad = stedr::ad;

namespace {

SampleSet tiny_dataset(Rng& rng, std::size_t n, Eigen::Index m, Eigen::Index t_len) {
  SampleSet set;
  for (Eigen::Index j = 0; j < m; ++j) set.covariate_names.push_back("c" + std::to_string(j));
  set.sequential = t_len > 1;
  set.has_truth = false;
  for (std::size_t i = 0; i < n; ++i) {
    TrainSample s;
    s.seq.codes.resize(t_len, m);
    for (Eigen::Index t = 0; t < t_len; ++t)
      for (Eigen::Index c = 0; c < m; ++c) s.seq.codes(t, c) = rng.normal();
    s.seq.times.resize(t_len);
    for (Eigen::Index t = 0; t < t_len; ++t) s.seq.times(t) = static_cast<double>(t_len - 1 - t);
    s.seq.valid_mask = Eigen::VectorXd::Ones(t_len);
    s.treatment = rng.bernoulli(0.5) ? 1 : 0;
    s.y = rng.normal();
    set.samples.push_back(std::move(s));
  }
  // both arms guaranteed
  set.samples[0].treatment = 1;
  set.samples[1].treatment = 0;
  return set;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.k = 2;
  cfg.hidden = 4;
  cfg.embed_dim = 3;
  cfg.latent_dim = 3;
  cfg.t_max = 3;
  cfg.batch_size = 8;
  cfg.pred_layers = 2;
  cfg.max_epochs = 3;
  cfg.patience = 5;
  cfg.seed = 42;
  return cfg;
}

}  // namespace

TEST_CASE("iptw weights: worked examples and modes") {
  auto w = iptw_weights({0.5}, {1}, 0.5, IptwMode::literal_sum, 0.05);
  CHECK(w[0] == doctest::Approx(2.0).epsilon(1e-12));
  w = iptw_weights({0.6}, {1}, 0.3, IptwMode::literal_sum, 0.05);
  CHECK(w[0] == doctest::Approx(2.25).epsilon(1e-12));

  w = iptw_weights({0.6, 0.6}, {1, 0}, 0.3, IptwMode::treatment_conditional, 0.05);
  CHECK(w[0] == doctest::Approx(0.3 / 0.6));
  CHECK(w[1] == doctest::Approx(0.7 / 0.4));

  // clipping bounds the weight
  w = iptw_weights({0.0001}, {1}, 0.5, IptwMode::literal_sum, 0.05);
  CHECK(w[0] == doctest::Approx(0.5 / 0.05 + 0.5 / 0.95));

  CHECK_THROWS_AS(iptw_weights({0.5}, {1}, 0.0, IptwMode::literal_sum, 0.05), PositivityError);
  CHECK_THROWS_AS(iptw_weights({0.5}, {1}, 1.0, IptwMode::literal_sum, 0.05), PositivityError);
}

TEST_CASE("iptw literal mode satisfies the proof-backed lower bound") {
  Rng rng(2);
  for (int rep = 0; rep < 500; ++rep) {
    double pr = rng.uniform(0.02, 0.98);
    double bound = std::pow(std::sqrt(pr) + std::sqrt(1.0 - pr), 2.0);
    CHECK(bound >= 1.0);
    double t_hat = rng.uniform(0.001, 0.999);
    auto w = iptw_weights({t_hat}, {1}, pr, IptwMode::literal_sum, 0.001);
    CHECK(w[0] >= bound - 1e-9);
    // equality at the interior minimizer
    double t_star = std::sqrt(pr) / (std::sqrt(pr) + std::sqrt(1.0 - pr));
    auto w_star = iptw_weights({t_star}, {1}, pr, IptwMode::literal_sum, 0.001);
    CHECK(w_star[0] == doctest::Approx(bound).epsilon(1e-9));
  }
}

TEST_CASE("interval overlap: examples and properties") {
  CHECK(interval_overlap(0, 2, 1, 3) == doctest::Approx(1.0));
  CHECK(interval_overlap(0, 1, 2, 3) == 0.0);
  CHECK(interval_overlap(0, 1, 1, 2) == 0.0);  // touching intervals

  Rng rng(3);
  for (int rep = 0; rep < 500; ++rep) {
    double a = rng.normal(), b = a + std::abs(rng.normal());
    double c = rng.normal(), d = c + std::abs(rng.normal());
    double ov = interval_overlap(a, b, c, d);
    CHECK(ov >= 0.0);
    CHECK(ov == interval_overlap(c, d, a, b));  // symmetry
    bool disjoint_or_touching = std::min(b, d) <= std::max(a, c);
    CHECK((ov == 0.0) == disjoint_or_touching);
    // 1-Lipschitz in each endpoint
    double h = rng.uniform(0.0, 0.5);
    CHECK(std::abs(interval_overlap(a + h, b, c, d) - ov) <= h + 1e-12);
    CHECK(std::abs(interval_overlap(a, b + h, c, d) - ov) <= h + 1e-12);
  }
}

TEST_CASE("overlap penalty: worked examples") {
  // two members per subgroup placed so the CIs are exactly [0,2] and [1,3]
  double d = 1.0 / metrics::kCi95Z;
  std::vector<double> tau = {1.0 - d, 1.0 + d, 2.0 - d, 2.0 + d};
  std::vector<int> sub = {0, 0, 1, 1};
  auto res = overlap_penalty(tau, sub, 2, 1.0);
  REQUIRE(res.cis.size() == 2);
  CHECK(res.cis[0].low == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(res.cis[0].high == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(res.l_overlap == doctest::Approx(1.0).epsilon(1e-9));

  // disjoint CIs [0,1] and [2,3]
  double e = 0.5 / metrics::kCi95Z;
  tau = {0.5 - e, 0.5 + e, 2.5 - e, 2.5 + e};
  res = overlap_penalty(tau, sub, 2, 1.0);
  CHECK(res.l_overlap == 0.0);

  // three subgroups with pairwise overlaps (1, 0, 0) and alpha = 0.2
  tau = {1.0 - d, 1.0 + d, 2.0 - d, 2.0 + d, 5.5 - e, 5.5 + e};
  sub = {0, 0, 1, 1, 2, 2};
  res = overlap_penalty(tau, sub, 3, 0.2);
  CHECK(res.l_overlap == doctest::Approx(0.2).epsilon(1e-9));

  // singleton subgroups contribute nothing
  res = overlap_penalty({1.0, 1.5}, {0, 1}, 2, 0.5);
  CHECK(res.cis.empty());
  CHECK(res.l_overlap == 0.0);
}

TEST_CASE("identical outcome heads give zero effect everywhere") {
  auto cfg = tiny_config();
  Rng drng(5);
  auto data = tiny_dataset(drng, 12, 5, 3);
  StedrModel model(cfg, 5);
  Rng irng(6);
  model.init_params(irng);
  for (int l = 0; l < cfg.pred_layers; ++l) {
    std::string idx = std::to_string(l);
    model.params().at("head.y1.w" + idx) = model.params().at("head.y0.w" + idx);
    model.params().at("head.y1.b" + idx) = model.params().at("head.y0.b" + idx);
  }
  for (const auto& s : data.samples) {
    auto est = model.forward_one(s);
    CHECK(est.tau_hat == 0.0);
    CHECK(est.y1_hat == est.y0_hat);
    CHECK(est.subgroup >= 0);
    CHECK(est.subgroup < cfg.k);
    CHECK(est.t_hat > 0.0);
    CHECK(est.t_hat < 1.0);
  }
}

TEST_CASE("gmm ablation routes through the global mean with subgroup zero") {
  auto cfg = tiny_config();
  cfg.ablate_gmm = true;
  Rng drng(7);
  auto data = tiny_dataset(drng, 8, 5, 1);
  StedrModel model(cfg, 5);
  Rng irng(8);
  model.init_params(irng);
  for (const auto& s : data.samples) {
    auto est = model.forward_one(s);
    CHECK(est.subgroup == 0);
  }

  // the full model carries strictly more parameters
  auto full_cfg = tiny_config();
  StedrModel full(full_cfg, 5);
  Rng irng2(8);
  full.init_params(irng2);
  CHECK(full.params().count_scalars() > model.params().count_scalars());
}

TEST_CASE("pnn loss: ce saturates to zero and outcome term is linear in weights") {
  // op-level saturation
  ad::Tape t;
  Eigen::MatrixXd one(1, 1), zero(1, 1);
  one << 1.0;
  zero << 0.0;
  Eigen::MatrixXd big(1, 1);
  big << 40.0;
  CHECK(ad::bce_with_logits(t, t.constant(big), one)->scalar() < 1e-12);
  big << -40.0;
  CHECK(ad::bce_with_logits(t, t.constant(big), zero)->scalar() < 1e-12);

  // batch-level linearity in the detached weights
  auto cfg = tiny_config();
  Rng drng(9);
  auto data = tiny_dataset(drng, 10, 5, 2);
  StedrModel model(cfg, 5);
  Rng irng(10);
  model.init_params(irng);
  model.pr_t = 0.5;

  std::vector<const TrainSample*> batch;
  for (const auto& s : data.samples) batch.push_back(&s);
  Rng nrng(11);
  BatchNoise noise;
  noise.kl = model.subgroup_net().kl_noise(static_cast<Eigen::Index>(batch.size()), nrng);
  noise.vae = model.subgroup_net().vae_noise(static_cast<Eigen::Index>(batch.size()), nrng);

  auto eval_pnn = [&](const std::vector<double>& weights, BatchAux base) {
    base.weights = weights;
    ad::Tape tape;
    auto view = model.params().on_tape(tape, false);
    return model.build_batch_loss(tape, view, batch, noise, base).l_pnn->scalar();
  };

  BatchAux aux;
  {
    ad::Tape tape;
    auto view = model.params().on_tape(tape, false);
    aux = model.build_batch_loss(tape, view, batch, noise).aux;
  }
  std::vector<double> w2 = aux.weights, w0(aux.weights.size(), 0.0);
  for (auto& w : w2) w *= 2.0;
  double base = eval_pnn(aux.weights, aux);
  double doubled = eval_pnn(w2, aux);
  double ce_only = eval_pnn(w0, aux);
  CHECK(doubled - ce_only == doctest::Approx(2.0 * (base - ce_only)).epsilon(1e-9));
}

TEST_CASE("total loss additivity against independently computed parts") {
  auto cfg = tiny_config();
  cfg.k = 3;
  Rng drng(13);
  auto data = tiny_dataset(drng, 16, 4, 2);
  StedrModel model(cfg, 4);
  Rng irng(14);
  model.init_params(irng);
  model.pr_t = 0.4;

  std::vector<const TrainSample*> batch;
  for (const auto& s : data.samples) batch.push_back(&s);
  Rng nrng(15);
  BatchNoise noise;
  noise.kl = model.subgroup_net().kl_noise(static_cast<Eigen::Index>(batch.size()), nrng);
  noise.vae = model.subgroup_net().vae_noise(static_cast<Eigen::Index>(batch.size()), nrng);
  ad::Tape tape;
  auto view = model.params().on_tape(tape);
  auto loss = model.build_batch_loss(tape, view, batch, noise);

  CHECK(loss.total->scalar() ==
        loss.l_snn->scalar() + loss.l_pnn->scalar() + loss.l_overlap->scalar());

  // overlap part against the value-level reference implementation
  std::vector<double> tau;
  for (const TrainSample* s : batch) {
    auto est = model.forward_one(*s);
    // undo output unstandardization: the graph works in standardized units
    tau.push_back((est.y1_hat - est.y0_hat) / model.y_std);
  }
  auto ref = overlap_penalty(tau, loss.aux.assigned, cfg.k, cfg.alpha);
  CHECK(loss.l_overlap->scalar() == doctest::Approx(ref.l_overlap).epsilon(1e-9));
}

TEST_CASE("training on the synthetic benchmark: descent, determinism, early stop") {
  auto ds = synth::generate_synthetic_a(400, 7);
  auto data = from_synthetic(ds);
  TrainConfig cfg;
  cfg.k = 3;
  cfg.hidden = 16;
  cfg.embed_dim = 4;
  cfg.latent_dim = 8;
  cfg.t_max = 1;
  cfg.max_epochs = 6;
  cfg.patience = 10;
  cfg.batch_size = 64;
  cfg.seed = 7;

  auto model = train(data, cfg);
  REQUIRE(model.history.size() >= 6);
  CHECK(model.history[5].train_total < model.history[0].train_total);
  CHECK(model.pr_t > 0.3);
  CHECK(model.pr_t < 0.7);

  // byte-identical checkpoints across reruns
  auto model2 = train(data, cfg);
  std::string p1 = "model_det_test1.ckpt", p2 = "model_det_test2.ckpt";
  serial::save_checkpoint(model.to_checkpoint(), p1);
  serial::save_checkpoint(model2.to_checkpoint(), p2);
  CHECK(digest_file(p1) == digest_file(p2));

  // checkpoint round trip preserves estimates exactly
  auto loaded = StedrModel::from_checkpoint(serial::load_checkpoint(p1), data.width());
  auto est_a = model.forward_one(data.samples[3]);
  auto est_b = loaded.forward_one(data.samples[3]);
  CHECK(est_a.tau_hat == est_b.tau_hat);
  CHECK(est_a.subgroup == est_b.subgroup);
  std::remove(p1.c_str());
  std::remove(p2.c_str());

  // early stopping returns the best-validation snapshot
  double best = std::numeric_limits<double>::infinity();
  for (const auto& rec : model.history) best = std::min(best, rec.val_total);
  CHECK(best <= model.history.back().val_total + 1e-12);

  // estimates do not depend on batch partitioning
  auto all = model.estimate_effects(data.samples);
  auto single = model.forward_one(data.samples[11]);
  CHECK(all[11].tau_hat == single.tau_hat);
  CHECK(all[11].subgroup == single.subgroup);
}

TEST_CASE("positivity violation aborts training") {
  Rng drng(17);
  auto data = tiny_dataset(drng, 20, 4, 1);
  for (auto& s : data.samples) s.treatment = 1;
  auto cfg = tiny_config();
  CHECK_THROWS_AS(train(data, cfg), PositivityError);
}

TEST_CASE("end-to-end gradient of the total loss matches finite differences") {
  // n=16, M=5, T=3, K=2, one MC draw, fixed noise and frozen stop-gradients
  TrainConfig cfg = tiny_config();
  cfg.k = 2;
  cfg.mc_samples = 1;
  Rng drng(19);
  auto data = tiny_dataset(drng, 16, 5, 3);
  StedrModel model(cfg, 5);
  Rng irng(20);
  model.init_params(irng);
  model.pr_t = 0.5;

  std::vector<const TrainSample*> batch;
  for (const auto& s : data.samples) batch.push_back(&s);
  Rng nrng(21);
  BatchNoise noise;
  noise.kl = model.subgroup_net().kl_noise(16, nrng);
  noise.vae = model.subgroup_net().vae_noise(16, nrng);

  BatchAux frozen;
  {
    ad::Tape tape;
    auto view = model.params().on_tape(tape, false);
    frozen = model.build_batch_loss(tape, view, batch, noise).aux;
  }

  auto loss_of = [&](const ParamStore& p) {
    ad::Tape tape;
    auto view = p.on_tape(tape);
    return model.build_batch_loss(tape, view, batch, noise, frozen).total->scalar();
  };

  ad::Tape tape;
  auto view = model.params().on_tape(tape);
  auto loss = model.build_batch_loss(tape, view, batch, noise, frozen);
  tape.backward(loss.total);
  std::map<std::string, Eigen::MatrixXd> analytic;
  model.params().copy_grads_from(view, analytic);

  auto res = testutil::check_gradients(model.params(), loss_of, analytic);
  CHECK(res.checked > 200);
  CHECK_MESSAGE(res.max_rel_err <= 1e-4, "worst: ", res.worst_param, " err ", res.max_rel_err);
}
