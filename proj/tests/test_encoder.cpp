#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "grad_check.hpp"
#include "stedr/encoder.hpp"

using namespace stedr;
namespace ad = stedr::ad;

namespace {

VisitSequence random_sequence(Rng& rng, Eigen::Index t_len, Eigen::Index m, bool binary = false) {
  VisitSequence seq;
  seq.codes.resize(t_len, m);
  for (Eigen::Index t = 0; t < t_len; ++t)
    for (Eigen::Index c = 0; c < m; ++c)
      seq.codes(t, c) = binary ? (rng.bernoulli(0.3) ? 1.0 : 0.0) : rng.normal();
  seq.times.resize(t_len);
  for (Eigen::Index t = 0; t < t_len; ++t) seq.times(t) = static_cast<double>(t_len - 1 - t);
  seq.valid_mask = Eigen::VectorXd::Ones(t_len);
  return seq;
}

}  // namespace

TEST_CASE("equal covariate embeddings give uniform attention") {
  EncoderConfig cfg;
  cfg.n_codes = 4;
  cfg.t_max = 3;
  cfg.embed_dim = 2;
  cfg.hidden = 4;
  PatientEncoder enc(cfg);
  ParamStore params;
  Rng rng(1);
  enc.init_params(params, rng);
  params.at("enc.code_w").setZero();
  params.at("enc.code_b").setZero();

  Rng drng(2);
  auto seq = random_sequence(drng, 3, 4, true);
  auto scores = enc.attention_scores(params, seq);
  for (Eigen::Index m = 0; m < 4; ++m) CHECK(scores.a_d(m) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("hand-computed covariate softmax") {
  EncoderConfig cfg;
  cfg.n_codes = 2;
  cfg.t_max = 1;
  cfg.embed_dim = 1;
  cfg.hidden = 4;
  PatientEncoder enc(cfg);
  ParamStore params;
  Rng rng(1);
  enc.init_params(params, rng);
  params.at("enc.code_w").setZero();
  params.at("enc.time_w").setZero();
  params.at("enc.time_b").setZero();
  params.at("enc.code_b") << 0.0, -1.0;  // logits become (0, -1) against s_d = 1
  params.at("enc.s_d") << 1.0;

  VisitSequence seq = static_visit(std::vector<double>{1.0, 1.0});
  auto scores = enc.attention_scores(params, seq);
  CHECK(scores.a_d(0) == doctest::Approx(0.7311).epsilon(1e-3));
  CHECK(scores.a_d(1) == doctest::Approx(0.2689).epsilon(1e-3));
}

TEST_CASE("importance matrix sums to one and masked visits score zero") {
  EncoderConfig cfg;
  cfg.n_codes = 6;
  cfg.t_max = 8;
  cfg.embed_dim = 3;
  cfg.hidden = 4;
  PatientEncoder enc(cfg);
  ParamStore params;
  Rng rng(5);
  enc.init_params(params, rng);

  Rng drng(6);
  auto seq = random_sequence(drng, 5, 6, true);
  seq.codes.row(3).setZero();
  seq.valid_mask(3) = 0.0;
  auto scores = enc.attention_scores(params, seq);
  CHECK(scores.a_v(3) == 0.0);
  CHECK(scores.a_d.sum() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(scores.a_v.sum() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(scores.importance().sum() == doctest::Approx(1.0).epsilon(1e-6));

  VisitSequence all_masked = seq;
  all_masked.valid_mask.setZero();
  CHECK_THROWS_AS(enc.attention_scores(params, all_masked), std::invalid_argument);
}

TEST_CASE("representation dimension and finiteness at realistic width") {
  EncoderConfig cfg;
  cfg.n_codes = 286;
  cfg.t_max = 10;
  cfg.embed_dim = 8;
  cfg.hidden = 64;
  PatientEncoder enc(cfg);
  ParamStore params;
  Rng rng(7);
  enc.init_params(params, rng);
  Rng drng(8);
  auto seq = random_sequence(drng, 5, 286, true);
  auto xhat = enc.encode_value(params, seq);
  CHECK(xhat.size() == 64);
  CHECK(xhat.allFinite());
}

TEST_CASE("attention ablation changes the output") {
  EncoderConfig cfg;
  cfg.n_codes = 12;
  cfg.t_max = 6;
  cfg.embed_dim = 4;
  cfg.hidden = 8;
  PatientEncoder full(cfg);
  ParamStore params;
  Rng rng(9);
  full.init_params(params, rng);

  EncoderConfig ab = cfg;
  ab.ablate_attention = true;
  PatientEncoder ones(ab);

  Rng drng(10);
  auto seq = random_sequence(drng, 4, 12);
  auto full_out = full.encode_value(params, seq);
  auto ablated_out = ones.encode_value(params, seq);
  CHECK((full_out - ablated_out).lpNorm<Eigen::Infinity>() > 0.0);
}

TEST_CASE("masked visits are inert: append and permute invariance is exact") {
  EncoderConfig cfg;
  cfg.n_codes = 7;
  cfg.t_max = 12;
  cfg.embed_dim = 3;
  cfg.hidden = 6;
  cfg.transformer_layers = 2;
  PatientEncoder enc(cfg);
  ParamStore params;
  Rng rng(11);
  enc.init_params(params, rng);

  Rng drng(12);
  auto seq = random_sequence(drng, 4, 7);
  auto base = enc.encode_value(params, seq);

  // append two masked all-zero visits
  VisitSequence longer;
  longer.codes = Eigen::MatrixXd::Zero(6, 7);
  longer.codes.topRows(4) = seq.codes;
  longer.times = Eigen::VectorXd::Zero(6);
  longer.times.head(4) = seq.times;
  longer.times(4) = 99.0;  // masked rows may carry junk times
  longer.times(5) = -3.0;
  longer.valid_mask = Eigen::VectorXd::Zero(6);
  longer.valid_mask.head(4).setOnes();
  auto appended = enc.encode_value(params, longer);
  CHECK((base - appended).lpNorm<Eigen::Infinity>() == 0.0);

  // permute the two trailing masked visits
  VisitSequence permuted = longer;
  std::swap(permuted.times(4), permuted.times(5));
  auto permuted_out = enc.encode_value(params, permuted);
  CHECK((base - permuted_out).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("static samples go through the sequence path bit-for-bit") {
  EncoderConfig cfg;
  cfg.n_codes = 10;
  cfg.t_max = 1;
  cfg.embed_dim = 4;
  cfg.hidden = 8;
  PatientEncoder enc(cfg);
  ParamStore params;
  Rng rng(13);
  enc.init_params(params, rng);

  std::vector<double> x = {0.3, -1.2, 0.0, 2.0, 1.1, -0.4, 0.9, 0.1, -2.2, 0.5};
  VisitSequence direct = static_visit(x);
  Eigen::RowVectorXd row(10);
  for (int j = 0; j < 10; ++j) row(j) = x[static_cast<std::size_t>(j)];
  VisitSequence via_row = static_visit(row);
  auto a = enc.encode_value(params, direct);
  auto b = enc.encode_value(params, via_row);
  CHECK((a - b).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(direct.times(0) == 0.0);
  CHECK(direct.valid_mask(0) == 1.0);
}

TEST_CASE("encoder gradients match finite differences on a tiny instance") {
  EncoderConfig cfg;
  cfg.n_codes = 5;
  cfg.t_max = 3;
  cfg.embed_dim = 4;
  cfg.hidden = 4;
  PatientEncoder enc(cfg);
  ParamStore params;
  Rng rng(14);
  enc.init_params(params, rng);

  Rng drng(15);
  auto seq = random_sequence(drng, 3, 5);
  Eigen::MatrixXd probe(4, 1);
  for (int i = 0; i < 4; ++i) probe(i, 0) = drng.normal();
  auto cs = compact_sequence(seq, cfg.t_max);

  auto loss_of = [&](const ParamStore& p) {
    ad::Tape tape;
    auto view = p.on_tape(tape);
    ad::Node* xhat = enc.encode(tape, view, cs);
    return ad::matmul(tape, xhat, tape.constant(probe))->scalar();
  };

  ad::Tape tape;
  auto view = params.on_tape(tape);
  ad::Node* xhat = enc.encode(tape, view, cs);
  ad::Node* loss = ad::matmul(tape, xhat, tape.constant(probe));
  tape.backward(loss);
  std::map<std::string, Eigen::MatrixXd> analytic;
  params.copy_grads_from(view, analytic);

  auto res = testutil::check_gradients(params, loss_of, analytic);
  CHECK(res.checked > 100);
  CHECK_MESSAGE(res.max_rel_err <= 1e-4, "worst: ", res.worst_param, " err ", res.max_rel_err);
}
