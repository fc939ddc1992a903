#include "stedr/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace stedr {

namespace ad = stedr::ad;

CompactSequence compact_sequence(const VisitSequence& seq, Eigen::Index t_max) {
  const Eigen::Index t_len = seq.codes.rows();
  if (t_len < 1) throw std::invalid_argument("visit sequence: no visits");
  if (seq.times.size() != t_len || seq.valid_mask.size() != t_len)
    throw std::invalid_argument("visit sequence: times/mask length mismatch");
  std::vector<Eigen::Index> keep;
  for (Eigen::Index t = 0; t < t_len; ++t)
    if (seq.valid_mask(t) != 0.0) keep.push_back(t);
  if (keep.empty()) throw std::invalid_argument("visit sequence: all visits masked");
  if (static_cast<Eigen::Index>(keep.size()) > t_max)
    keep.erase(keep.begin(), keep.end() - t_max);  // truncate oldest-first

  CompactSequence cs;
  cs.x.resize(static_cast<Eigen::Index>(keep.size()), seq.codes.cols());
  cs.times.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) {
    cs.x.row(static_cast<Eigen::Index>(i)) = seq.codes.row(keep[i]);
    cs.times(static_cast<Eigen::Index>(i)) = seq.times(keep[i]);
  }
  cs.source_rows = std::move(keep);
  return cs;
}

PatientEncoder::PatientEncoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.n_codes < 1) throw std::invalid_argument("encoder: n_codes must be positive");
  if (cfg_.hidden % cfg_.attention_heads != 0)
    throw std::invalid_argument("encoder: hidden must divide by attention heads");
}

void PatientEncoder::init_params(ParamStore& p, Rng& rng) const {
  const auto M = cfg_.n_codes, pd = cfg_.embed_dim, h = cfg_.hidden, L = cfg_.t_max;
  if (!cfg_.ablate_attention) {
    p.add("enc.code_w", glorot(rng, M * pd, L));
    p.add("enc.code_b", Eigen::MatrixXd::Zero(M, pd));
    p.add("enc.time_w", glorot(rng, pd, L));
    p.add("enc.time_b", Eigen::MatrixXd::Zero(1, pd));
    p.add("enc.visit_w", glorot(rng, M, pd));
    p.add("enc.visit_b", Eigen::MatrixXd::Zero(1, pd));
    Eigen::MatrixXd sd(1, pd), sv(1, pd);
    for (Eigen::Index j = 0; j < pd; ++j) {
      sd(0, j) = rng.normal(0.0, 0.1);
      sv(0, j) = rng.normal(0.0, 0.1);
    }
    p.add("enc.s_d", sd);
    p.add("enc.s_v", sv);
  }
  p.add("enc.in_w", glorot(rng, M, h));
  p.add("enc.in_b", Eigen::MatrixXd::Zero(1, h));
  for (int l = 0; l < cfg_.transformer_layers; ++l) {
    std::string pre = "enc.tf" + std::to_string(l) + ".";
    p.add(pre + "wq", glorot(rng, h, h));
    p.add(pre + "bq", Eigen::MatrixXd::Zero(1, h));
    p.add(pre + "wk", glorot(rng, h, h));
    p.add(pre + "bk", Eigen::MatrixXd::Zero(1, h));
    p.add(pre + "wv", glorot(rng, h, h));
    p.add(pre + "bv", Eigen::MatrixXd::Zero(1, h));
    p.add(pre + "wo", glorot(rng, h, h));
    p.add(pre + "bo", Eigen::MatrixXd::Zero(1, h));
    p.add(pre + "ln1_g", Eigen::MatrixXd::Ones(1, h));
    p.add(pre + "ln1_b", Eigen::MatrixXd::Zero(1, h));
    p.add(pre + "ffn_w1", glorot(rng, h, cfg_.ffn_dim()));
    p.add(pre + "ffn_b1", Eigen::MatrixXd::Zero(1, cfg_.ffn_dim()));
    p.add(pre + "ffn_w2", glorot(rng, cfg_.ffn_dim(), h));
    p.add(pre + "ffn_b2", Eigen::MatrixXd::Zero(1, h));
    p.add(pre + "ln2_g", Eigen::MatrixXd::Ones(1, h));
    p.add(pre + "ln2_b", Eigen::MatrixXd::Zero(1, h));
  }
}

PatientEncoder::AttentionNodes PatientEncoder::attention(ad::Tape& tape,
                                                         const ParamStore::TapeView& view,
                                                         const CompactSequence& cs) const {
  if (cs.x.cols() != cfg_.n_codes)
    throw std::invalid_argument("encoder: covariate width mismatch");
  const Eigen::Index t_len = cs.x.rows();

  // zero-padded occurrence vectors (visit-slot major) and time vector
  Eigen::MatrixXd dpad = Eigen::MatrixXd::Zero(cfg_.t_max, cfg_.n_codes);
  dpad.topRows(t_len) = cs.x;
  Eigen::MatrixXd tpad = Eigen::MatrixXd::Zero(cfg_.t_max, 1);
  tpad.topRows(t_len) = cs.times;

  // covariate attention: e_m = code embedding + shared time embedding
  ad::Node* code_e = ad::per_group_matvec(tape, view["enc.code_w"], dpad, cfg_.embed_dim);
  code_e = ad::add(tape, code_e, view["enc.code_b"]);
  ad::Node* time_e = ad::transpose(tape, ad::matmul(tape, view["enc.time_w"], tape.constant(tpad)));
  time_e = ad::add(tape, time_e, view["enc.time_b"]);
  ad::Node* e = ad::add_rowvec(tape, code_e, time_e);  // M x p
  ad::Node* logits_d =
      ad::transpose(tape, ad::matmul(tape, e, ad::transpose(tape, view["enc.s_d"])));
  ad::Node* a_d = ad::softmax_rows(tape, logits_d);  // 1 x M

  // visit attention from the shared visit embedding
  ad::Node* v = ad::add_rowvec(tape, ad::matmul(tape, tape.constant(cs.x), view["enc.visit_w"]),
                               view["enc.visit_b"]);  // T x p
  ad::Node* logits_v =
      ad::transpose(tape, ad::matmul(tape, v, ad::transpose(tape, view["enc.s_v"])));
  ad::Node* a_v = ad::softmax_rows(tape, logits_v);  // 1 x T
  return {a_d, a_v};
}

ad::Node* PatientEncoder::encode(ad::Tape& tape, const ParamStore::TapeView& view,
                                 const CompactSequence& cs) const {
  if (cs.x.cols() != cfg_.n_codes)
    throw std::invalid_argument("encoder: covariate width mismatch");
  const Eigen::Index t_len = cs.x.rows();
  const Eigen::Index h = cfg_.hidden;
  const int heads = cfg_.attention_heads;
  const Eigen::Index dk = h / heads;

  ad::Node* x_const = tape.constant(cs.x);
  ad::Node* gated;
  if (cfg_.ablate_attention) {
    gated = x_const;
  } else {
    auto attn = attention(tape, view, cs);
    ad::Node* a = ad::matmul(tape, ad::transpose(tape, attn.a_v), attn.a_d);  // T x M
    gated = ad::mul(tape, a, x_const);
  }

  ad::Node* u = ad::relu(
      tape, ad::add_rowvec(tape, ad::matmul(tape, gated, view["enc.in_w"]), view["enc.in_b"]));

  for (int l = 0; l < cfg_.transformer_layers; ++l) {
    std::string pre = "enc.tf" + std::to_string(l) + ".";
    ad::Node* q = ad::add_rowvec(tape, ad::matmul(tape, u, view[pre + "wq"]), view[pre + "bq"]);
    ad::Node* k = ad::add_rowvec(tape, ad::matmul(tape, u, view[pre + "wk"]), view[pre + "bk"]);
    ad::Node* w = ad::add_rowvec(tape, ad::matmul(tape, u, view[pre + "wv"]), view[pre + "bv"]);
    std::vector<ad::Node*> ctx;
    for (int head = 0; head < heads; ++head) {
      ad::Node* qh = ad::slice_cols(tape, q, head * dk, dk);
      ad::Node* kh = ad::slice_cols(tape, k, head * dk, dk);
      ad::Node* wh = ad::slice_cols(tape, w, head * dk, dk);
      ad::Node* scores =
          ad::scale(tape, ad::matmul(tape, qh, ad::transpose(tape, kh)),
                    1.0 / std::sqrt(static_cast<double>(dk)));
      ad::Node* attn = ad::softmax_rows(tape, scores);
      ctx.push_back(ad::matmul(tape, attn, wh));
    }
    ad::Node* merged = heads == 1 ? ctx[0] : ad::concat_cols(tape, ctx);
    ad::Node* o =
        ad::add_rowvec(tape, ad::matmul(tape, merged, view[pre + "wo"]), view[pre + "bo"]);
    ad::Node* s1 = ad::layer_norm_rows(tape, ad::add(tape, u, o), view[pre + "ln1_g"],
                                       view[pre + "ln1_b"]);
    ad::Node* f = ad::relu(tape, ad::add_rowvec(tape, ad::matmul(tape, s1, view[pre + "ffn_w1"]),
                                                view[pre + "ffn_b1"]));
    f = ad::add_rowvec(tape, ad::matmul(tape, f, view[pre + "ffn_w2"]), view[pre + "ffn_b2"]);
    u = ad::layer_norm_rows(tape, ad::add(tape, s1, f), view[pre + "ln2_g"], view[pre + "ln2_b"]);
  }

  // mean pool over visit positions (all rows valid after compaction)
  Eigen::MatrixXd pool = Eigen::MatrixXd::Constant(1, t_len, 1.0 / static_cast<double>(t_len));
  return ad::matmul(tape, tape.constant(pool), u);
}

AttentionScores PatientEncoder::attention_scores(const ParamStore& params,
                                                 const VisitSequence& seq) const {
  CompactSequence cs = compact_sequence(seq, cfg_.t_max);
  ad::Tape tape;
  auto view = params.on_tape(tape);
  auto nodes = attention(tape, view, cs);
  AttentionScores out;
  out.a_d = nodes.a_d->val.row(0).transpose();
  out.a_v = Eigen::VectorXd::Zero(seq.codes.rows());
  for (std::size_t i = 0; i < cs.source_rows.size(); ++i)
    out.a_v(cs.source_rows[i]) = nodes.a_v->val(0, static_cast<Eigen::Index>(i));
  return out;
}

Eigen::RowVectorXd PatientEncoder::encode_value(const ParamStore& params,
                                                const VisitSequence& seq) const {
  CompactSequence cs = compact_sequence(seq, cfg_.t_max);
  ad::Tape tape;
  auto view = params.on_tape(tape);
  return encode(tape, view, cs)->val.row(0);
}

}  // namespace stedr
