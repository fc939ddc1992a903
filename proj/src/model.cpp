#include "stedr/model.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "stedr/metrics.hpp"

namespace stedr {

namespace ad = stedr::ad;
using nlohmann::json;

void TrainConfig::validate() const {
  if (k < 1) throw std::invalid_argument("config: k must be >= 1");
  if (!allow_alpha_outside_range && (alpha < 0.1 || alpha > 0.5))
    throw std::invalid_argument("config: alpha outside [0.1, 0.5] (set the override to allow)");
  if (!(propensity_clip > 0.0 && propensity_clip < 0.5))
    throw std::invalid_argument("config: propensity_clip must lie in (0, 0.5)");
  if (batch_size < 2) throw std::invalid_argument("config: batch_size must be >= 2");
  if (learning_rate <= 0.0) throw std::invalid_argument("config: learning_rate must be positive");
  double total = split[0] + split[1] + split[2];
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("config: split must sum to 1");
  if (pred_layers < 1 || pred_layers > 3)
    throw std::invalid_argument("config: pred_layers must be 1..3");
  if (transformer_layers < 1 || transformer_layers > 3)
    throw std::invalid_argument("config: transformer_layers must be 1..3");
}

std::string TrainConfig::to_json() const {
  json j;
  j["k"] = k;
  j["alpha"] = alpha;
  j["learning_rate"] = learning_rate;
  j["batch_size"] = batch_size;
  j["max_epochs"] = max_epochs;
  j["patience"] = patience;
  j["hidden"] = hidden;
  j["transformer_layers"] = transformer_layers;
  j["outcome_kind"] = outcome_kind == OutcomeKind::binary ? "binary" : "continuous";
  j["iptw_mode"] = iptw_mode == IptwMode::literal_sum ? "literal_sum" : "treatment_conditional";
  j["propensity_clip"] = propensity_clip;
  j["ablate_gmm"] = ablate_gmm;
  j["ablate_attention"] = ablate_attention;
  j["seed"] = seed;
  j["split"] = split;
  j["embed_dim"] = embed_dim;
  j["latent_dim"] = latent_dim;
  j["t_max"] = t_max;
  j["pred_layers"] = pred_layers;
  j["attention_heads"] = attention_heads;
  j["mc_samples"] = mc_samples;
  j["standardize_inputs"] = standardize_inputs;
  j["standardize_outcome"] = standardize_outcome;
  j["optimizer"] = optimizer == OptimizerKind::adam ? "adam" : "sgd";
  j["early_stop_on_factual"] = early_stop_on_factual;
  j["allow_alpha_outside_range"] = allow_alpha_outside_range;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  TrainConfig c;
  c.k = j.value("k", c.k);
  c.alpha = j.value("alpha", c.alpha);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.hidden = j.value("hidden", c.hidden);
  c.transformer_layers = j.value("transformer_layers", c.transformer_layers);
  if (j.contains("outcome_kind"))
    c.outcome_kind =
        j["outcome_kind"] == "binary" ? OutcomeKind::binary : OutcomeKind::continuous;
  if (j.contains("iptw_mode"))
    c.iptw_mode = j["iptw_mode"] == "treatment_conditional" ? IptwMode::treatment_conditional
                                                            : IptwMode::literal_sum;
  c.propensity_clip = j.value("propensity_clip", c.propensity_clip);
  c.ablate_gmm = j.value("ablate_gmm", c.ablate_gmm);
  c.ablate_attention = j.value("ablate_attention", c.ablate_attention);
  c.seed = j.value("seed", c.seed);
  if (j.contains("split")) c.split = j["split"].get<std::array<double, 3>>();
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.t_max = j.value("t_max", c.t_max);
  c.pred_layers = j.value("pred_layers", c.pred_layers);
  c.attention_heads = j.value("attention_heads", c.attention_heads);
  c.mc_samples = j.value("mc_samples", c.mc_samples);
  c.standardize_inputs = j.value("standardize_inputs", c.standardize_inputs);
  c.standardize_outcome = j.value("standardize_outcome", c.standardize_outcome);
  if (j.contains("optimizer"))
    c.optimizer = j["optimizer"] == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
  c.early_stop_on_factual = j.value("early_stop_on_factual", c.early_stop_on_factual);
  c.allow_alpha_outside_range = j.value("allow_alpha_outside_range", c.allow_alpha_outside_range);
  return c;
}

std::vector<double> iptw_weights(const std::vector<double>& t_hat,
                                 const std::vector<int>& treatment, double pr_t, IptwMode mode,
                                 double clip) {
  if (!(pr_t > 0.0 && pr_t < 1.0))
    throw PositivityError("iptw_weights: Pr(T) must lie strictly inside (0, 1)");
  if (mode == IptwMode::treatment_conditional && treatment.size() != t_hat.size())
    throw std::invalid_argument("iptw_weights: treatment length mismatch");
  std::vector<double> w(t_hat.size());
  for (std::size_t i = 0; i < t_hat.size(); ++i) {
    double p = std::clamp(t_hat[i], clip, 1.0 - clip);
    if (mode == IptwMode::literal_sum) {
      w[i] = pr_t / p + (1.0 - pr_t) / (1.0 - p);
    } else {
      w[i] = treatment[i] ? pr_t / p : (1.0 - pr_t) / (1.0 - p);
    }
  }
  return w;
}

double interval_overlap(double low_i, double up_i, double low_j, double up_j) {
  return std::max(0.0, std::min(up_i, up_j) - std::max(low_i, low_j));
}

OverlapResult overlap_penalty(const std::vector<double>& tau_hat,
                              const std::vector<int>& subgroup, int k, double alpha) {
  if (tau_hat.size() != subgroup.size())
    throw std::invalid_argument("overlap_penalty: length mismatch");
  OverlapResult out;
  for (int g = 0; g < k; ++g) {
    std::vector<double> vals;
    for (std::size_t i = 0; i < tau_hat.size(); ++i)
      if (subgroup[i] == g) vals.push_back(tau_hat[i]);
    if (vals.size() < 2) continue;
    double m = 0.0;
    for (double v : vals) m += v;
    m /= static_cast<double>(vals.size());
    double ss = 0.0;
    for (double v : vals) ss += (v - m) * (v - m);
    double sd = std::sqrt(ss / static_cast<double>(vals.size() - 1));
    double se = metrics::kCi95Z * sd / std::sqrt(static_cast<double>(vals.size()));
    out.cis.push_back({g, static_cast<int>(vals.size()), m - se, m + se});
  }
  for (std::size_t i = 0; i < out.cis.size(); ++i)
    for (std::size_t j = i + 1; j < out.cis.size(); ++j) {
      out.l_overlap +=
          interval_overlap(out.cis[i].low, out.cis[i].high, out.cis[j].low, out.cis[j].high);
    }
  out.l_overlap *= alpha;
  return out;
}

StedrModel::StedrModel(TrainConfig cfg, Eigen::Index n_codes)
    : cfg_(std::move(cfg)),
      encoder_([&] {
        EncoderConfig ec;
        ec.n_codes = n_codes;
        ec.t_max = cfg_.t_max;
        ec.embed_dim = cfg_.embed_dim;
        ec.hidden = cfg_.hidden;
        ec.transformer_layers = cfg_.transformer_layers;
        ec.attention_heads = cfg_.attention_heads;
        ec.ablate_attention = cfg_.ablate_attention;
        return ec;
      }()),
      subgroup_([&] {
        SubgroupConfig sc;
        sc.hidden = cfg_.hidden;
        sc.latent_dim = cfg_.latent_dim;
        sc.k = cfg_.k;
        sc.mc_samples = cfg_.mc_samples;
        sc.ablate_gmm = cfg_.ablate_gmm;
        return sc;
      }()) {
  cfg_.validate();
}

void StedrModel::init_params(Rng& rng) {
  encoder_.init_params(params_, rng);
  subgroup_.init_params(params_, rng);
  const Eigen::Index p = cfg_.latent_dim;
  auto add_head = [&](const std::string& prefix, Eigen::Index out_dim) {
    Eigen::Index in = p;
    for (int l = 0; l + 1 < cfg_.pred_layers; ++l) {
      params_.add(prefix + ".w" + std::to_string(l), glorot(rng, in, p));
      params_.add(prefix + ".b" + std::to_string(l), Eigen::MatrixXd::Zero(1, p));
      in = p;
    }
    int last = cfg_.pred_layers - 1;
    params_.add(prefix + ".w" + std::to_string(last), glorot(rng, in, out_dim));
    params_.add(prefix + ".b" + std::to_string(last), Eigen::MatrixXd::Zero(1, out_dim));
  };
  add_head("head.y0", 1);
  add_head("head.y1", 1);
  add_head("head.t", 1);
  if (!cfg_.ablate_gmm) add_head("head.k", cfg_.k);
}

CompactSequence StedrModel::preprocess(const VisitSequence& seq) const {
  CompactSequence cs = compact_sequence(seq, cfg_.t_max);
  if (feat_mean.size() > 0) {
    for (Eigen::Index t = 0; t < cs.x.rows(); ++t)
      cs.x.row(t) = (cs.x.row(t) - feat_mean).cwiseQuotient(feat_std);
  }
  return cs;
}

ad::Node* StedrModel::mlp_head(ad::Tape& tape, const ParamStore::TapeView& view, ad::Node* rep,
                               const std::string& prefix, Eigen::Index) const {
  ad::Node* h = rep;
  for (int l = 0; l < cfg_.pred_layers; ++l) {
    std::string idx = std::to_string(l);
    h = ad::add_rowvec(tape, ad::matmul(tape, h, view[prefix + ".w" + idx]),
                       view[prefix + ".b" + idx]);
    if (l + 1 < cfg_.pred_layers) h = ad::relu(tape, h);
  }
  return h;
}

StedrModel::HeadOut StedrModel::heads(ad::Tape& tape, const ParamStore::TapeView& view,
                                      ad::Node* rep) const {
  HeadOut out;
  ad::Node* y0 = mlp_head(tape, view, rep, "head.y0", 1);
  ad::Node* y1 = mlp_head(tape, view, rep, "head.y1", 1);
  if (cfg_.outcome_kind == OutcomeKind::binary) {
    out.y0_logit = y0;
    out.y1_logit = y1;
    out.y0 = ad::sigmoid(tape, y0);
    out.y1 = ad::sigmoid(tape, y1);
  } else {
    out.y0 = y0;
    out.y1 = y1;
  }
  out.t_logit = mlp_head(tape, view, rep, "head.t", 1);
  out.t_prob = ad::sigmoid(tape, out.t_logit);
  if (!cfg_.ablate_gmm) out.k_logits = mlp_head(tape, view, rep, "head.k", cfg_.k);
  return out;
}

BatchLoss StedrModel::build_batch_loss(ad::Tape& tape, const ParamStore::TapeView& view,
                                       const std::vector<const TrainSample*>& batch,
                                       const BatchNoise& noise,
                                       const std::optional<BatchAux>& frozen) const {
  const Eigen::Index n = static_cast<Eigen::Index>(batch.size());
  if (n == 0) throw std::invalid_argument("batch loss: empty batch");

  std::vector<ad::Node*> reps;
  reps.reserve(batch.size());
  for (const TrainSample* s : batch) {
    CompactSequence cs = preprocess(s->seq);
    reps.push_back(encoder_.encode(tape, view, cs));
  }
  ad::Node* xhat = n == 1 ? reps[0] : ad::concat_rows(tape, reps);

  std::optional<Eigen::MatrixXd> frozen_q;
  const std::vector<int>* frozen_assigned = nullptr;
  if (frozen) {
    if (frozen->q.size() > 0) frozen_q = frozen->q;
    frozen_assigned = &frozen->assigned;
  }
  auto sg = subgroup_.build(tape, view, xhat, noise.kl, noise.vae, frozen_q, frozen_assigned);

  HeadOut h = heads(tape, view, sg.branch_mean);

  // targets
  Eigen::MatrixXd t_target(n, 1), y_target(n, 1), t_mask(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const TrainSample* s = batch[static_cast<std::size_t>(i)];
    t_target(i, 0) = s->treatment ? 1.0 : 0.0;
    t_mask(i, 0) = t_target(i, 0);
    y_target(i, 0) = cfg_.outcome_kind == OutcomeKind::continuous
                         ? (s->y - y_mean) / y_std
                         : s->y;
  }

  // detached IPTW weights from the clipped propensity
  BatchAux aux;
  aux.q = sg.q;
  aux.assigned = sg.assigned;
  if (frozen) {
    aux.weights = frozen->weights;
  } else {
    std::vector<double> t_hat(static_cast<std::size_t>(n));
    std::vector<int> treat(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      t_hat[static_cast<std::size_t>(i)] = h.t_prob->val(i, 0);
      treat[static_cast<std::size_t>(i)] = batch[static_cast<std::size_t>(i)]->treatment;
    }
    aux.weights = iptw_weights(t_hat, treat, pr_t, cfg_.iptw_mode, cfg_.propensity_clip);
  }
  Eigen::MatrixXd w_mat(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) w_mat(i, 0) = aux.weights[static_cast<std::size_t>(i)];

  // prediction losses
  ad::Node* ce_t = ad::sum(tape, ad::bce_with_logits(tape, h.t_logit, t_target));
  ad::Node* l_pnn = ce_t;
  if (h.k_logits) {
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, cfg_.k);
    for (Eigen::Index i = 0; i < n; ++i) onehot(i, aux.assigned[static_cast<std::size_t>(i)]) = 1.0;
    ad::Node* lsm = ad::log_softmax_rows(tape, h.k_logits);
    ad::Node* ce_k =
        ad::scale(tape, ad::sum(tape, ad::mul(tape, lsm, tape.constant(onehot))), -1.0);
    l_pnn = ad::add(tape, l_pnn, ce_k);
  }
  ad::Node* t_mask_node = tape.constant(t_mask);
  ad::Node* inv_mask = tape.constant((1.0 - t_mask.array()).matrix());
  ad::Node* outcome_losses;
  if (cfg_.outcome_kind == OutcomeKind::binary) {
    ad::Node* l0 = ad::bce_with_logits(tape, h.y0_logit, y_target);
    ad::Node* l1 = ad::bce_with_logits(tape, h.y1_logit, y_target);
    outcome_losses =
        ad::add(tape, ad::mul(tape, l1, t_mask_node), ad::mul(tape, l0, inv_mask));
  } else {
    ad::Node* y_fact = ad::add(tape, ad::mul(tape, h.y1, t_mask_node),
                               ad::mul(tape, h.y0, inv_mask));
    outcome_losses = ad::square(tape, ad::sub(tape, y_fact, tape.constant(y_target)));
  }
  ad::Node* weighted = ad::sum(tape, ad::mul(tape, tape.constant(w_mat), outcome_losses));
  l_pnn = ad::add(tape, l_pnn, weighted);

  // confidence-interval overlap penalty over the batch's subgroups
  ad::Node* tau = ad::sub(tape, h.y1, h.y0);
  struct CiNodes {
    ad::Node* low;
    ad::Node* high;
  };
  std::vector<CiNodes> cis;
  if (!cfg_.ablate_gmm) {
    for (int g = 0; g < cfg_.k; ++g) {
      std::vector<Eigen::Index> idx;
      for (Eigen::Index i = 0; i < n; ++i)
        if (aux.assigned[static_cast<std::size_t>(i)] == g) idx.push_back(i);
      if (idx.size() < 2) continue;
      const double nk = static_cast<double>(idx.size());
      ad::Node* tk = ad::gather_rows(tape, tau, idx);
      ad::Node* mean = ad::mean_all(tape, tk);
      ad::Node* mean_col =
          ad::matmul(tape, tape.constant(Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(idx.size()), 1)), mean);
      ad::Node* ss = ad::sum(tape, ad::square(tape, ad::sub(tape, tk, mean_col)));
      ad::Node* sd = ad::sqrt_guarded(tape, ad::scale(tape, ss, 1.0 / (nk - 1.0)));
      ad::Node* se = ad::scale(tape, sd, metrics::kCi95Z / std::sqrt(nk));
      cis.push_back({ad::sub(tape, mean, se), ad::add(tape, mean, se)});
    }
  }
  ad::Node* l_overlap = nullptr;
  for (std::size_t i = 0; i < cis.size(); ++i)
    for (std::size_t j = i + 1; j < cis.size(); ++j) {
      ad::Node* ov = ad::relu(
          tape, ad::sub(tape, ad::vmin(tape, cis[i].high, cis[j].high),
                        ad::vmax(tape, cis[i].low, cis[j].low)));
      l_overlap = l_overlap ? ad::add(tape, l_overlap, ov) : ov;
    }
  l_overlap = l_overlap ? ad::scale(tape, l_overlap, cfg_.alpha) : tape.scalar(0.0);

  BatchLoss out;
  out.l_snn = sg.l_snn;
  out.l_pnn = l_pnn;
  out.l_overlap = l_overlap;
  out.total = ad::add(tape, ad::add(tape, sg.l_snn, l_pnn), l_overlap);
  out.aux = std::move(aux);
  return out;
}

namespace {

Eigen::RowVectorXd head_value(const ParamStore& params, const std::string& prefix,
                              Eigen::RowVectorXd h, int layers) {
  for (int l = 0; l < layers; ++l) {
    std::string idx = std::to_string(l);
    h = h * params.at(prefix + ".w" + idx) + params.at(prefix + ".b" + idx).row(0);
    if (l + 1 < layers) h = h.cwiseMax(0.0);
  }
  return h;
}

double sigmoid_value(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

EffectEstimate StedrModel::forward_one(const TrainSample& sample) const {
  CompactSequence cs = preprocess(sample.seq);
  ad::Tape tape;
  auto view = params_.on_tape(tape, /*needs_grad=*/false);
  Eigen::RowVectorXd xhat = encoder_.encode(tape, view, cs)->val.row(0);

  auto [global, locals] = subgroup_.encode_distributions(params_, xhat);
  EffectEstimate est;
  Eigen::RowVectorXd rep;
  if (cfg_.ablate_gmm) {
    est.subgroup = 0;
    rep = global.mean.transpose();
  } else {
    auto post = subgroup_posterior(global, locals);
    est.subgroup = post.assigned;
    rep = locals[static_cast<std::size_t>(post.assigned)].mean.transpose();
  }

  double y0 = head_value(params_, "head.y0", rep, cfg_.pred_layers)(0);
  double y1 = head_value(params_, "head.y1", rep, cfg_.pred_layers)(0);
  if (cfg_.outcome_kind == OutcomeKind::binary) {
    est.y0_hat = sigmoid_value(y0);
    est.y1_hat = sigmoid_value(y1);
  } else {
    est.y0_hat = y0 * y_std + y_mean;
    est.y1_hat = y1 * y_std + y_mean;
  }
  est.tau_hat = est.y1_hat - est.y0_hat;
  double t_logit = head_value(params_, "head.t", rep, cfg_.pred_layers)(0);
  est.t_hat = std::clamp(sigmoid_value(t_logit), cfg_.propensity_clip, 1.0 - cfg_.propensity_clip);
  return est;
}

std::vector<EffectEstimate> StedrModel::estimate_effects(
    const std::vector<TrainSample>& samples) const {
  std::vector<EffectEstimate> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(forward_one(s));
  return out;
}

AttentionScores StedrModel::attention_scores(const TrainSample& sample) const {
  if (cfg_.ablate_attention)
    throw std::invalid_argument("attention scores unavailable in the attention-ablated model");
  VisitSequence seq = sample.seq;
  CompactSequence cs = preprocess(seq);
  // re-expand against the original sequence layout
  ad::Tape tape;
  auto view = params_.on_tape(tape, /*needs_grad=*/false);
  auto nodes = encoder_.attention(tape, view, cs);
  AttentionScores scores;
  scores.a_d = nodes.a_d->val.row(0).transpose();
  scores.a_v = Eigen::VectorXd::Zero(seq.codes.rows());
  for (std::size_t i = 0; i < cs.source_rows.size(); ++i)
    scores.a_v(cs.source_rows[i]) = nodes.a_v->val(0, static_cast<Eigen::Index>(i));
  return scores;
}

serial::Checkpoint StedrModel::to_checkpoint() const {
  serial::Checkpoint ckpt;
  ckpt.config_json = cfg_.to_json();
  ckpt.pr_t = pr_t;
  for (const auto& name : params_.names()) ckpt.params.add(name, params_.at(name));
  Eigen::MatrixXd ynorm(1, 2);
  ynorm << y_mean, y_std;
  ckpt.params.add("norm.y", ynorm);
  if (feat_mean.size() > 0) {
    Eigen::MatrixXd fm(2, feat_mean.size());
    fm.row(0) = feat_mean;
    fm.row(1) = feat_std;
    ckpt.params.add("norm.features", fm);
  }
  return ckpt;
}

StedrModel StedrModel::from_checkpoint(const serial::Checkpoint& ckpt, Eigen::Index n_codes) {
  TrainConfig cfg = TrainConfig::from_json(ckpt.config_json);
  StedrModel model(cfg, n_codes);
  model.pr_t = ckpt.pr_t;
  for (const auto& name : ckpt.params.names()) {
    if (name == "norm.y") {
      model.y_mean = ckpt.params.at(name)(0, 0);
      model.y_std = ckpt.params.at(name)(0, 1);
    } else if (name == "norm.features") {
      model.feat_mean = ckpt.params.at(name).row(0);
      model.feat_std = ckpt.params.at(name).row(1);
    } else {
      model.params_.add(name, ckpt.params.at(name));
    }
  }
  return model;
}

SplitIndices split_dataset(std::size_t n, const std::array<double, 3>& ratios,
                           std::uint64_t seed) {
  auto idx = iota_indices(n);
  Rng rng(mix_seed(seed, 0x5417));
  rng.shuffle(idx);
  SplitIndices s;
  std::size_t n_train = static_cast<std::size_t>(ratios[0] * static_cast<double>(n));
  std::size_t n_val = static_cast<std::size_t>(ratios[1] * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train)
      s.train.push_back(idx[i]);
    else if (i < n_train + n_val)
      s.val.push_back(idx[i]);
    else
      s.test.push_back(idx[i]);
  }
  return s;
}

namespace {

struct LossTotals {
  double snn = 0.0, pnn = 0.0, overlap = 0.0, total = 0.0;
  int batches = 0;
  void absorb(const BatchLoss& b) {
    snn += b.l_snn->scalar();
    pnn += b.l_pnn->scalar();
    overlap += b.l_overlap->scalar();
    total += b.total->scalar();
    ++batches;
  }
};

double factual_error(const StedrModel& model, const SampleSet& data,
                     const std::vector<std::size_t>& idx) {
  double err = 0.0;
  for (std::size_t i : idx) {
    const auto& s = data.samples[i];
    auto est = model.forward_one(s);
    double pred = s.treatment ? est.y1_hat : est.y0_hat;
    err += (pred - s.y) * (pred - s.y);
  }
  return err / static_cast<double>(idx.size());
}

}  // namespace

StedrModel train(const SampleSet& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.samples.empty()) throw std::invalid_argument("train: empty dataset");

  StedrModel model(cfg, data.width());
  auto split = split_dataset(data.size(), cfg.split, cfg.seed);
  if (split.train.empty() || split.val.empty())
    throw std::invalid_argument("train: dataset too small for the requested split");

  int treated = 0;
  for (std::size_t i : split.train) treated += data.samples[i].treatment;
  model.pr_t = static_cast<double>(treated) / static_cast<double>(split.train.size());
  if (!(model.pr_t > 0.0 && model.pr_t < 1.0))
    throw PositivityError("train: training split has a single treatment arm");

  // normalization statistics from the training split only
  if (cfg.standardize_inputs) {
    const Eigen::Index m = data.width();
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(m);
    Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(m);
    double rows = 0.0;
    for (std::size_t i : split.train) {
      const auto& seq = data.samples[i].seq;
      for (Eigen::Index t = 0; t < seq.codes.rows(); ++t) {
        if (seq.valid_mask(t) == 0.0) continue;
        mean += seq.codes.row(t);
        sq += seq.codes.row(t).cwiseProduct(seq.codes.row(t));
        rows += 1.0;
      }
    }
    mean /= rows;
    Eigen::RowVectorXd var = sq / rows - mean.cwiseProduct(mean);
    model.feat_mean = mean;
    model.feat_std = var.cwiseMax(0.0).cwiseSqrt().cwiseMax(1e-8);
  }
  if (cfg.standardize_outcome && cfg.outcome_kind == OutcomeKind::continuous) {
    double ym = 0.0;
    for (std::size_t i : split.train) ym += data.samples[i].y;
    ym /= static_cast<double>(split.train.size());
    double yv = 0.0;
    for (std::size_t i : split.train) {
      double d = data.samples[i].y - ym;
      yv += d * d;
    }
    yv /= static_cast<double>(split.train.size());
    model.y_mean = ym;
    model.y_std = std::max(std::sqrt(yv), 1e-8);
  }

  Rng init_rng(mix_seed(cfg.seed, 1));
  model.init_params(init_rng);
  Optimizer opt(cfg.optimizer, cfg.learning_rate);
  Rng shuffle_rng(mix_seed(cfg.seed, 2));
  Rng noise_rng(mix_seed(cfg.seed, 3));

  ParamStore best_params = model.params();
  double best_val = std::numeric_limits<double>::infinity();
  int stale = 0;

  auto make_batches = [&](const std::vector<std::size_t>& order) {
    std::vector<std::vector<const TrainSample*>> batches;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<const TrainSample*> b;
      for (std::size_t i = start;
           i < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++i)
        b.push_back(&data.samples[order[i]]);
      if (b.size() >= 2) batches.push_back(std::move(b));
    }
    return batches;
  };

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    auto order = split.train;
    shuffle_rng.shuffle(order);
    LossTotals totals;
    for (auto& batch : make_batches(order)) {
      ad::Tape tape;
      auto view = model.params().on_tape(tape);
      BatchNoise noise;
      const Eigen::Index nb = static_cast<Eigen::Index>(batch.size());
      noise.kl = model.subgroup_net().kl_noise(nb, noise_rng);
      noise.vae = model.subgroup_net().vae_noise(nb, noise_rng);
      BatchLoss loss = model.build_batch_loss(tape, view, batch, noise);
      if (!std::isfinite(loss.total->scalar()))
        throw TrainingDivergedError("train: non-finite loss at epoch " + std::to_string(epoch),
                                    epoch);
      tape.backward(loss.total);
      std::map<std::string, Eigen::MatrixXd> grads;
      model.params().copy_grads_from(view, grads);
      totals.absorb(loss);
      opt.step(model.params(), grads);
    }
    if (!model.params().all_finite())
      throw TrainingDivergedError("train: non-finite parameters at epoch " + std::to_string(epoch),
                                  epoch);

    // validation pass with fixed per-epoch noise so epochs are comparable
    double val_total = 0.0;
    if (cfg.early_stop_on_factual) {
      val_total = factual_error(model, data, split.val);
    } else {
      Rng val_rng(mix_seed(cfg.seed, 4));
      for (auto& batch : make_batches(split.val)) {
        ad::Tape tape;
        auto view = model.params().on_tape(tape, /*needs_grad=*/false);
        BatchNoise noise;
        const Eigen::Index nb = static_cast<Eigen::Index>(batch.size());
        noise.kl = model.subgroup_net().kl_noise(nb, val_rng);
        noise.vae = model.subgroup_net().vae_noise(nb, val_rng);
        val_total += model.build_batch_loss(tape, view, batch, noise).total->scalar();
      }
    }
    if (!std::isfinite(val_total))
      throw TrainingDivergedError("train: non-finite validation loss at epoch " +
                                      std::to_string(epoch),
                                  epoch);

    EpochRecord rec;
    rec.l_snn = totals.snn / std::max(totals.batches, 1);
    rec.l_pnn = totals.pnn / std::max(totals.batches, 1);
    rec.l_overlap = totals.overlap / std::max(totals.batches, 1);
    rec.train_total = totals.total / std::max(totals.batches, 1);
    rec.val_total = val_total;
    model.history.push_back(rec);

    if (val_total < best_val - 1e-12) {
      best_val = val_total;
      best_params = model.params();
      stale = 0;
    } else {
      ++stale;
      if (stale >= cfg.patience) break;
    }
  }

  model.params() = best_params;
  return model;
}

}  // namespace stedr
