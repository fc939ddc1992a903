#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "stedr/dataset.hpp"
#include "stedr/encoder.hpp"
#include "stedr/serial.hpp"
#include "stedr/subgroup.hpp"

namespace stedr {

enum class OutcomeKind { continuous, binary };
enum class IptwMode { literal_sum, treatment_conditional };

struct TrainConfig {
  int k = 3;
  double alpha = 0.3;  // overlap penalty strength
  double learning_rate = 0.001;
  int batch_size = 128;
  int max_epochs = 200;
  int patience = 15;
  Eigen::Index hidden = 50;        // {50,100,200,300}
  int transformer_layers = 1;      // {1,2,3}
  OutcomeKind outcome_kind = OutcomeKind::continuous;
  IptwMode iptw_mode = IptwMode::literal_sum;
  double propensity_clip = 0.05;
  bool ablate_gmm = false;
  bool ablate_attention = false;
  std::uint64_t seed = 0;
  std::array<double, 3> split = {0.6, 0.2, 0.2};

  Eigen::Index embed_dim = 16;   // attention embedding width
  Eigen::Index latent_dim = 25;  // subgroup latent width
  Eigen::Index t_max = 50;
  int pred_layers = 2;  // {1,2,3}
  int attention_heads = 2;
  int mc_samples = 1;
  bool standardize_inputs = true;
  bool standardize_outcome = true;
  OptimizerKind optimizer = OptimizerKind::adam;
  bool early_stop_on_factual = false;  // monitor factual outcome error instead
  bool allow_alpha_outside_range = false;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct EffectEstimate {
  double tau_hat = 0.0;  // y1_hat - y0_hat, raw outcome units
  int subgroup = 0;
  double y0_hat = 0.0, y1_hat = 0.0;
  double t_hat = 0.5;  // clipped propensity
};

struct EpochRecord {
  double l_snn = 0.0, l_pnn = 0.0, l_overlap = 0.0;
  double train_total = 0.0;
  double val_total = 0.0;
};

/// Inverse-probability-of-treatment weights. `literal_sum` adds both arm
/// terms for every sample; `treatment_conditional` uses the stabilized
/// per-arm weight. Propensities are clipped to [clip, 1-clip] before use.
std::vector<double> iptw_weights(const std::vector<double>& t_hat,
                                 const std::vector<int>& treatment, double pr_t, IptwMode mode,
                                 double clip);

/// Length of the intersection of two closed intervals, floored at zero.
double interval_overlap(double low_i, double up_i, double low_j, double up_j);

struct SubgroupCi {
  int subgroup = 0;
  int n = 0;
  double low = 0.0, high = 0.0;
};
struct OverlapResult {
  double l_overlap = 0.0;
  std::vector<SubgroupCi> cis;  // subgroups with >= 2 members only
};
/// Batch confidence-interval overlap penalty (value-level reference path).
OverlapResult overlap_penalty(const std::vector<double>& tau_hat,
                              const std::vector<int>& subgroup, int k, double alpha);

class StedrModel;

// Shared graph builder so the training step, validation pass, and the
// finite-difference harness evaluate exactly the same loss. Auxiliary
// stop-gradient inputs (reference distribution q, assigned subgroups, IPTW
// weights) can be frozen to make the loss a smooth function of parameters.
struct BatchAux {
  Eigen::MatrixXd q;
  std::vector<int> assigned;
  std::vector<double> weights;
};
struct BatchNoise {
  Eigen::MatrixXd kl;
  Eigen::MatrixXd vae;
};
struct BatchLoss {
  ad::Node* total = nullptr;
  ad::Node* l_snn = nullptr;
  ad::Node* l_pnn = nullptr;
  ad::Node* l_overlap = nullptr;
  BatchAux aux;
};

class StedrModel {
 public:
  StedrModel(TrainConfig cfg, Eigen::Index n_codes);

  const TrainConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const PatientEncoder& encoder() const { return encoder_; }
  const SubgroupNet& subgroup_net() const { return subgroup_; }

  double pr_t = 0.5;
  double y_mean = 0.0, y_std = 1.0;
  Eigen::RowVectorXd feat_mean, feat_std;  // empty when input scaling is off
  std::vector<EpochRecord> history;

  void init_params(Rng& rng);

  // applies input standardization; masked rows stay zero
  CompactSequence preprocess(const VisitSequence& seq) const;

  BatchLoss build_batch_loss(ad::Tape& tape, const ParamStore::TapeView& view,
                             const std::vector<const TrainSample*>& batch,
                             const BatchNoise& noise,
                             const std::optional<BatchAux>& frozen = std::nullopt) const;

  EffectEstimate forward_one(const TrainSample& sample) const;
  std::vector<EffectEstimate> estimate_effects(const std::vector<TrainSample>& samples) const;
  AttentionScores attention_scores(const TrainSample& sample) const;

  serial::Checkpoint to_checkpoint() const;
  static StedrModel from_checkpoint(const serial::Checkpoint& ckpt, Eigen::Index n_codes);

 private:
  TrainConfig cfg_;
  PatientEncoder encoder_;
  SubgroupNet subgroup_;
  ParamStore params_;

  struct HeadOut {
    ad::Node* y0 = nullptr;      // n x 1 (continuous value or probability)
    ad::Node* y1 = nullptr;
    ad::Node* y0_logit = nullptr;  // binary outcome only
    ad::Node* y1_logit = nullptr;
    ad::Node* t_logit = nullptr;
    ad::Node* t_prob = nullptr;    // unclipped
    ad::Node* k_logits = nullptr;  // nullptr when the subgroup head is ablated
  };
  HeadOut heads(ad::Tape& tape, const ParamStore::TapeView& view, ad::Node* rep) const;
  ad::Node* mlp_head(ad::Tape& tape, const ParamStore::TapeView& view, ad::Node* rep,
                     const std::string& prefix, Eigen::Index out_dim) const;

  friend StedrModel train(const SampleSet& data, const TrainConfig& cfg);
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};
SplitIndices split_dataset(std::size_t n, const std::array<double, 3>& ratios, std::uint64_t seed);

/// Mini-batch training following the per-batch step order: representations,
/// posterior, assignment, heads, then one optimizer update of the total loss.
/// Early stopping monitors validation total loss; the best snapshot wins.
StedrModel train(const SampleSet& data, const TrainConfig& cfg);

}  // namespace stedr
