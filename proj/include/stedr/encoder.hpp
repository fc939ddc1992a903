#pragma once

#include <Eigen/Core>

#include "stedr/dataset.hpp"
#include "stedr/params.hpp"
#include "stedr/tape.hpp"

namespace stedr {

struct EncoderConfig {
  Eigen::Index n_codes = 0;     // M, covariate vocabulary width
  Eigen::Index t_max = 50;      // occurrence-vector padding; older visits drop
  Eigen::Index embed_dim = 16;  // p
  Eigen::Index hidden = 50;     // transformer width and representation size
  int transformer_layers = 1;
  int attention_heads = 2;
  bool ablate_attention = false;  // replace the importance matrix with ones

  Eigen::Index ffn_dim() const { return 2 * hidden; }
};

struct AttentionScores {
  Eigen::VectorXd a_d;  // covariate scores, length M, sums to 1
  Eigen::VectorXd a_v;  // visit scores, length T (0 exactly on masked visits)
  Eigen::MatrixXd importance() const { return a_v * a_d.transpose(); }
};

// Masked visits removed and history truncated oldest-first to t_max rows.
struct CompactSequence {
  Eigen::MatrixXd x;      // T_valid x M
  Eigen::VectorXd times;  // length T_valid
  // positions of the kept rows in the original sequence
  std::vector<Eigen::Index> source_rows;
};
CompactSequence compact_sequence(const VisitSequence& seq, Eigen::Index t_max);

// Longitudinal covariate encoder: per-code occurrence embeddings with a shared
// time embedding feed covariate attention, a shared visit embedding feeds
// visit attention, and their outer product gates the input of a transformer
// encoder whose masked-mean pooling yields the patient representation.
class PatientEncoder {
 public:
  explicit PatientEncoder(EncoderConfig cfg);

  const EncoderConfig& config() const { return cfg_; }
  void init_params(ParamStore& params, Rng& rng) const;

  struct AttentionNodes {
    ad::Node* a_d = nullptr;  // 1 x M
    ad::Node* a_v = nullptr;  // 1 x T_valid
  };
  AttentionNodes attention(ad::Tape& tape, const ParamStore::TapeView& view,
                           const CompactSequence& cs) const;

  // 1 x hidden patient representation
  ad::Node* encode(ad::Tape& tape, const ParamStore::TapeView& view,
                   const CompactSequence& cs) const;

  // value-only conveniences (fresh throwaway tape)
  AttentionScores attention_scores(const ParamStore& params, const VisitSequence& seq) const;
  Eigen::RowVectorXd encode_value(const ParamStore& params, const VisitSequence& seq) const;

 private:
  EncoderConfig cfg_;
};

}  // namespace stedr
