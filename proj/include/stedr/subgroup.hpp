#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

#include "stedr/params.hpp"
#include "stedr/tape.hpp"

namespace stedr {

// Diagonal Gaussian in latent space.
struct GaussianValue {
  Eigen::VectorXd mean;
  Eigen::VectorXd log_variance;
};

struct SubgroupPosterior {
  Eigen::VectorXd probs;  // simplex over K
  int assigned = 0;       // argmax, ties broken by lowest index
};

// Assignment probabilities from similarity of local and global means:
// softmax over k of -||mu_k - mu_g||^2.
SubgroupPosterior subgroup_posterior(const GaussianValue& global,
                                     const std::vector<GaussianValue>& locals);

// Monte-Carlo KL(global || mixture of locals with the posterior weights),
// reparameterized draws from the global Gaussian. Reported value may be
// clamped at zero by callers; this returns the raw estimate.
double mixture_kl_loss(const GaussianValue& global, const std::vector<GaussianValue>& locals,
                       const Eigen::VectorXd& probs, int mc_samples, Rng& rng);

struct TargetDistribution {
  Eigen::MatrixXd q;          // n x K, rows on the simplex
  double l_td = 0.0;          // sum_i sum_k q log(q/p)
  std::vector<bool> empty_subgroup;  // diagnostics: r_k == 0
};
// Frequency-normalized sharpened reference distribution over subgroups.
TargetDistribution target_distribution_loss(const Eigen::MatrixXd& batch_probs);

struct SubgroupConfig {
  Eigen::Index hidden = 50;     // width of the encoded representation
  Eigen::Index latent_dim = 25; // p
  int k = 3;
  int mc_samples = 1;
  bool ablate_gmm = false;  // global mean only; no locals, decoder, or losses
};

// One-layer global/local Gaussian encoders, the subgroup posterior, and the
// three subgroup losses (mixture KL, target-distribution, reconstruction).
class SubgroupNet {
 public:
  explicit SubgroupNet(SubgroupConfig cfg);
  const SubgroupConfig& config() const { return cfg_; }
  void init_params(ParamStore& params, Rng& rng) const;

  struct Gaussians {
    ad::Node* mean = nullptr;     // n x p
    ad::Node* log_var = nullptr;  // n x p
  };
  struct Graph {
    Gaussians global;
    std::vector<Gaussians> locals;
    ad::Node* probs = nullptr;      // n x K
    ad::Node* log_probs = nullptr;  // n x K
    std::vector<int> assigned;
    ad::Node* branch_mean = nullptr;  // n x p, row i = locals[k*_i].mean
    Eigen::MatrixXd q;                // detached reference distribution
    std::vector<bool> empty_subgroup;
    ad::Node* l_kl = nullptr;
    ad::Node* l_td = nullptr;
    ad::Node* l_vae = nullptr;
    ad::Node* l_snn = nullptr;
  };

  // Builds distributions, posterior, and losses for a batch representation
  // (n x hidden). Noise matrices are explicit so training steps are seeded
  // and finite-difference checks can hold them fixed; kl noise has
  // mc_samples*n rows, vae noise n rows, both latent_dim wide. A frozen
  // reference distribution may be supplied (training recomputes q per batch).
  Graph build(ad::Tape& tape, const ParamStore::TapeView& view, ad::Node* xhat,
              const Eigen::MatrixXd& kl_noise, const Eigen::MatrixXd& vae_noise,
              const std::optional<Eigen::MatrixXd>& frozen_q = std::nullopt,
              const std::vector<int>* frozen_assigned = nullptr) const;

  // value-level conveniences
  std::pair<GaussianValue, std::vector<GaussianValue>> encode_distributions(
      const ParamStore& params, const Eigen::RowVectorXd& xhat) const;

  struct SnnParts {
    double l_kl = 0.0, l_td = 0.0, l_vae = 0.0, l_snn = 0.0;
  };
  SnnParts snn_loss(const ParamStore& params, const Eigen::MatrixXd& xhat_batch,
                    Rng& rng) const;

  Eigen::MatrixXd kl_noise(Eigen::Index n, Rng& rng) const;
  Eigen::MatrixXd vae_noise(Eigen::Index n, Rng& rng) const;

 private:
  SubgroupConfig cfg_;
};

}  // namespace stedr
