#include "stedr/subgroup.hpp"

#include <cmath>
#include <stdexcept>

namespace stedr {

namespace ad = stedr::ad;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kDegenerateVariance = 1e-12;

double stable_logsumexp(const std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

double diag_gaussian_logpdf(const Eigen::VectorXd& z, const Eigen::VectorXd& mean,
                            const Eigen::VectorXd& log_var) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    double d = z(j) - mean(j);
    s += kLog2Pi + log_var(j) + d * d / std::exp(log_var(j));
  }
  return -0.5 * s;
}

void check_variances(const GaussianValue& g) {
  for (Eigen::Index j = 0; j < g.log_variance.size(); ++j)
    if (std::exp(g.log_variance(j)) <= kDegenerateVariance)
      throw std::domain_error("mixture_kl_loss: degenerate variance");
}

// graph-level diagonal Gaussian log density, n x 1
ad::Node* logpdf_node(ad::Tape& t, ad::Node* z, ad::Node* mean, ad::Node* log_var) {
  ad::Node* sq = ad::square(t, ad::sub(t, z, mean));
  ad::Node* inv_var = ad::exp_(t, ad::scale(t, log_var, -1.0));
  ad::Node* terms = ad::add(t, ad::add_const(t, log_var, kLog2Pi), ad::mul(t, sq, inv_var));
  return ad::scale(t, ad::row_sum(t, terms), -0.5);
}

}  // namespace

SubgroupPosterior subgroup_posterior(const GaussianValue& global,
                                     const std::vector<GaussianValue>& locals) {
  if (locals.empty()) throw std::invalid_argument("subgroup_posterior: no local distributions");
  std::vector<double> logits(locals.size());
  for (std::size_t k = 0; k < locals.size(); ++k) {
    if (locals[k].mean.size() != global.mean.size())
      throw std::invalid_argument("subgroup_posterior: dimension mismatch");
    logits[k] = -(locals[k].mean - global.mean).squaredNorm();
  }
  double lse = stable_logsumexp(logits);
  SubgroupPosterior post;
  post.probs.resize(static_cast<Eigen::Index>(locals.size()));
  for (std::size_t k = 0; k < locals.size(); ++k)
    post.probs(static_cast<Eigen::Index>(k)) = std::exp(logits[k] - lse);
  post.assigned = 0;
  for (Eigen::Index k = 1; k < post.probs.size(); ++k)
    if (post.probs(k) > post.probs(post.assigned)) post.assigned = static_cast<int>(k);
  return post;
}

double mixture_kl_loss(const GaussianValue& global, const std::vector<GaussianValue>& locals,
                       const Eigen::VectorXd& probs, int mc_samples, Rng& rng) {
  if (mc_samples < 1) throw std::invalid_argument("mixture_kl_loss: mc_samples must be >= 1");
  if (static_cast<std::size_t>(probs.size()) != locals.size())
    throw std::invalid_argument("mixture_kl_loss: probs/locals mismatch");
  check_variances(global);
  for (const auto& l : locals) check_variances(l);

  const Eigen::Index p = global.mean.size();
  double acc = 0.0;
  std::vector<double> comps(locals.size());
  for (int s = 0; s < mc_samples; ++s) {
    Eigen::VectorXd z(p);
    for (Eigen::Index j = 0; j < p; ++j)
      z(j) = global.mean(j) + rng.normal() * std::exp(0.5 * global.log_variance(j));
    double log_p = diag_gaussian_logpdf(z, global.mean, global.log_variance);
    for (std::size_t k = 0; k < locals.size(); ++k) {
      double w = probs(static_cast<Eigen::Index>(k));
      comps[k] = (w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity()) +
                 diag_gaussian_logpdf(z, locals[k].mean, locals[k].log_variance);
    }
    acc += log_p - stable_logsumexp(comps);
  }
  return acc / static_cast<double>(mc_samples);
}

TargetDistribution target_distribution_loss(const Eigen::MatrixXd& batch_probs) {
  const Eigen::Index n = batch_probs.rows(), k = batch_probs.cols();
  if (n == 0) throw std::invalid_argument("target_distribution_loss: empty batch");
  for (Eigen::Index i = 0; i < n; ++i) {
    double row = batch_probs.row(i).sum();
    if (std::abs(row - 1.0) > 1e-6 || (batch_probs.row(i).array() < 0.0).any())
      throw std::invalid_argument("target_distribution_loss: rows must lie on the simplex");
  }
  TargetDistribution out;
  Eigen::VectorXd freq = batch_probs.colwise().sum();
  out.empty_subgroup.resize(static_cast<std::size_t>(k));
  Eigen::MatrixXd unnorm(n, k);
  for (Eigen::Index c = 0; c < k; ++c) {
    out.empty_subgroup[static_cast<std::size_t>(c)] = freq(c) == 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      unnorm(i, c) =
          freq(c) == 0.0 ? 0.0 : batch_probs(i, c) * batch_probs(i, c) / freq(c);
  }
  out.q.resize(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    double z = unnorm.row(i).sum();
    if (z <= 0.0) throw std::invalid_argument("target_distribution_loss: degenerate row");
    out.q.row(i) = unnorm.row(i) / z;
  }
  out.l_td = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index c = 0; c < k; ++c) {
      double q = out.q(i, c);
      if (q > 0.0) out.l_td += q * (std::log(q) - std::log(batch_probs(i, c)));
    }
  return out;
}

SubgroupNet::SubgroupNet(SubgroupConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.k < 1) throw std::invalid_argument("subgroup net: k must be >= 1");
  if (cfg_.latent_dim < 1) throw std::invalid_argument("subgroup net: latent_dim must be >= 1");
}

void SubgroupNet::init_params(ParamStore& p, Rng& rng) const {
  const auto h = cfg_.hidden, q = cfg_.latent_dim;
  p.add("sub.global.wm", glorot(rng, h, q));
  p.add("sub.global.bm", Eigen::MatrixXd::Zero(1, q));
  if (cfg_.ablate_gmm) return;
  p.add("sub.global.wv", glorot(rng, h, q));
  p.add("sub.global.bv", Eigen::MatrixXd::Zero(1, q));
  for (int k = 0; k < cfg_.k; ++k) {
    std::string pre = "sub.local" + std::to_string(k) + ".";
    p.add(pre + "wm", glorot(rng, h, q));
    p.add(pre + "bm", Eigen::MatrixXd::Zero(1, q));
    p.add(pre + "wv", glorot(rng, h, q));
    p.add(pre + "bv", Eigen::MatrixXd::Zero(1, q));
  }
  p.add("sub.dec.w", glorot(rng, q, h));
  p.add("sub.dec.b", Eigen::MatrixXd::Zero(1, h));
}

SubgroupNet::Graph SubgroupNet::build(ad::Tape& t, const ParamStore::TapeView& view,
                                      ad::Node* xhat, const Eigen::MatrixXd& kl_noise,
                                      const Eigen::MatrixXd& vae_noise,
                                      const std::optional<Eigen::MatrixXd>& frozen_q,
                                      const std::vector<int>* frozen_assigned) const {
  const Eigen::Index n = xhat->rows();
  Graph g;
  g.global.mean = ad::add_rowvec(t, ad::matmul(t, xhat, view["sub.global.wm"]),
                                 view["sub.global.bm"]);
  if (cfg_.ablate_gmm) {
    g.assigned.assign(static_cast<std::size_t>(n), 0);
    g.branch_mean = g.global.mean;
    g.l_kl = t.scalar(0.0);
    g.l_td = t.scalar(0.0);
    g.l_vae = t.scalar(0.0);
    g.l_snn = t.scalar(0.0);
    return g;
  }
  g.global.log_var = ad::add_rowvec(t, ad::matmul(t, xhat, view["sub.global.wv"]),
                                    view["sub.global.bv"]);
  for (int k = 0; k < cfg_.k; ++k) {
    std::string pre = "sub.local" + std::to_string(k) + ".";
    Gaussians loc;
    loc.mean = ad::add_rowvec(t, ad::matmul(t, xhat, view[pre + "wm"]), view[pre + "bm"]);
    loc.log_var = ad::add_rowvec(t, ad::matmul(t, xhat, view[pre + "wv"]), view[pre + "bv"]);
    g.locals.push_back(loc);
  }

  double min_var = g.global.log_var->val.minCoeff();
  for (const auto& loc : g.locals) min_var = std::min(min_var, loc.log_var->val.minCoeff());
  if (std::exp(min_var) <= kDegenerateVariance)
    throw std::domain_error("subgroup net: degenerate variance");

  // posterior from similarity of means
  std::vector<ad::Node*> logit_cols;
  for (int k = 0; k < cfg_.k; ++k) {
    ad::Node* diff = ad::sub(t, g.locals[static_cast<std::size_t>(k)].mean, g.global.mean);
    logit_cols.push_back(ad::scale(t, ad::row_sum(t, ad::square(t, diff)), -1.0));
  }
  ad::Node* logits = cfg_.k == 1 ? logit_cols[0] : ad::concat_cols(t, logit_cols);
  g.probs = ad::softmax_rows(t, logits);
  g.log_probs = ad::log_softmax_rows(t, logits);

  if (frozen_assigned) {
    g.assigned = *frozen_assigned;
  } else {
    g.assigned.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      for (int k = 1; k < cfg_.k; ++k)
        if (g.probs->val(i, k) > g.probs->val(i, best)) best = k;
      g.assigned[static_cast<std::size_t>(i)] = best;
    }
  }

  // representation routed to the assigned subgroup's encoder mean
  g.branch_mean = nullptr;
  for (int k = 0; k < cfg_.k; ++k) {
    Eigen::MatrixXd ind = Eigen::MatrixXd::Zero(n, 1);
    for (Eigen::Index i = 0; i < n; ++i)
      if (g.assigned[static_cast<std::size_t>(i)] == k) ind(i, 0) = 1.0;
    ad::Node* masked =
        ad::mul_colvec(t, g.locals[static_cast<std::size_t>(k)].mean, t.constant(ind));
    g.branch_mean = g.branch_mean ? ad::add(t, g.branch_mean, masked) : masked;
  }

  // Monte-Carlo KL(global || mixture)
  if (kl_noise.rows() != static_cast<Eigen::Index>(cfg_.mc_samples) * n ||
      kl_noise.cols() != cfg_.latent_dim)
    throw std::invalid_argument("subgroup net: kl noise shape mismatch");
  ad::Node* sigma = ad::exp_(t, ad::scale(t, g.global.log_var, 0.5));
  std::vector<ad::Node*> diffs;
  for (int s = 0; s < cfg_.mc_samples; ++s) {
    ad::Node* eps = t.constant(kl_noise.middleRows(static_cast<Eigen::Index>(s) * n, n));
    ad::Node* z = ad::add(t, g.global.mean, ad::mul(t, eps, sigma));
    ad::Node* log_p = logpdf_node(t, z, g.global.mean, g.global.log_var);
    std::vector<ad::Node*> comps;
    for (int k = 0; k < cfg_.k; ++k) {
      ad::Node* dens = logpdf_node(t, z, g.locals[static_cast<std::size_t>(k)].mean,
                                   g.locals[static_cast<std::size_t>(k)].log_var);
      comps.push_back(ad::add(t, ad::slice_cols(t, g.log_probs, k, 1), dens));
    }
    ad::Node* log_q = cfg_.k == 1 ? comps[0] : ad::logsumexp_rows(t, ad::concat_cols(t, comps));
    diffs.push_back(ad::sub(t, log_p, log_q));
  }
  g.l_kl = ad::mean_all(t, diffs.size() == 1 ? diffs[0] : ad::concat_rows(t, diffs));

  // target-distribution loss against a constant (per-batch) reference
  if (frozen_q) {
    g.q = *frozen_q;
    g.empty_subgroup.assign(static_cast<std::size_t>(cfg_.k), false);
  } else {
    auto td = target_distribution_loss(g.probs->val);
    g.q = td.q;
    g.empty_subgroup = td.empty_subgroup;
  }
  Eigen::MatrixXd log_q_const = g.q;
  for (Eigen::Index i = 0; i < n; ++i)
    for (int k = 0; k < cfg_.k; ++k)
      log_q_const(i, k) = g.q(i, k) > 0.0 ? std::log(g.q(i, k)) : 0.0;
  ad::Node* td_terms =
      ad::mul(t, t.constant(g.q), ad::sub(t, t.constant(log_q_const), g.log_probs));
  g.l_td = ad::sum(t, td_terms);

  // reconstruction of the representation from a reparameterized draw
  if (vae_noise.rows() != n || vae_noise.cols() != cfg_.latent_dim)
    throw std::invalid_argument("subgroup net: vae noise shape mismatch");
  ad::Node* z_vae = ad::add(t, g.global.mean, ad::mul(t, t.constant(vae_noise), sigma));
  ad::Node* recon =
      ad::add_rowvec(t, ad::matmul(t, z_vae, view["sub.dec.w"]), view["sub.dec.b"]);
  ad::Node* per_sample = ad::scale(t, ad::row_sum(t, ad::square(t, ad::sub(t, recon, xhat))), 0.5);
  g.l_vae = ad::mean_all(t, per_sample);

  g.l_snn = ad::add(t, ad::add(t, g.l_kl, g.l_td), g.l_vae);
  return g;
}

std::pair<GaussianValue, std::vector<GaussianValue>> SubgroupNet::encode_distributions(
    const ParamStore& params, const Eigen::RowVectorXd& xhat) const {
  if (!xhat.allFinite()) throw std::invalid_argument("encode_distributions: non-finite input");
  auto linear = [&](const std::string& w, const std::string& b) {
    return (xhat * params.at(w) + params.at(b).row(0)).transpose();
  };
  GaussianValue global;
  global.mean = linear("sub.global.wm", "sub.global.bm");
  std::vector<GaussianValue> locals;
  if (cfg_.ablate_gmm) {
    global.log_variance = Eigen::VectorXd::Zero(cfg_.latent_dim);
    return {global, locals};
  }
  global.log_variance = linear("sub.global.wv", "sub.global.bv");
  for (int k = 0; k < cfg_.k; ++k) {
    std::string pre = "sub.local" + std::to_string(k) + ".";
    GaussianValue loc;
    loc.mean = linear(pre + "wm", pre + "bm");
    loc.log_variance = linear(pre + "wv", pre + "bv");
    locals.push_back(std::move(loc));
  }
  return {global, locals};
}

Eigen::MatrixXd SubgroupNet::kl_noise(Eigen::Index n, Rng& rng) const {
  Eigen::MatrixXd eps(static_cast<Eigen::Index>(cfg_.mc_samples) * n, cfg_.latent_dim);
  for (Eigen::Index i = 0; i < eps.rows(); ++i)
    for (Eigen::Index j = 0; j < eps.cols(); ++j) eps(i, j) = rng.normal();
  return eps;
}

Eigen::MatrixXd SubgroupNet::vae_noise(Eigen::Index n, Rng& rng) const {
  Eigen::MatrixXd eps(n, cfg_.latent_dim);
  for (Eigen::Index i = 0; i < eps.rows(); ++i)
    for (Eigen::Index j = 0; j < eps.cols(); ++j) eps(i, j) = rng.normal();
  return eps;
}

SubgroupNet::SnnParts SubgroupNet::snn_loss(const ParamStore& params,
                                            const Eigen::MatrixXd& xhat_batch, Rng& rng) const {
  if (xhat_batch.rows() == 0) throw std::invalid_argument("snn_loss: empty batch");
  ad::Tape tape;
  auto view = params.on_tape(tape);
  ad::Node* xhat = tape.constant(xhat_batch);
  auto g = build(tape, view, xhat, kl_noise(xhat_batch.rows(), rng),
                 vae_noise(xhat_batch.rows(), rng));
  SnnParts parts;
  parts.l_kl = g.l_kl->scalar();
  parts.l_td = g.l_td->scalar();
  parts.l_vae = g.l_vae->scalar();
  parts.l_snn = g.l_snn->scalar();
  return parts;
}

}  // namespace stedr
