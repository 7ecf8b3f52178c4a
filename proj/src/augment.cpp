#include "taml/augment.hpp"

#include <cmath>

#include "taml/error.hpp"
#include "taml/ops.hpp"

namespace taml::aug {

void InterpolationConfig::validate(int n_available) const {
  if (m < 2)
    throw ConfigError("interpolation needs m >= 2, got m=" + std::to_string(m));
  if (m > n_available)
    throw ConfigError("interpolation needs m <= n, got m=" + std::to_string(m) +
                      " with n=" + std::to_string(n_available));
  if (static_cast<int>(gamma.size()) != m)
    throw ConfigError("gamma has " + std::to_string(gamma.size()) +
                      " entries but m=" + std::to_string(m));
  for (double g : gamma)
    if (!(g > 0.0)) throw ConfigError("gamma entries must be positive");
}

void MixWeights::validate() const {
  double total = 0.0;
  for (double w : lambda) {
    if (w < 0.0) throw ContractError("mix weight is negative");
    total += w;
  }
  if (std::fabs(total - 1.0) > 1e-12)
    throw ContractError("mix weights sum to " + std::to_string(total));
}

std::vector<int> canonical_labels(const TaskMeta& meta) {
  std::vector<int> labels;
  labels.reserve(meta.rows());
  for (int c = 0; c < meta.n_way; ++c)
    for (int s = 0; s < meta.k_shot; ++s) labels.push_back(c);
  for (int c = 0; c < meta.n_way; ++c)
    for (int q = 0; q < meta.k_query; ++q) labels.push_back(c);
  return labels;
}

MixWeights sample_dirichlet(const InterpolationConfig& config, Rng& rng) {
  config.validate(config.m);
  MixWeights w;
  w.lambda = rng.dirichlet(config.gamma);
  w.validate();
  return w;
}

std::pair<Tensor, std::vector<int>> mti_interpolate(
    const std::vector<Tensor>& features, const std::vector<TaskMeta>& metas,
    const MixWeights& weights) {
  if (features.empty() || features.size() != metas.size() ||
      features.size() != weights.lambda.size())
    throw ContractError("mti_interpolate: features, metas and weights disagree");
  weights.validate();
  const TaskMeta& meta = metas.front();
  for (const TaskMeta& m : metas)
    if (!(m == meta))
      throw ContractError("mti_interpolate: tasks have mismatched episode shapes");
  for (const Tensor& f : features) {
    if (f.shape() != features.front().shape())
      throw ContractError("mti_interpolate: feature shape mismatch " +
                          shape_str(f.shape()) + " vs " +
                          shape_str(features.front().shape()));
  }
  if (features.front().rows() != meta.rows())
    throw ContractError("mti_interpolate: features rows do not match metadata");

  Tensor mix = scale(features[0], weights.lambda[0]);
  for (std::size_t j = 1; j < features.size(); ++j)
    mix = add(mix, scale(features[j], weights.lambda[j]));
  return {mix, canonical_labels(meta)};
}

StyleStats task_style_stats(const Tensor& features, int layer) {
  auto [mean, var] = moments(features);
  return StyleStats{layer, mean, var};
}

std::pair<Tensor, std::vector<int>> mtst_transfer(const Tensor& x,
                                                  const TaskMeta& meta,
                                                  const StyleStats& stats_task,
                                                  const StyleStats& stats_mix,
                                                  double eps) {
  if (stats_task.layer != stats_mix.layer)
    throw ContractError("mtst_transfer: layer mismatch between styles");
  if (stats_task.mean.size() != x.cols() || stats_mix.mean.size() != x.cols())
    throw ContractError("mtst_transfer: channel mismatch, features " +
                        shape_str(x.shape()) + " vs stats [" +
                        std::to_string(stats_task.mean.size()) + "]");
  Tensor std_task = sqrt_t(add_const(stats_task.var, eps));
  Tensor std_mix = sqrt_t(add_const(stats_mix.var, eps));
  Tensor normalized = div_rows(sub_rows(x, stats_task.mean), std_task);
  Tensor transferred = add_rows(mul_rows(normalized, std_mix), stats_mix.mean);
  return {transferred, canonical_labels(meta)};
}

FmDraw sample_fm_noise(std::size_t channels, Rng& rng) {
  FmDraw d;
  d.eps_alpha = Tensor::randn({channels}, rng);
  d.eps_beta = Tensor::randn({channels}, rng);
  return d;
}

std::pair<Tensor, Tensor> fm_sample(const Tensor& w_alpha,
                                    const Tensor& w_beta, const FmDraw& draw) {
  if (w_alpha.shape() != draw.eps_alpha.shape() ||
      w_beta.shape() != draw.eps_beta.shape())
    throw ContractError("fm_sample: parameter/noise shape mismatch");
  Tensor alpha = mul(softplus(w_alpha), draw.eps_alpha);
  Tensor beta = mul(softplus(w_beta), draw.eps_beta);
  return {alpha, beta};
}

Tensor fm_apply(const Tensor& x, const Tensor& alpha, const Tensor& beta) {
  return add_rows(add(x, mul_rows(x, alpha)), beta);
}

std::string fm_alpha_path(int layer) {
  return "fm.layer" + std::to_string(layer) + ".w_alpha";
}

std::string fm_beta_path(int layer) {
  return "fm.layer" + std::to_string(layer) + ".w_beta";
}

Plan plan_augment(int n_tasks, std::size_t channels, int layer,
                  const Options& opt, Rng& rng) {
  InterpolationConfig config;
  config.m = opt.m;
  config.gamma.assign(static_cast<std::size_t>(std::max(opt.m, 0)), opt.gamma);
  config.validate(n_tasks);

  Plan plan;
  plan.layer = layer;
  plan.subset = rng.sample_without_replacement(n_tasks, opt.m);
  plan.weights = sample_dirichlet(config, rng);
  plan.fm_draws.reserve(static_cast<std::size_t>(n_tasks) + 1);
  for (int i = 0; i < n_tasks + 1; ++i)
    plan.fm_draws.push_back(sample_fm_noise(channels, rng));
  return plan;
}

AugmentedBatch build_augmented_batch(const std::vector<Tensor>& layer_features,
                                     const std::vector<TaskMeta>& metas,
                                     const ParamSet& params,
                                     const Options& opt, const Plan& plan) {
  const int n = static_cast<int>(layer_features.size());
  if (n == 0 || metas.size() != layer_features.size())
    throw ContractError("build_augmented_batch: empty or mismatched inputs");
  if (static_cast<int>(plan.subset.size()) != opt.m ||
      plan.fm_draws.size() != static_cast<std::size_t>(n) + 1)
    throw ContractError("build_augmented_batch: plan does not fit the batch");

  auto maybe_detach_stats = [&](StyleStats s) {
    if (opt.stopgrad_stats) {
      s.mean = detach(s.mean);
      s.var = detach(s.var);
    }
    return s;
  };

  // Interpolated task: always computed (its statistics drive the transfer),
  // included as a training task only when MTI is enabled.
  std::vector<Tensor> chosen_feats;
  std::vector<TaskMeta> chosen_metas;
  for (int idx : plan.subset) {
    chosen_feats.push_back(layer_features[static_cast<std::size_t>(idx)]);
    chosen_metas.push_back(metas[static_cast<std::size_t>(idx)]);
  }
  auto [mix_features, mix_labels] =
      mti_interpolate(chosen_feats, chosen_metas, plan.weights);
  const StyleStats stats_mix =
      maybe_detach_stats(task_style_stats(mix_features, plan.layer));

  const Tensor w_alpha = params.at(fm_alpha_path(plan.layer));
  const Tensor w_beta = params.at(fm_beta_path(plan.layer));
  auto modulate = [&](Tensor features, std::size_t draw_index) {
    if (!opt.fm) return features;
    auto [alpha, beta] = fm_sample(w_alpha, w_beta, plan.fm_draws[draw_index]);
    return fm_apply(features, alpha, beta);
  };

  AugmentedBatch batch;
  batch.layer = plan.layer;

  if (opt.mti) {
    AugmentedTask t;
    t.features = modulate(mix_features, 0);
    t.labels = mix_labels;
    t.kind = TaskKind::Interpolated;
    batch.tasks.push_back(std::move(t));
  }

  if (opt.mtst) {
    for (int j = 0; j < n; ++j) {
      const StyleStats stats_j = maybe_detach_stats(
          task_style_stats(layer_features[static_cast<std::size_t>(j)],
                           plan.layer));
      const StyleStats& target = opt.force_identity_stats ? stats_j : stats_mix;
      auto [transferred, labels] =
          mtst_transfer(layer_features[static_cast<std::size_t>(j)],
                        metas[static_cast<std::size_t>(j)], stats_j, target,
                        opt.eps);
      AugmentedTask t;
      t.features = modulate(transferred, static_cast<std::size_t>(j) + 1);
      t.labels = std::move(labels);
      t.kind = TaskKind::Transferred;
      t.source_index = j;
      batch.tasks.push_back(std::move(t));
    }
  } else if (!opt.mti) {
    // Fully ablated: stage two re-trains on the original tasks.
    for (int j = 0; j < n; ++j) {
      AugmentedTask t;
      t.features = modulate(layer_features[static_cast<std::size_t>(j)],
                            static_cast<std::size_t>(j) + 1);
      t.labels = canonical_labels(metas[static_cast<std::size_t>(j)]);
      t.kind = TaskKind::Original;
      t.source_index = j;
      batch.tasks.push_back(std::move(t));
    }
  }
  return batch;
}

}  // namespace taml::aug
