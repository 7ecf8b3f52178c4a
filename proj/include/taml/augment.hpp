#pragma once

#include <string>
#include <utility>
#include <vector>

#include "taml/rng.hpp"
#include "taml/tensor.hpp"

namespace taml::aug {

struct InterpolationConfig {
  std::vector<double> gamma;  // Dirichlet concentration, length m
  int m = 2;                  // number of tasks to interpolate

  void validate(int n_available) const;
};

struct MixWeights {
  std::vector<double> lambda;

  void validate() const;  // non-negative, sums to 1 within 1e-12
};

// Per-layer, per-channel task statistics; var is a population variance.
struct StyleStats {
  int layer = 0;
  Tensor mean;  // [C]
  Tensor var;   // [C]
};

struct TaskMeta {
  int n_way = 0;
  int k_shot = 0;
  int k_query = 0;

  bool operator==(const TaskMeta&) const = default;
  std::size_t rows() const {
    return static_cast<std::size_t>(n_way) * (k_shot + k_query);
  }
};

// Fresh episode-local labels in canonical order: class-major support block
// followed by class-major query block.
std::vector<int> canonical_labels(const TaskMeta& meta);

MixWeights sample_dirichlet(const InterpolationConfig& config, Rng& rng);

// Row-wise convex combination of class-aligned task features plus re-assigned
// labels. All tasks must share (n_way, k_shot, k_query) and shape.
std::pair<Tensor, std::vector<int>> mti_interpolate(
    const std::vector<Tensor>& features, const std::vector<TaskMeta>& metas,
    const MixWeights& weights);

StyleStats task_style_stats(const Tensor& features, int layer);

// Re-standardizes x to the mixed style: per channel
//   (x - mean) / sqrt(var + eps) * sqrt(var_mix + eps) + mean_mix.
// Gradients flow through both statistics unless the caller detached them.
std::pair<Tensor, std::vector<int>> mtst_transfer(const Tensor& x,
                                                  const TaskMeta& meta,
                                                  const StyleStats& stats_task,
                                                  const StyleStats& stats_mix,
                                                  double eps = 1e-5);

// Frozen per-task modulation noise; reparameterized sampling keeps gradients
// flowing into the learnable scales.
struct FmDraw {
  Tensor eps_alpha;  // [C], N(0,1)
  Tensor eps_beta;   // [C], N(0,1)
};

FmDraw sample_fm_noise(std::size_t channels, Rng& rng);

// alpha = softplus(w_alpha) * eps_alpha, beta likewise; softplus(w) acts as
// the Gaussian standard deviation.
std::pair<Tensor, Tensor> fm_sample(const Tensor& w_alpha,
                                    const Tensor& w_beta, const FmDraw& draw);

// x + alpha * x + beta with one (alpha, beta) shared by every row.
Tensor fm_apply(const Tensor& x, const Tensor& alpha, const Tensor& beta);

struct Options {
  int m = 3;
  double gamma = 0.2;  // uniform Dirichlet concentration
  double eps = 1e-5;
  bool mti = true;    // include the interpolated task in the batch
  bool mtst = true;   // include the style-transferred tasks
  bool fm = true;     // modulate every generated task
  bool stopgrad_stats = false;
  // Test hook: per-task transfer target becomes the task's own stats.
  bool force_identity_stats = false;
};

// One iteration's frozen augmentation randomness.
struct Plan {
  int layer = 0;
  std::vector<int> subset;  // m task indices chosen for interpolation
  MixWeights weights;
  std::vector<FmDraw> fm_draws;  // n+1 entries: interpolated task first
};

Plan plan_augment(int n_tasks, std::size_t channels, int layer,
                  const Options& opt, Rng& rng);

enum class TaskKind { Interpolated, Transferred, Original };

struct AugmentedTask {
  Tensor features;  // [N*(Ks+Kq), C]
  std::vector<int> labels;
  TaskKind kind = TaskKind::Original;
  int source_index = -1;  // input task index for Transferred/Original
};

struct AugmentedBatch {
  int layer = 0;
  std::vector<AugmentedTask> tasks;
};

std::string fm_alpha_path(int layer);
std::string fm_beta_path(int layer);

// Full augmentation composite. With default options the batch holds the
// interpolated task plus one style-transferred task per input, each freshly
// labeled and independently modulated; ablation flags subtract components.
AugmentedBatch build_augmented_batch(const std::vector<Tensor>& layer_features,
                                     const std::vector<TaskMeta>& metas,
                                     const ParamSet& params,
                                     const Options& opt, const Plan& plan);

}  // namespace taml::aug
