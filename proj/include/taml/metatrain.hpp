#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "taml/augment.hpp"
#include "taml/model.hpp"
#include "taml/optim.hpp"
#include "taml/rng.hpp"
#include "taml/tensor.hpp"
#include "taml/worldgen.hpp"

namespace taml::meta {

struct TrainConfig {
  int iterations = 2000;
  int n_tasks_per_iter = 4;  // one task per source domain
  int m = 3;
  double gamma = 0.2;
  double lr = 0.001;
  std::string optimizer = "adam";
  std::string head = "matching_cosine";
  int n_way = 5;
  int k_shot = 1;
  int k_query = 15;
  std::vector<int> layer_widths = {64, 64, 64, 64};
  std::vector<int> eligible_layers = {1, 2};
  bool fm_enabled = true;
  bool mti_enabled = true;
  bool mtst_enabled = true;
  bool stopgrad_stats = false;
  uint64_t seed = 0;
  int eval_episodes = 1000;
  int eval_interval = 500;
  int style_tasks = 50;
  int pretrain_epochs = 0;
  // Test hook, not part of the config surface (never serialized): forces
  // each style transfer toward the task's own statistics.
  bool force_identity_stats = false;

  void validate(const world::Benchmark& bench) const;
  aug::Options augment_options() const;
  model::EncoderConfig encoder_config(int input_dim) const;
  model::HeadConfig head_config() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

struct EvalReport {
  int domain_id = 0;
  double acc_mean = 0.0;
  double ci_half_width = 0.0;  // 1.96 * sample std / sqrt(episodes)
  int episodes = 0;
};

struct MetricsRecord {
  int iteration = 0;
  double l_sd = 0.0;
  double l_ad = 0.0;
  std::vector<EvalReport> evals;  // one per target domain
  double style_invariance = 0.0;
  // Console diagnostics only; never serialized, so metrics files stay
  // bit-identical across runs of the same (config, seed).
  double wall_clock_ms = 0.0;
};

std::string metrics_header_line(const TrainConfig& cfg);
std::string metrics_record_line(const MetricsRecord& rec);

struct TrainState {
  TrainConfig config;
  int input_dim = 0;
  ParamSet params;
  std::unique_ptr<Optimizer> optimizer;
  Rng train_rng{0};
  int iteration = 0;
};

TrainState init_train_state(const TrainConfig& cfg,
                            const world::Benchmark& bench);

// Supervised warm-up of the encoder over all pooled source classes with a
// throwaway linear classifier; returns the per-epoch mean losses.
std::vector<double> pretrain(TrainState& state, const world::Benchmark& bench,
                             int epochs);

// Losses as pure functions of the parameters (used by updates and oracles).
Tensor stage1_loss(const std::vector<world::EpisodeTask>& tasks,
                   const ParamSet& params, const TrainConfig& cfg,
                   int input_dim);
Tensor stage2_loss(const std::vector<world::EpisodeTask>& tasks,
                   const ParamSet& params, const TrainConfig& cfg,
                   int input_dim, const aug::Plan& plan);

// One optimizer step on (encoder, head) from the mean source-task loss.
double stage1_update(TrainState& state,
                     const std::vector<world::EpisodeTask>& tasks);
// One optimizer step on (encoder, head, modulation) from the mean loss over
// the augmented batch; consumes the state's RNG for the augmentation plan.
double stage2_update(TrainState& state,
                     const std::vector<world::EpisodeTask>& tasks);

struct TrainHooks {
  // stage is "stage1" or "stage2"; called right after that stage's update.
  std::function<void(const std::string& stage, int iteration,
                     const ParamSet& params)>
      after_stage;
};

// Runs the remaining iterations of the two-stage loop; appends metrics every
// eval_interval iterations (and writes JSONL lines to the sink when given).
std::vector<MetricsRecord> run_training(TrainState& state,
                                        const world::Benchmark& bench,
                                        std::ostream* metrics_sink = nullptr,
                                        const TrainHooks& hooks = {});

EvalReport evaluate(const ParamSet& params, const TrainConfig& cfg,
                    const world::Benchmark& bench,
                    const world::DomainSpec& domain, int n_episodes,
                    uint64_t salt = 0);

// Mean row-wise cosine similarity between final-layer features of probe
// tasks and their style-transferred versions (transferred toward a random
// interpolation of the probe with tasks from the partner domain).
double style_invariance_score(const ParamSet& params, const TrainConfig& cfg,
                              const world::Benchmark& bench,
                              int probe_domain_id, int partner_domain_id,
                              int n_tasks, uint64_t salt = 0,
                              bool force_identity_stats = false);

struct Checkpoint {
  TrainConfig config;
  int input_dim = 0;
  int iteration = 0;
  std::array<uint64_t, 4> rng_state{};
  ParamSet params;
  std::string optimizer_kind;
  std::map<std::string, Adam::State> adam_state;
};

Checkpoint make_checkpoint(const TrainState& state);
TrainState resume_train_state(const Checkpoint& ckpt);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace taml::meta
