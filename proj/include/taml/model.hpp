#pragma once

#include <string>
#include <vector>

#include "taml/augment.hpp"
#include "taml/tensor.hpp"
#include "taml/worldgen.hpp"

namespace taml::model {

struct EncoderConfig {
  int input_dim = 16;
  std::vector<int> layer_widths = {64, 64, 64, 64};
  // 1-based layers where augmentation may be injected; must stay below the
  // last layer so style invariance has trainable layers above it.
  std::vector<int> eligible_layers = {1, 2};

  int depth() const { return static_cast<int>(layer_widths.size()); }
  int width_of(int layer) const;  // channel count after layer `layer`
  void validate() const;
};

struct HeadConfig {
  std::string kind = "matching_cosine";  // matching_cosine | prototypical
  double init_tau = 10.0;

  void validate() const;
};

std::string layer_w_path(int layer);
std::string layer_b_path(int layer);
inline constexpr const char* kLogTauPath = "head.log_tau";

// Initializes encoder, head temperature and per-eligible-layer modulation
// scales (softplus(W) = kFmInitStd).
inline constexpr double kFmInitStd = 0.1;
void init_params(ParamSet& params, const EncoderConfig& enc,
                 const HeadConfig& head, Rng& rng);

Tensor encode_to_layer(const Tensor& x, int layer, const ParamSet& params,
                       const EncoderConfig& enc);
Tensor encode_from_layer(const Tensor& h, int layer, const ParamSet& params,
                         const EncoderConfig& enc);
Tensor encode(const Tensor& x, const ParamSet& params,
              const EncoderConfig& enc);

// logits[q, c]: cosine head averages tau-scaled cosine similarity to the
// supports of class c; prototypical head uses -tau * squared distance to the
// class centroid.
Tensor head_logits(const Tensor& support_f, const std::vector<int>& support_y,
                   const Tensor& query_f, int n_way, const HeadConfig& head,
                   const ParamSet& params);

Tensor episode_loss(const world::EpisodeTask& task, const ParamSet& params,
                    const EncoderConfig& enc, const HeadConfig& head);

// Loss of an augmented task: rows are [support block; query block] at
// `layer`, finished through the remaining encoder layers.
Tensor episode_loss_from_features(const Tensor& layer_features,
                                  const std::vector<int>& labels,
                                  const aug::TaskMeta& meta, int layer,
                                  const ParamSet& params,
                                  const EncoderConfig& enc,
                                  const HeadConfig& head);

}  // namespace taml::model
