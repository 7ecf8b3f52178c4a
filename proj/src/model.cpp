#include "taml/model.hpp"

#include <algorithm>
#include <cmath>

#include "taml/error.hpp"
#include "taml/ops.hpp"

namespace taml::model {

int EncoderConfig::width_of(int layer) const {
  if (layer < 1 || layer > depth())
    throw IndexError("layer " + std::to_string(layer) + " out of range [1," +
                     std::to_string(depth()) + "]");
  return layer_widths[static_cast<std::size_t>(layer) - 1];
}

void EncoderConfig::validate() const {
  if (input_dim < 1) throw ConfigError("encoder input_dim must be positive");
  if (layer_widths.empty()) throw ConfigError("encoder needs at least one layer");
  for (int w : layer_widths)
    if (w < 1) throw ConfigError("encoder layer widths must be positive");
  if (eligible_layers.empty())
    throw ConfigError("eligible_layers must not be empty");
  for (int l : eligible_layers)
    if (l < 1 || l >= depth())
      throw ConfigError("eligible layer " + std::to_string(l) +
                        " must lie in [1," + std::to_string(depth() - 1) + "]");
}

void HeadConfig::validate() const {
  if (kind != "matching_cosine" && kind != "prototypical")
    throw ConfigError("unknown head kind '" + kind + "'");
  if (!(init_tau > 0.0)) throw ConfigError("head temperature must be positive");
}

std::string layer_w_path(int layer) {
  return "encoder.layer" + std::to_string(layer) + ".w";
}

std::string layer_b_path(int layer) {
  return "encoder.layer" + std::to_string(layer) + ".b";
}

void init_params(ParamSet& params, const EncoderConfig& enc,
                 const HeadConfig& head, Rng& rng) {
  enc.validate();
  head.validate();
  int fan_in = enc.input_dim;
  for (int l = 1; l <= enc.depth(); ++l) {
    const int fan_out = enc.width_of(l);
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    params.add(layer_w_path(l),
               Tensor::randn({static_cast<std::size_t>(fan_in),
                              static_cast<std::size_t>(fan_out)},
                             rng, stddev));
    params.add(layer_b_path(l),
               Tensor::zeros({static_cast<std::size_t>(fan_out)}));
    fan_in = fan_out;
  }
  params.add(kLogTauPath, Tensor::scalar(std::log(head.init_tau)));

  // softplus(w) = kFmInitStd
  const double w0 = std::log(std::exp(kFmInitStd) - 1.0);
  for (int l : enc.eligible_layers) {
    const std::size_t c = static_cast<std::size_t>(enc.width_of(l));
    params.add(aug::fm_alpha_path(l), Tensor::full({c}, w0));
    params.add(aug::fm_beta_path(l), Tensor::full({c}, w0));
  }
}

Tensor encode_to_layer(const Tensor& x, int layer, const ParamSet& params,
                       const EncoderConfig& enc) {
  if (layer < 1 || layer > enc.depth())
    throw IndexError("encode_to_layer: layer " + std::to_string(layer) +
                     " out of range [1," + std::to_string(enc.depth()) + "]");
  Tensor h = x;
  for (int l = 1; l <= layer; ++l)
    h = relu(affine(h, params.at(layer_w_path(l)), params.at(layer_b_path(l))));
  return h;
}

Tensor encode_from_layer(const Tensor& h, int layer, const ParamSet& params,
                         const EncoderConfig& enc) {
  if (layer < 1 || layer > enc.depth())
    throw IndexError("encode_from_layer: layer " + std::to_string(layer) +
                     " out of range [1," + std::to_string(enc.depth()) + "]");
  if (h.cols() != static_cast<std::size_t>(enc.width_of(layer)))
    throw ShapeError("encode_from_layer: features " + shape_str(h.shape()) +
                     " do not match layer " + std::to_string(layer) +
                     " width " + std::to_string(enc.width_of(layer)));
  Tensor out = h;
  for (int l = layer + 1; l <= enc.depth(); ++l)
    out = relu(affine(out, params.at(layer_w_path(l)), params.at(layer_b_path(l))));
  return out;
}

Tensor encode(const Tensor& x, const ParamSet& params,
              const EncoderConfig& enc) {
  return encode_to_layer(x, enc.depth(), params, enc);
}

namespace {

Tensor normalize_rows(const Tensor& x) {
  Tensor norms = sqrt_t(add_const(row_sum(mul(x, x)), 1e-24));
  return div_cols(x, norms);
}

// A[s, c] = 1/count_c when support s belongs to class c.
Tensor class_average_matrix(const std::vector<int>& support_y, int n_way) {
  std::vector<int> counts(static_cast<std::size_t>(n_way), 0);
  for (int y : support_y) {
    if (y < 0 || y >= n_way)
      throw IndexError("support label " + std::to_string(y) +
                       " outside [0," + std::to_string(n_way) + ")");
    counts[static_cast<std::size_t>(y)] += 1;
  }
  for (int c = 0; c < n_way; ++c)
    if (counts[static_cast<std::size_t>(c)] == 0)
      throw ContractError("class " + std::to_string(c) +
                          " has zero support shots");
  Tensor a = Tensor::zeros({support_y.size(), static_cast<std::size_t>(n_way)});
  double* p = a.mutable_data();
  for (std::size_t s = 0; s < support_y.size(); ++s) {
    const int c = support_y[s];
    p[s * static_cast<std::size_t>(n_way) + static_cast<std::size_t>(c)] =
        1.0 / counts[static_cast<std::size_t>(c)];
  }
  return a;
}

}  // namespace

Tensor head_logits(const Tensor& support_f, const std::vector<int>& support_y,
                   const Tensor& query_f, int n_way, const HeadConfig& head,
                   const ParamSet& params) {
  if (support_f.rows() != support_y.size())
    throw ContractError("head_logits: support rows vs labels mismatch");
  Tensor tau = exp_t(params.at(kLogTauPath));
  Tensor avg = class_average_matrix(support_y, n_way);
  if (head.kind == "matching_cosine") {
    Tensor qn = normalize_rows(query_f);
    Tensor sn = normalize_rows(support_f);
    Tensor cos = matmul(qn, transpose(sn));       // [Q, N*Ks]
    return mul_scalar_t(matmul(cos, avg), tau);   // class-averaged cosine
  }
  // prototypical: -tau * ||q - centroid_c||^2
  Tensor centroids = matmul(transpose(avg), support_f);  // [N, C]
  Tensor q2 = row_sum(mul(query_f, query_f));            // [Q]
  Tensor p2 = row_sum(mul(centroids, centroids));        // [N]
  Tensor qp = matmul(query_f, transpose(centroids));     // [Q, N]
  Tensor d2 = add_cols(add_rows(scale(qp, -2.0), p2), q2);
  return mul_scalar_t(neg(d2), tau);
}

Tensor episode_loss(const world::EpisodeTask& task, const ParamSet& params,
                    const EncoderConfig& enc, const HeadConfig& head) {
  const std::size_t s_rows = task.support_x.rows();
  Tensor all = concat_rows({task.support_x, task.query_x});
  Tensor features = encode(all, params, enc);
  Tensor support_f = slice_rows(features, 0, s_rows);
  Tensor query_f = slice_rows(features, s_rows, features.rows());
  Tensor logits =
      head_logits(support_f, task.support_y, query_f, task.n_way, head, params);
  return cross_entropy(logits, task.query_y);
}

Tensor episode_loss_from_features(const Tensor& layer_features,
                                  const std::vector<int>& labels,
                                  const aug::TaskMeta& meta, int layer,
                                  const ParamSet& params,
                                  const EncoderConfig& enc,
                                  const HeadConfig& head) {
  if (layer_features.rows() != meta.rows() ||
      labels.size() != meta.rows())
    throw ContractError("episode_loss_from_features: rows/labels mismatch");
  Tensor features = encode_from_layer(layer_features, layer, params, enc);
  const std::size_t s_rows =
      static_cast<std::size_t>(meta.n_way) * static_cast<std::size_t>(meta.k_shot);
  Tensor support_f = slice_rows(features, 0, s_rows);
  Tensor query_f = slice_rows(features, s_rows, features.rows());
  std::vector<int> support_y(labels.begin(),
                             labels.begin() + static_cast<long>(s_rows));
  std::vector<int> query_y(labels.begin() + static_cast<long>(s_rows),
                           labels.end());
  Tensor logits =
      head_logits(support_f, support_y, query_f, meta.n_way, head, params);
  return cross_entropy(logits, query_y);
}

}  // namespace taml::model
