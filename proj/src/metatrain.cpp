#include "taml/metatrain.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "taml/error.hpp"
#include "taml/ops.hpp"
#include "taml/version.hpp"

namespace taml::meta {

namespace {

using nlohmann::json;

bool is_fm_path(const std::string& path) { return path.rfind("fm.", 0) == 0; }

uint64_t mix64(uint64_t a, uint64_t b) {
  a ^= b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2);
  return a;
}

Tensor mean_of(const std::vector<Tensor>& losses) {
  Tensor total = losses.front();
  for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
  return scale(total, 1.0 / static_cast<double>(losses.size()));
}

aug::TaskMeta meta_of(const world::EpisodeTask& task) {
  return aug::TaskMeta{task.n_way, task.k_shot, task.k_query};
}

Tensor task_inputs(const world::EpisodeTask& task) {
  return concat_rows({task.support_x, task.query_x});
}

double row_cosine_mean(const Tensor& a, const Tensor& b) {
  const std::size_t r = a.rows(), c = a.cols();
  double acc = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double x = a.at(i, j), y = b.at(i, j);
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    const double denom = std::sqrt(na) * std::sqrt(nb);
    acc += denom > 0.0 ? dot / denom : 0.0;
  }
  return acc / static_cast<double>(r);
}

}  // namespace

void TrainConfig::validate(const world::Benchmark& bench) const {
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
  if (n_tasks_per_iter != static_cast<int>(bench.sources.size()))
    throw ConfigError("n_tasks_per_iter (" + std::to_string(n_tasks_per_iter) +
                      ") must equal the number of source domains (" +
                      std::to_string(bench.sources.size()) + ")");
  if (m < 2 || m > n_tasks_per_iter)
    throw ConfigError("m must satisfy 2 <= m <= n, got m=" + std::to_string(m));
  if (n_way < 2) throw ConfigError("n_way must be >= 2");
  if (n_way > bench.spec.classes_per_domain)
    throw ConfigError("n_way exceeds classes_per_domain");
  if (k_shot < 1 || k_query < 1)
    throw ConfigError("k_shot and k_query must be >= 1");
  if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
  if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
  if (style_tasks < 1) throw ConfigError("style_tasks must be >= 1");
  if (pretrain_epochs < 0) throw ConfigError("pretrain_epochs must be >= 0");
  if (optimizer != "sgd" && optimizer != "adam")
    throw ConfigError("optimizer must be sgd or adam");
  encoder_config(bench.spec.feature_dim).validate();
  head_config().validate();
}

aug::Options TrainConfig::augment_options() const {
  aug::Options opt;
  opt.m = m;
  opt.gamma = gamma;
  opt.mti = mti_enabled;
  opt.mtst = mtst_enabled;
  opt.fm = fm_enabled;
  opt.stopgrad_stats = stopgrad_stats;
  opt.force_identity_stats = force_identity_stats;
  return opt;
}

model::EncoderConfig TrainConfig::encoder_config(int input_dim) const {
  model::EncoderConfig enc;
  enc.input_dim = input_dim;
  enc.layer_widths = layer_widths;
  enc.eligible_layers = eligible_layers;
  return enc;
}

model::HeadConfig TrainConfig::head_config() const {
  model::HeadConfig head;
  head.kind = this->head;
  head.init_tau = this->head == "matching_cosine" ? 10.0 : 1.0;
  return head;
}

namespace {

json config_to_json_obj(const TrainConfig& c) {
  return json{{"iterations", c.iterations},
              {"n_tasks_per_iter", c.n_tasks_per_iter},
              {"m", c.m},
              {"gamma", c.gamma},
              {"lr", c.lr},
              {"optimizer", c.optimizer},
              {"head", c.head},
              {"n_way", c.n_way},
              {"k_shot", c.k_shot},
              {"k_query", c.k_query},
              {"layer_widths", c.layer_widths},
              {"eligible_layers", c.eligible_layers},
              {"fm_enabled", c.fm_enabled},
              {"mti_enabled", c.mti_enabled},
              {"mtst_enabled", c.mtst_enabled},
              {"stopgrad_stats", c.stopgrad_stats},
              {"seed", c.seed},
              {"eval_episodes", c.eval_episodes},
              {"eval_interval", c.eval_interval},
              {"style_tasks", c.style_tasks},
              {"pretrain_epochs", c.pretrain_epochs}};
}

TrainConfig config_from_json_obj(const json& j) {
  TrainConfig c;
  c.iterations = j.value("iterations", c.iterations);
  c.n_tasks_per_iter = j.value("n_tasks_per_iter", c.n_tasks_per_iter);
  c.m = j.value("m", c.m);
  c.gamma = j.value("gamma", c.gamma);
  c.lr = j.value("lr", c.lr);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.head = j.value("head", c.head);
  c.n_way = j.value("n_way", c.n_way);
  c.k_shot = j.value("k_shot", c.k_shot);
  c.k_query = j.value("k_query", c.k_query);
  c.layer_widths = j.value("layer_widths", c.layer_widths);
  c.eligible_layers = j.value("eligible_layers", c.eligible_layers);
  c.fm_enabled = j.value("fm_enabled", c.fm_enabled);
  c.mti_enabled = j.value("mti_enabled", c.mti_enabled);
  c.mtst_enabled = j.value("mtst_enabled", c.mtst_enabled);
  c.stopgrad_stats = j.value("stopgrad_stats", c.stopgrad_stats);
  c.seed = j.value("seed", c.seed);
  c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.style_tasks = j.value("style_tasks", c.style_tasks);
  c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
  return c;
}

}  // namespace

std::string train_config_to_json(const TrainConfig& cfg) {
  return config_to_json_obj(cfg).dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  return config_from_json_obj(json::parse(text));
}

std::string metrics_header_line(const TrainConfig& cfg) {
  json j{{"schema", "metrics_v1"},
         {"version", std::string(kEngineVersion)},
         {"config", config_to_json_obj(cfg)}};
  return j.dump();
}

std::string metrics_record_line(const MetricsRecord& rec) {
  json evals = json::array();
  for (const auto& e : rec.evals)
    evals.push_back(json{{"domain_id", e.domain_id},
                         {"acc_mean", e.acc_mean},
                         {"ci95", e.ci_half_width},
                         {"episodes", e.episodes}});
  json j{{"iteration", rec.iteration},
         {"l_sd", rec.l_sd},
         {"l_ad", rec.l_ad},
         {"evals", evals},
         {"style_invariance", rec.style_invariance}};
  return j.dump();
}

TrainState init_train_state(const TrainConfig& cfg,
                            const world::Benchmark& bench) {
  cfg.validate(bench);
  TrainState state;
  state.config = cfg;
  state.input_dim = bench.spec.feature_dim;
  Rng init_rng = Rng::stream(cfg.seed, stream_tag::kInit);
  model::init_params(state.params, cfg.encoder_config(state.input_dim),
                     cfg.head_config(), init_rng);
  state.optimizer = make_optimizer(cfg.optimizer, cfg.lr);
  state.train_rng = Rng::stream(cfg.seed, stream_tag::kTrain);
  state.iteration = 0;
  return state;
}

std::vector<double> pretrain(TrainState& state, const world::Benchmark& bench,
                             int epochs) {
  constexpr int kStepsPerEpoch = 30;
  constexpr int kBatch = 64;
  if (epochs == 0) return {};

  const auto enc = state.config.encoder_config(state.input_dim);
  // Pooled source classes get global labels by class id order.
  std::vector<int> class_ids;
  std::vector<const world::DomainSpec*> class_domain;
  for (const auto& d : bench.sources)
    for (int c : d.class_ids) {
      class_ids.push_back(c);
      class_domain.push_back(&d);
    }
  const int n_classes = static_cast<int>(class_ids.size());
  const int out_dim = enc.layer_widths.back();

  Rng rng = Rng::stream(state.config.seed, stream_tag::kPretrain);
  ParamSet clf;
  clf.add("clf.w", Tensor::randn({static_cast<std::size_t>(out_dim),
                                  static_cast<std::size_t>(n_classes)},
                                 rng, std::sqrt(1.0 / out_dim)));
  clf.add("clf.b", Tensor::zeros({static_cast<std::size_t>(n_classes)}));

  // Throwaway optimizers: pretraining leaves the meta optimizer state clean.
  auto enc_opt = make_optimizer("adam", state.config.lr);
  auto clf_opt = make_optimizer("adam", state.config.lr);
  auto encoder_only = [](const std::string& p) {
    return p.rfind("encoder.", 0) == 0;
  };

  std::vector<double> epoch_losses;
  for (int e = 0; e < epochs; ++e) {
    double epoch_loss = 0.0;
    for (int s = 0; s < kStepsPerEpoch; ++s) {
      Tensor x = Tensor::zeros({kBatch, static_cast<std::size_t>(state.input_dim)});
      std::vector<int> labels(kBatch);
      for (int i = 0; i < kBatch; ++i) {
        const int k = rng.uniform_int(n_classes);
        labels[static_cast<std::size_t>(i)] = k;
        const auto sample = world::draw_sample(bench, *class_domain[k],
                                               class_ids[k], rng);
        std::copy(sample.begin(), sample.end(),
                  x.mutable_data() + i * state.input_dim);
      }
      Tape tape;
      Tensor h = model::encode(x, state.params, enc);
      Tensor logits = affine(h, clf.at("clf.w"), clf.at("clf.b"));
      Tensor loss = cross_entropy(logits, labels);
      state.params.zero_grad();
      clf.zero_grad();
      tape.backward(loss);
      enc_opt->step(state.params, encoder_only);
      clf_opt->step(clf);
      epoch_loss += loss.item();
    }
    epoch_losses.push_back(epoch_loss / kStepsPerEpoch);
  }
  return epoch_losses;
}

Tensor stage1_loss(const std::vector<world::EpisodeTask>& tasks,
                   const ParamSet& params, const TrainConfig& cfg,
                   int input_dim) {
  if (tasks.empty()) throw ContractError("stage1_loss: no tasks");
  const auto enc = cfg.encoder_config(input_dim);
  const auto head = cfg.head_config();
  std::vector<Tensor> losses;
  losses.reserve(tasks.size());
  for (const auto& task : tasks)
    losses.push_back(model::episode_loss(task, params, enc, head));
  return mean_of(losses);
}

Tensor stage2_loss(const std::vector<world::EpisodeTask>& tasks,
                   const ParamSet& params, const TrainConfig& cfg,
                   int input_dim, const aug::Plan& plan) {
  if (tasks.empty()) throw ContractError("stage2_loss: no tasks");
  const auto enc = cfg.encoder_config(input_dim);
  const auto head = cfg.head_config();
  const aug::TaskMeta meta = meta_of(tasks.front());

  std::vector<Tensor> layer_features;
  std::vector<aug::TaskMeta> metas;
  for (const auto& task : tasks) {
    if (!(meta_of(task) == meta))
      throw ContractError("stage2_loss: tasks have mismatched episode shapes");
    layer_features.push_back(
        model::encode_to_layer(task_inputs(task), plan.layer, params, enc));
    metas.push_back(meta_of(task));
  }

  const aug::AugmentedBatch batch = aug::build_augmented_batch(
      layer_features, metas, params, cfg.augment_options(), plan);

  std::vector<Tensor> losses;
  losses.reserve(batch.tasks.size());
  for (const auto& t : batch.tasks)
    losses.push_back(model::episode_loss_from_features(
        t.features, t.labels, meta, batch.layer, params, enc, head));
  return mean_of(losses);
}

double stage1_update(TrainState& state,
                     const std::vector<world::EpisodeTask>& tasks) {
  Tape tape;
  Tensor loss = stage1_loss(tasks, state.params, state.config, state.input_dim);
  state.params.zero_grad();
  tape.backward(loss);
  state.optimizer->step(state.params,
                        [](const std::string& p) { return !is_fm_path(p); });
  return loss.item();
}

double stage2_update(TrainState& state,
                     const std::vector<world::EpisodeTask>& tasks) {
  const auto enc = state.config.encoder_config(state.input_dim);
  const auto& eligible = enc.eligible_layers;
  const int layer = eligible[static_cast<std::size_t>(
      state.train_rng.uniform_int(static_cast<int>(eligible.size())))];
  const std::size_t channels = static_cast<std::size_t>(enc.width_of(layer));
  const aug::Plan plan =
      aug::plan_augment(static_cast<int>(tasks.size()), channels, layer,
                        state.config.augment_options(), state.train_rng);

  Tape tape;
  Tensor loss =
      stage2_loss(tasks, state.params, state.config, state.input_dim, plan);
  state.params.zero_grad();
  tape.backward(loss);
  // Only the chosen layer's modulation parameters carry gradient this
  // iteration; the others are mathematically zero and skipped.
  const bool fm_on = state.config.fm_enabled;
  state.optimizer->step(state.params, [&](const std::string& p) {
    if (!is_fm_path(p)) return true;
    return fm_on && (p == aug::fm_alpha_path(layer) ||
                     p == aug::fm_beta_path(layer));
  });
  return loss.item();
}

std::vector<MetricsRecord> run_training(TrainState& state,
                                        const world::Benchmark& bench,
                                        std::ostream* metrics_sink,
                                        const TrainHooks& hooks) {
  const TrainConfig& cfg = state.config;
  cfg.validate(bench);
  std::vector<MetricsRecord> records;

  for (int iter = state.iteration + 1; iter <= cfg.iterations; ++iter) {
    std::vector<world::EpisodeTask> tasks;
    tasks.reserve(bench.sources.size());
    for (const auto& domain : bench.sources)
      tasks.push_back(world::sample_task(bench, domain, cfg.n_way, cfg.k_shot,
                                         cfg.k_query, state.train_rng));

    double l_sd = 0.0, l_ad = 0.0;
    try {
      l_sd = stage1_update(state, tasks);
    } catch (const NumericError& e) {
      throw NumericError("training aborted at iteration " +
                         std::to_string(iter) + " in stage1: " + e.what());
    }
    if (hooks.after_stage) hooks.after_stage("stage1", iter, state.params);
    try {
      l_ad = stage2_update(state, tasks);
    } catch (const NumericError& e) {
      throw NumericError("training aborted at iteration " +
                         std::to_string(iter) + " in stage2: " + e.what());
    }
    if (hooks.after_stage) hooks.after_stage("stage2", iter, state.params);
    state.iteration = iter;

    if (iter % cfg.eval_interval == 0) {
      const auto t0 = std::chrono::steady_clock::now();
      MetricsRecord rec;
      rec.iteration = iter;
      rec.l_sd = l_sd;
      rec.l_ad = l_ad;
      for (const auto& target : bench.targets)
        rec.evals.push_back(evaluate(state.params, cfg, bench, target,
                                     cfg.eval_episodes,
                                     static_cast<uint64_t>(iter)));
      rec.style_invariance = style_invariance_score(
          state.params, cfg, bench, bench.targets.front().domain_id,
          bench.sources.front().domain_id, cfg.style_tasks,
          static_cast<uint64_t>(iter));
      rec.wall_clock_ms =
          std::chrono::duration<double, std::milli>(
              std::chrono::steady_clock::now() - t0)
              .count();
      if (metrics_sink) *metrics_sink << metrics_record_line(rec) << "\n";
      records.push_back(std::move(rec));
    }
  }
  return records;
}

EvalReport evaluate(const ParamSet& params, const TrainConfig& cfg,
                    const world::Benchmark& bench,
                    const world::DomainSpec& domain, int n_episodes,
                    uint64_t salt) {
  const auto enc = cfg.encoder_config(bench.spec.feature_dim);
  const auto head = cfg.head_config();
  const uint64_t tag =
      mix64(stream_tag::kEval,
            mix64(static_cast<uint64_t>(domain.domain_id), salt));

  std::vector<double> accs;
  accs.reserve(static_cast<std::size_t>(n_episodes));
  for (int ep = 0; ep < n_episodes; ++ep) {
    Rng rng = Rng::stream(cfg.seed, tag, static_cast<uint64_t>(ep));
    const auto task = world::sample_task(bench, domain, cfg.n_way, cfg.k_shot,
                                         cfg.k_query, rng);
    Tensor features = model::encode(task_inputs(task), params, enc);
    const std::size_t s_rows = task.support_x.rows();
    Tensor support_f = slice_rows(features, 0, s_rows);
    Tensor query_f = slice_rows(features, s_rows, features.rows());
    Tensor logits = model::head_logits(support_f, task.support_y, query_f,
                                       task.n_way, head, params);
    int correct = 0;
    for (std::size_t q = 0; q < task.query_y.size(); ++q)
      if (static_cast<int>(argmax_row(logits, q)) == task.query_y[q]) ++correct;
    accs.push_back(static_cast<double>(correct) /
                   static_cast<double>(task.query_y.size()));
  }

  EvalReport report;
  report.domain_id = domain.domain_id;
  report.episodes = n_episodes;
  report.acc_mean =
      std::accumulate(accs.begin(), accs.end(), 0.0) / accs.size();
  if (n_episodes > 1) {
    double ss = 0.0;
    for (double a : accs) ss += (a - report.acc_mean) * (a - report.acc_mean);
    const double stddev = std::sqrt(ss / (accs.size() - 1));
    report.ci_half_width = 1.96 * stddev / std::sqrt(accs.size());
  }
  return report;
}

double style_invariance_score(const ParamSet& params, const TrainConfig& cfg,
                              const world::Benchmark& bench,
                              int probe_domain_id, int partner_domain_id,
                              int n_tasks, uint64_t salt,
                              bool force_identity_stats) {
  const auto enc = cfg.encoder_config(bench.spec.feature_dim);
  const auto& probe_dom = bench.domain_by_id(probe_domain_id);
  const auto& partner_dom = bench.domain_by_id(partner_domain_id);
  const uint64_t tag =
      mix64(stream_tag::kProbe,
            mix64(static_cast<uint64_t>(probe_domain_id),
                  mix64(static_cast<uint64_t>(partner_domain_id), salt)));

  double total = 0.0;
  for (int t = 0; t < n_tasks; ++t) {
    Rng rng = Rng::stream(cfg.seed, tag, static_cast<uint64_t>(t));
    const auto probe = world::sample_task(bench, probe_dom, cfg.n_way,
                                          cfg.k_shot, cfg.k_query, rng);
    std::vector<world::EpisodeTask> partners;
    for (int j = 0; j < cfg.m - 1; ++j)
      partners.push_back(world::sample_task(bench, partner_dom, cfg.n_way,
                                            cfg.k_shot, cfg.k_query, rng));
    const auto& eligible = enc.eligible_layers;
    const int layer = eligible[static_cast<std::size_t>(
        rng.uniform_int(static_cast<int>(eligible.size())))];

    const aug::TaskMeta meta = meta_of(probe);
    std::vector<Tensor> feats{
        model::encode_to_layer(task_inputs(probe), layer, params, enc)};
    std::vector<aug::TaskMeta> metas{meta};
    for (const auto& p : partners) {
      feats.push_back(model::encode_to_layer(task_inputs(p), layer, params, enc));
      metas.push_back(meta_of(p));
    }

    aug::InterpolationConfig icfg;
    icfg.m = cfg.m;
    icfg.gamma.assign(static_cast<std::size_t>(cfg.m), cfg.gamma);
    const auto weights = aug::sample_dirichlet(icfg, rng);
    auto [mix_features, mix_labels] = aug::mti_interpolate(feats, metas, weights);

    const auto stats_probe = aug::task_style_stats(feats[0], layer);
    const auto stats_mix = force_identity_stats
                               ? stats_probe
                               : aug::task_style_stats(mix_features, layer);
    auto [transferred, labels] =
        aug::mtst_transfer(feats[0], meta, stats_probe, stats_mix);

    Tensor f_orig = model::encode_from_layer(feats[0], layer, params, enc);
    Tensor f_trans = model::encode_from_layer(transferred, layer, params, enc);
    total += row_cosine_mean(f_orig, f_trans);
  }
  return total / static_cast<double>(n_tasks);
}

}  // namespace taml::meta
