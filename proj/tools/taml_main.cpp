#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "taml/error.hpp"
#include "taml/metatrain.hpp"
#include "taml/theorylab.hpp"
#include "taml/version.hpp"
#include "taml/worldgen.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitTheory = 4;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw taml::IoError("cannot open '" + path + "'");
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw taml::IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw taml::IoError("failed writing '" + path + "'");
}

struct GenArgs {
  uint64_t seed = 0;
  int domains = 4;
  int targets = 1;
  int classes = 8;
  int dim = 16;
  std::string out = "benchmark.json";
};

int cmd_gen(const GenArgs& args) {
  taml::world::BenchmarkSpec spec;
  spec.seed = args.seed;
  spec.n_source_domains = args.domains;
  spec.n_target_domains = args.targets;
  spec.classes_per_domain = args.classes;
  spec.feature_dim = args.dim;
  const auto bench = taml::world::make_benchmark(spec);
  taml::world::save_benchmark(args.out, bench);
  std::cout << "wrote " << args.out << " (" << args.domains << " source + "
            << args.targets << " target domains, dim " << args.dim << ")\n";
  return kExitOk;
}

struct TrainArgs {
  std::string config_path;
  std::string bench_path;
  std::string out_dir = "runs/default";
  bool no_fm = false;
  bool no_mtst = false;
  bool no_mti = false;
  bool stopgrad_stats = false;
  int64_t seed = -1;
  int iterations = -1;
  int eval_episodes = -1;
  int eval_interval = -1;
  int pretrain_epochs = -1;
  std::string head;
};

int cmd_train(const TrainArgs& args) {
  taml::meta::TrainConfig cfg;
  if (!args.config_path.empty())
    cfg = taml::meta::train_config_from_json(read_file(args.config_path));
  // flags win over the config file
  if (args.no_fm) cfg.fm_enabled = false;
  if (args.no_mtst) cfg.mtst_enabled = false;
  if (args.no_mti) cfg.mti_enabled = false;
  if (args.stopgrad_stats) cfg.stopgrad_stats = true;
  if (args.seed >= 0) cfg.seed = static_cast<uint64_t>(args.seed);
  if (args.iterations >= 0) cfg.iterations = args.iterations;
  if (args.eval_episodes >= 0) cfg.eval_episodes = args.eval_episodes;
  if (args.eval_interval >= 0) cfg.eval_interval = args.eval_interval;
  if (args.pretrain_epochs >= 0) cfg.pretrain_epochs = args.pretrain_epochs;
  if (!args.head.empty()) cfg.head = args.head;

  const auto bench = taml::world::load_benchmark(args.bench_path);
  auto state = taml::meta::init_train_state(cfg, bench);
  if (cfg.pretrain_epochs > 0)
    taml::meta::pretrain(state, bench, cfg.pretrain_epochs);

  std::filesystem::create_directories(args.out_dir);
  const std::string metrics_path = args.out_dir + "/metrics.jsonl";
  std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
  if (!metrics)
    throw taml::IoError("cannot open '" + metrics_path + "' for writing");
  metrics << taml::meta::metrics_header_line(cfg) << "\n";

  const auto records = taml::meta::run_training(state, bench, &metrics);

  const std::string ckpt_path = args.out_dir + "/checkpoint.taml";
  taml::meta::save_checkpoint(ckpt_path, taml::meta::make_checkpoint(state));

  if (!records.empty()) {
    const auto& last = records.back();
    std::cout << "iteration " << last.iteration << ": l_sd=" << last.l_sd
              << " l_ad=" << last.l_ad;
    for (const auto& e : last.evals)
      std::cout << " acc[d" << e.domain_id << "]=" << e.acc_mean << "+-"
                << e.ci_half_width;
    std::cout << " style=" << last.style_invariance << " ("
              << last.wall_clock_ms << " ms eval)\n";
  }
  std::cout << "wrote " << metrics_path << " and " << ckpt_path << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint_path;
  std::string bench_path;
  int domain = -1;
  int episodes = 1000;
  int way = -1;
  int shot = -1;
  std::string out;
};

int cmd_eval(const EvalArgs& args) {
  const auto ckpt = taml::meta::load_checkpoint(args.checkpoint_path);
  const auto bench = taml::world::load_benchmark(args.bench_path);
  taml::meta::TrainConfig cfg = ckpt.config;
  if (args.way > 0) cfg.n_way = args.way;
  if (args.shot > 0) cfg.k_shot = args.shot;
  const int domain_id =
      args.domain >= 0 ? args.domain : bench.targets.front().domain_id;
  const auto& domain = bench.domain_by_id(domain_id);

  const auto report = taml::meta::evaluate(ckpt.params, cfg, bench, domain,
                                           args.episodes, /*salt=*/0);

  json j{{"schema", "eval_v1"},
         {"version", std::string(taml::kEngineVersion)},
         {"config", json::parse(taml::meta::train_config_to_json(cfg))},
         {"domain_id", report.domain_id},
         {"episodes", report.episodes},
         {"acc_mean", report.acc_mean},
         {"ci95", report.ci_half_width}};
  const std::string text = j.dump(2) + "\n";
  if (!args.out.empty()) write_file(args.out, text);
  std::cout << "domain " << report.domain_id << ": acc " << report.acc_mean
            << " +- " << report.ci_half_width << " over " << report.episodes
            << " episodes\n";
  return kExitOk;
}

struct TheoryArgs {
  std::string suite = "variances";
  long samples = 1000000;
  uint64_t seed = 0;
  std::string out;
};

int cmd_theory(const TheoryArgs& args) {
  if (args.samples < 10000)
    throw taml::ConfigError("--samples below the minimum of 10000");

  std::vector<taml::theory::CheckResult> checks;
  json payload;
  if (args.suite == "variances") {
    checks = taml::theory::run_variances_suite(args.samples, args.seed);
  } else if (args.suite == "sweep") {
    taml::theory::SweepResult sweep;
    checks = taml::theory::run_sweep_suite({0.1, 0.2, 0.5, 1.0, 2.0, 5.0}, 4,
                                           args.samples, args.seed, &sweep);
    json points = json::array();
    for (const auto& p : sweep.points)
      points.push_back(json{{"gamma", p.gamma},
                            {"e_max_lambda", p.e_max_lambda},
                            {"se_max", p.se_max},
                            {"var_lambda", p.var_lambda},
                            {"se_var", p.se_var}});
    payload = json{{"m", sweep.m},
                   {"n_samples", sweep.n_samples},
                   {"points", points}};
  } else if (args.suite == "totalvar") {
    taml::theory::CovCheck cov;
    checks = taml::theory::run_totalvar_suite(args.samples, args.seed, &cov);
    payload = json{{"total_cov", cov.total_cov},
                   {"expected_conditional_cov", cov.expected_conditional_cov},
                   {"cov_of_conditional_mean", cov.cov_of_conditional_mean},
                   {"residual_frobenius", cov.residual_frobenius},
                   {"residual_bound", cov.residual_bound},
                   {"residual_rms", cov.residual_rms},
                   {"min_eigenvalue_cov_mean", cov.min_eigenvalue_cov_mean},
                   {"max_asymmetry", cov.max_asymmetry}};
  } else if (args.suite == "regtrace") {
    checks = taml::theory::run_regtrace_suite(args.samples, args.seed);
  } else {
    throw taml::ConfigError("unknown theory suite '" + args.suite + "'");
  }

  json rows = json::array();
  bool all_pass = true;
  std::string first_failure;
  for (const auto& c : checks) {
    rows.push_back(json{{"name", c.name},
                        {"value", c.value},
                        {"expected", c.expected},
                        {"tol", c.tol},
                        {"pass", c.pass}});
    if (!c.pass && first_failure.empty()) first_failure = c.name;
    all_pass = all_pass && c.pass;
  }
  json j{{"schema", "theory_v1"},
         {"version", std::string(taml::kEngineVersion)},
         {"config", json{{"suite", args.suite},
                         {"samples", args.samples},
                         {"seed", args.seed}}},
         {"pass", all_pass},
         {"checks", rows}};
  if (!payload.is_null()) j["result"] = payload;
  const std::string text = j.dump(2) + "\n";
  if (!args.out.empty()) write_file(args.out, text);

  for (const auto& c : checks)
    std::cout << (c.pass ? "pass" : "FAIL") << "  " << c.name
              << "  value=" << c.value << " expected=" << c.expected
              << " tol=" << c.tol << "\n";
  if (!all_pass) {
    std::cerr << "theory check failed: " << first_failure << "\n";
    return kExitTheory;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"taml: style-transfer task augmentation for episodic "
               "meta-learning on a synthetic multi-domain benchmark"};
  app.require_subcommand(1);
  std::string version(taml::kEngineVersion);
  app.set_version_flag("--version", version);

  GenArgs gen_args;
  auto* gen = app.add_subcommand("gen", "generate a benchmark file");
  gen->add_option("--seed", gen_args.seed, "benchmark seed");
  gen->add_option("--domains", gen_args.domains, "number of source domains");
  gen->add_option("--targets", gen_args.targets, "number of target domains");
  gen->add_option("--classes", gen_args.classes, "classes per domain");
  gen->add_option("--dim", gen_args.dim, "feature dimension");
  gen->add_option("--out", gen_args.out, "output path");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "run two-stage meta-training");
  train->add_option("--config", train_args.config_path, "training config JSON");
  train->add_option("--bench", train_args.bench_path, "benchmark JSON")
      ->required();
  train->add_option("--out-dir", train_args.out_dir, "output directory");
  train->add_flag("--no-fm", train_args.no_fm, "disable feature modulation");
  train->add_flag("--no-mtst", train_args.no_mtst, "disable style transfer");
  train->add_flag("--no-mti", train_args.no_mti,
                  "exclude the interpolated task");
  train->add_flag("--stopgrad-stats", train_args.stopgrad_stats,
                  "stop gradients through style statistics");
  train->add_option("--seed", train_args.seed, "training seed override");
  train->add_option("--iterations", train_args.iterations,
                    "iteration count override");
  train->add_option("--eval-episodes", train_args.eval_episodes,
                    "evaluation episode count override");
  train->add_option("--eval-interval", train_args.eval_interval,
                    "metrics interval override");
  train->add_option("--pretrain-epochs", train_args.pretrain_epochs,
                    "encoder pretraining epochs");
  train->add_option("--head", train_args.head,
                    "matching_cosine or prototypical");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_args.checkpoint_path, "checkpoint file")
      ->required();
  eval->add_option("--bench", eval_args.bench_path, "benchmark JSON")
      ->required();
  eval->add_option("--domain", eval_args.domain,
                   "domain id (default: first target)");
  eval->add_option("--episodes", eval_args.episodes, "episode count");
  eval->add_option("--way", eval_args.way, "n-way override");
  eval->add_option("--shot", eval_args.shot, "k-shot override");
  eval->add_option("--out", eval_args.out, "report path");

  TheoryArgs theory_args;
  auto* theory = app.add_subcommand("theory", "run numerical verification");
  theory
      ->add_option("--suite", theory_args.suite,
                   "variances | sweep | totalvar | regtrace")
      ->check(CLI::IsMember({"variances", "sweep", "totalvar", "regtrace"}));
  theory->add_option("--samples", theory_args.samples, "MC samples");
  theory->add_option("--seed", theory_args.seed, "MC seed");
  theory->add_option("--out", theory_args.out, "report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_args);
    if (train->parsed()) return cmd_train(train_args);
    if (eval->parsed()) return cmd_eval(eval_args);
    if (theory->parsed()) return cmd_theory(theory_args);
    std::cerr << "no subcommand given\n";
    return kExitConfig;
  } catch (const taml::NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const taml::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}
