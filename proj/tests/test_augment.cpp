#include <doctest.h>

#include <cmath>

#include "taml/augment.hpp"
#include "taml/error.hpp"
#include "taml/gradcheck.hpp"
#include "taml/ops.hpp"
#include "taml/theorylab.hpp"

using namespace taml;
using namespace taml::aug;

namespace {

InterpolationConfig uniform_config(int m, double gamma) {
  InterpolationConfig c;
  c.m = m;
  c.gamma.assign(static_cast<std::size_t>(m), gamma);
  return c;
}

}  // namespace

TEST_CASE("interpolation config rejects m=1 and bad gamma") {
  CHECK_THROWS_AS(uniform_config(1, 0.2).validate(4), ConfigError);
  CHECK_THROWS_AS(uniform_config(5, 0.2).validate(4), ConfigError);
  InterpolationConfig bad = uniform_config(2, 0.2);
  bad.gamma[1] = 0.0;
  CHECK_THROWS_AS(bad.validate(4), ConfigError);
}

TEST_CASE("sampled mix weights live exactly on the simplex") {
  Rng rng(5);
  const auto cfg = uniform_config(4, 0.2);
  for (int i = 0; i < 2000; ++i) {
    const MixWeights w = sample_dirichlet(cfg, rng);
    w.validate();
    double total = 0.0;
    for (double v : w.lambda) total += v;
    CHECK(std::fabs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("dirichlet MC moments match closed forms") {
  // Var for gamma=[1,1] is 1/12; for [0.2]x4 it is 0.2*0.6/(0.64*1.8).
  const long n = 200000;
  {
    const auto m = theory::mc_dirichlet_lambda1({1.0, 1.0}, n, 42);
    CHECK(std::fabs(m.mean - 0.5) <= 3.0 * m.se_mean);
    CHECK(std::fabs(m.var - 1.0 / 12.0) <= 3.0 * m.se_var);
  }
  {
    const auto m = theory::mc_dirichlet_lambda1({0.2, 0.2, 0.2, 0.2}, n, 43);
    CHECK(std::fabs(m.var - 0.10416666666666667) <= 3.0 * m.se_var);
  }
}

TEST_CASE("mti: hand arithmetic and simplex vertex") {
  const TaskMeta meta{1, 1, 0};  // single row
  std::vector<Tensor> feats{Tensor::of({{1, 1}}), Tensor::of({{2, 2}})};
  std::vector<TaskMeta> metas{meta, meta};

  MixWeights w;
  w.lambda = {0.3, 0.7};
  auto [mix, labels] = mti_interpolate(feats, metas, w);
  CHECK(mix.to_vector()[0] == doctest::Approx(1.7).epsilon(1e-12));
  CHECK(mix.to_vector()[1] == doctest::Approx(1.7).epsilon(1e-12));

  MixWeights vertex;
  vertex.lambda = {1.0, 0.0};
  auto [mv, lv] = mti_interpolate(feats, metas, vertex);
  CHECK(mv.to_vector() == feats[0].to_vector());  // exact
}

TEST_CASE("mti rejects mismatched shapes or episode metadata") {
  const TaskMeta meta{2, 1, 1};
  MixWeights w;
  w.lambda = {0.5, 0.5};
  std::vector<Tensor> feats{Tensor::zeros({4, 3}), Tensor::zeros({4, 2})};
  std::vector<TaskMeta> metas{meta, meta};
  CHECK_THROWS_AS(mti_interpolate(feats, metas, w), ContractError);

  std::vector<Tensor> feats2{Tensor::zeros({4, 3}), Tensor::zeros({4, 3})};
  std::vector<TaskMeta> metas2{meta, TaskMeta{2, 2, 0}};
  CHECK_THROWS_AS(mti_interpolate(feats2, metas2, w), ContractError);
}

TEST_CASE("m=2 dirichlet mixing equals pairwise beta mixing (KS)") {
  const long n = 100000;
  const double a = 0.2;
  Rng rng(77);
  const auto cfg = uniform_config(2, a);
  std::vector<double> dirichlet_draws;
  dirichlet_draws.reserve(n);
  for (long i = 0; i < n; ++i)
    dirichlet_draws.push_back(sample_dirichlet(cfg, rng).lambda[0]);
  const auto beta_draws = theory::sample_beta_johnk(a, a, n, 78);
  CHECK(theory::ks_two_sample(dirichlet_draws, beta_draws) < 0.005);
}

TEST_CASE("task_style_stats: hand values and standardized features") {
  const auto stats = task_style_stats(Tensor::of({{1, 3}, {3, 5}}), 1);
  CHECK(stats.mean.to_vector() == std::vector<double>{2, 4});
  CHECK(stats.var.to_vector() == std::vector<double>{1, 1});

  // standardize then re-measure
  Rng rng(9);
  Tensor x = Tensor::randn({40, 3}, rng);
  auto s0 = task_style_stats(x, 1);
  Tensor z = div_rows(sub_rows(x, s0.mean), sqrt_t(s0.var));
  auto s1 = task_style_stats(z, 1);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(std::fabs(s1.mean.to_vector()[j]) < 1e-12);
    CHECK(s1.var.to_vector()[j] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("stats of an interpolation obey mean linearity") {
  Rng rng(10);
  Tensor a = Tensor::randn({12, 4}, rng);
  Tensor b = Tensor::randn({12, 4}, rng);
  const double lam = 0.37;
  MixWeights w;
  w.lambda = {lam, 1.0 - lam};
  const TaskMeta meta{3, 2, 2};
  auto [mix, labels] = mti_interpolate({a, b}, {meta, meta}, w);
  const auto sm = task_style_stats(mix, 1);
  const auto sa = task_style_stats(a, 1);
  const auto sb = task_style_stats(b, 1);
  for (std::size_t j = 0; j < 4; ++j) {
    const double expect =
        lam * sa.mean.to_vector()[j] + (1 - lam) * sb.mean.to_vector()[j];
    CHECK(sm.mean.to_vector()[j] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("mtst_transfer: identity, exactness at eps=0, degenerate channel") {
  Rng rng(11);
  const TaskMeta meta{2, 2, 2};
  Tensor x = Tensor::randn({8, 3}, rng);
  const auto stats = task_style_stats(x, 2);

  auto [same, labels] = mtst_transfer(x, meta, stats, stats);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(std::fabs(same.to_vector()[i] - x.to_vector()[i]) < 1e-10);

  // eps=0: post-transfer stats equal the target stats to 1e-8
  Tensor y = add_const(Tensor::randn({8, 3}, rng, 2.0), 0.5);
  const auto target = task_style_stats(y, 2);
  auto [moved, l2] = mtst_transfer(x, meta, stats, target, 0.0);
  const auto got = task_style_stats(moved, 2);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(std::fabs(got.mean.to_vector()[j] - target.mean.to_vector()[j]) < 1e-8);
    CHECK(std::fabs(got.var.to_vector()[j] - target.var.to_vector()[j]) < 1e-8);
  }

  // constant channel: eps guards the division, output lands near mu_mix
  Tensor flat = Tensor::of({{2, 1, 0}, {2, 3, 1}, {2, 5, 2}, {2, 7, 3}});
  const auto sflat = task_style_stats(flat, 2);
  CHECK(sflat.var.to_vector()[0] == 0.0);
  auto [guarded, l3] = mtst_transfer(flat, TaskMeta{2, 1, 1}, sflat, target);
  for (std::size_t i = 0; i < guarded.size(); ++i)
    CHECK(std::isfinite(guarded.to_vector()[i]));
  CHECK(guarded.at(0, 0) ==
        doctest::Approx(target.mean.to_vector()[0]).epsilon(0.05));

  CHECK_THROWS_AS(mtst_transfer(x, meta, stats,
                                task_style_stats(Tensor::zeros({4, 7}), 2)),
                  ContractError);
}

TEST_CASE("fm: softplus asymptote gives the identity modulation") {
  Rng rng(13);
  Tensor w = Tensor::full({6}, -40.0);
  const FmDraw draw = sample_fm_noise(6, rng);
  auto [alpha, beta] = fm_sample(w, w, draw);
  for (double v : alpha.to_vector()) CHECK(std::fabs(v) < 1e-15);
  for (double v : beta.to_vector()) CHECK(std::fabs(v) < 1e-15);
}

TEST_CASE("fm: W=0 gives modulation std softplus(0)=ln 2") {
  Rng rng(14);
  Tensor w = Tensor::zeros({1});
  const long n = 300000;
  double sumsq = 0.0;
  for (long i = 0; i < n; ++i) {
    const FmDraw draw = sample_fm_noise(1, rng);
    auto [alpha, beta] = fm_sample(w, w, draw);
    sumsq += alpha.to_vector()[0] * alpha.to_vector()[0];
  }
  const double std_hat = std::sqrt(sumsq / n);
  // se of a std estimate: std / sqrt(2n)
  const double se = std::log(2.0) / std::sqrt(2.0 * n);
  CHECK(std::fabs(std_hat - std::log(2.0)) <= 3.0 * se);
}

TEST_CASE("fm_apply identities and arithmetic") {
  Tensor x = Tensor::of({{1, 2}});
  Tensor zero = Tensor::zeros({2});
  CHECK(fm_apply(x, zero, zero).to_vector() == x.to_vector());

  Tensor one = Tensor::full({2}, 1.0);
  CHECK(fm_apply(x, one, zero).to_vector() == std::vector<double>{2, 4});

  Tensor alpha = Tensor::vec({0.5, -0.5});
  Tensor beta = Tensor::vec({1, 1});
  CHECK(fm_apply(x, alpha, beta).to_vector() == std::vector<double>{2.5, 2.0});
}

TEST_CASE("fm gradient via reparameterization matches finite differences") {
  Rng rng(15);
  const FmDraw draw = sample_fm_noise(4, rng);
  Tensor x = Tensor::randn({6, 4}, rng);
  ParamSet ps;
  ps.add("w_alpha", Tensor::full({4}, 0.3));
  ps.add("w_beta", Tensor::full({4}, -0.2));
  auto f = [&](ParamSet& p) {
    auto [alpha, beta] = fm_sample(p.at("w_alpha"), p.at("w_beta"), draw);
    Tensor out = fm_apply(x, alpha, beta);
    return sum_all(mul(out, out));
  };
  CHECK(finite_diff_check(f, ps).max_rel_err < 1e-5);
}

TEST_CASE("build_augmented_batch: n=4, m=3 yields 5 fresh tasks") {
  Rng rng(16);
  const TaskMeta meta{2, 1, 2};
  std::vector<Tensor> feats;
  std::vector<TaskMeta> metas;
  for (int j = 0; j < 4; ++j) {
    feats.push_back(Tensor::randn({meta.rows(), 5}, rng));
    metas.push_back(meta);
  }
  ParamSet params;
  params.add(fm_alpha_path(1), Tensor::full({5}, -2.0));
  params.add(fm_beta_path(1), Tensor::full({5}, -2.0));

  Options opt;
  opt.m = 3;
  const Plan plan = plan_augment(4, 5, 1, opt, rng);
  const auto batch = build_augmented_batch(feats, metas, params, opt, plan);

  CHECK(batch.tasks.size() == 5);
  CHECK(batch.tasks[0].kind == TaskKind::Interpolated);
  for (std::size_t t = 1; t < 5; ++t) {
    CHECK(batch.tasks[t].kind == TaskKind::Transferred);
    CHECK(batch.tasks[t].source_index == static_cast<int>(t) - 1);
  }
  // label validity: N classes with Ks+Kq members each, class-major blocks
  for (const auto& t : batch.tasks) {
    CHECK(t.labels == canonical_labels(meta));
    CHECK(t.features.shape() == Shape{meta.rows(), 5});
  }
}

TEST_CASE("build_augmented_batch: composed identity and determinism") {
  Rng rng(17);
  const TaskMeta meta{2, 2, 2};
  std::vector<Tensor> feats;
  std::vector<TaskMeta> metas;
  for (int j = 0; j < 3; ++j) {
    feats.push_back(Tensor::randn({meta.rows(), 4}, rng));
    metas.push_back(meta);
  }
  ParamSet params;
  params.add(fm_alpha_path(2), Tensor::full({4}, -40.0));
  params.add(fm_beta_path(2), Tensor::full({4}, -40.0));

  Options opt;
  opt.m = 2;
  opt.fm = false;
  opt.force_identity_stats = true;
  Rng plan_rng(99);
  const Plan plan = plan_augment(3, 4, 2, opt, plan_rng);
  const auto batch = build_augmented_batch(feats, metas, params, opt, plan);
  // interpolated + transferred, transfers collapse to the originals
  CHECK(batch.tasks.size() == 4);
  for (std::size_t t = 1; t < batch.tasks.size(); ++t) {
    const auto& got = batch.tasks[t].features.to_vector();
    const auto& want = feats[t - 1].to_vector();
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(std::fabs(got[i] - want[i]) < 1e-10);
  }

  // fixed plan -> byte-identical output
  const auto batch2 = build_augmented_batch(feats, metas, params, opt, plan);
  for (std::size_t t = 0; t < batch.tasks.size(); ++t)
    CHECK(batch.tasks[t].features.to_vector() ==
          batch2.tasks[t].features.to_vector());
}

TEST_CASE("build_augmented_batch ablation shapes") {
  Rng rng(18);
  const TaskMeta meta{2, 1, 1};
  std::vector<Tensor> feats{Tensor::randn({4, 3}, rng),
                            Tensor::randn({4, 3}, rng),
                            Tensor::randn({4, 3}, rng)};
  std::vector<TaskMeta> metas{meta, meta, meta};
  ParamSet params;
  params.add(fm_alpha_path(1), Tensor::full({3}, -2.0));
  params.add(fm_beta_path(1), Tensor::full({3}, -2.0));

  Options opt;
  opt.m = 2;
  Rng plan_rng(1);
  const Plan plan = plan_augment(3, 3, 1, opt, plan_rng);

  opt.mti = false;
  CHECK(build_augmented_batch(feats, metas, params, opt, plan).tasks.size() == 3);
  opt.mti = true;
  opt.mtst = false;
  CHECK(build_augmented_batch(feats, metas, params, opt, plan).tasks.size() == 1);
  opt.mti = false;
  {
    const auto batch = build_augmented_batch(feats, metas, params, opt, plan);
    CHECK(batch.tasks.size() == 3);
    for (const auto& t : batch.tasks) CHECK(t.kind == TaskKind::Original);
  }
}

TEST_CASE("gradients flow through the full mti->stats->mtst->fm composite") {
  Rng rng(19);
  const TaskMeta meta{2, 1, 1};
  ParamSet ps;
  ps.add("f0", Tensor::randn({4, 3}, rng));
  ps.add("f1", Tensor::randn({4, 3}, rng));
  ps.add("f2", Tensor::randn({4, 3}, rng));
  ps.add(fm_alpha_path(1), Tensor::full({3}, 0.1));
  ps.add(fm_beta_path(1), Tensor::full({3}, 0.1));

  Options opt;
  opt.m = 3;
  Rng plan_rng(7);
  const Plan plan = plan_augment(3, 3, 1, opt, plan_rng);

  auto f = [&](ParamSet& p) {
    std::vector<Tensor> feats{p.at("f0"), p.at("f1"), p.at("f2")};
    std::vector<TaskMeta> metas{meta, meta, meta};
    const auto batch = build_augmented_batch(feats, metas, p, opt, plan);
    Tensor total = Tensor::scalar(0.0);
    for (const auto& t : batch.tasks)
      total = add(total, sum_all(mul(t.features, t.features)));
    return total;
  };
  CHECK(finite_diff_check(f, ps, 1e-6, 60).max_rel_err < 1e-4);
}

TEST_CASE("stopgrad_stats blocks gradient flow through the statistics") {
  Rng rng(20);
  const TaskMeta meta{2, 1, 1};
  ParamSet ps;
  ps.add("f0", Tensor::randn({4, 3}, rng));
  ps.add("f1", Tensor::randn({4, 3}, rng));
  ps.add(fm_alpha_path(1), Tensor::full({3}, -40.0));
  ps.add(fm_beta_path(1), Tensor::full({3}, -40.0));

  Options opt;
  opt.m = 2;
  opt.fm = false;
  Rng plan_rng(3);
  const Plan plan = plan_augment(2, 3, 1, opt, plan_rng);

  auto loss_for = [&](bool stopgrad) {
    opt.stopgrad_stats = stopgrad;
    Tape tape;
    std::vector<Tensor> feats{ps.at("f0"), ps.at("f1")};
    const auto batch =
        build_augmented_batch(feats, {meta, meta}, ps, opt, plan);
    Tensor total = Tensor::scalar(0.0);
    for (const auto& t : batch.tasks)
      total = add(total, sum_all(mul(t.features, t.features)));
    ps.zero_grad();
    tape.backward(total);
    return ps.at("f0").grad_vector();
  };
  const auto g_with = loss_for(false);
  const auto g_stop = loss_for(true);
  CHECK(g_with != g_stop);  // statistics carry gradient by default
}
