#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "sgspen/rewards.hpp"
#include "sgspen/rng.hpp"
#include "sgspen/tasks_data.hpp"
#include "sgspen/trainer.hpp"

using namespace sgspen;

namespace {

ModelDescriptor tiny() {
  ModelDescriptor d;
  d.arch = Architecture::multi_label;
  d.num_features = 6;
  d.num_labels = 5;
  d.feature_hidden = 8;
  d.feature_dim = 6;
  d.global_hidden = 4;
  return d;
}

std::vector<Example> tiny_data(int n, std::uint64_t seed = 1) {
  Rng rng(seed);
  MultiLabelGenOptions opt;
  opt.labels_per_cluster = 2;
  return to_examples(gen_multilabel(n, 6, 5, 3, rng, opt));
}

class ConstantReward final : public RewardFunction {
 public:
  std::string name() const override { return "constant"; }

 protected:
  double evaluate(const Example&, const DiscreteOutput&) const override { return 0.5; }
};

class ZeroReward final : public RewardFunction {
 public:
  std::string name() const override { return "zero"; }

 protected:
  double evaluate(const Example&, const DiscreteOutput&) const override { return 0.0; }
};

TrainConfig small_config() {
  TrainConfig c;
  c.inference_steps = 10;
  c.budget = 20;
  c.batch_size = 4;
  c.epochs = 2;
  return c;
}

LabelSet labels_of(const std::vector<Example>& ex, std::size_t every) {
  LabelSet l;
  for (std::size_t k = 0; k < ex.size(); k += every) l.emplace(ex[k].id, *ex[k].reference);
  return l;
}

}  // namespace

TEST(SgSpenStep, FailedSearchesLeaveOnlyTheRegularizer) {
  Rng rng(1);
  EnergyModel m(tiny(), rng);
  const auto data = tiny_data(8);
  ConstantReward r;
  const auto cfg = small_config();
  const ParamSet before = m.params();
  const auto res = sg_spen_step(m, data, r, cfg, StepContext{3, 1, nullptr});
  EXPECT_DOUBLE_EQ(res.loss, cfg.c * before.squared_norm());
  for (const auto& rec : res.records) {
    EXPECT_EQ(rec.source, PairSource::skipped);
    EXPECT_EQ(rec.queries_used, cfg.budget);
  }
  // w <- w - lambda * 2c w
  ParamSet expected = before;
  expected.scale(1.0 - cfg.lambda * 2.0 * cfg.c);
  for (std::size_t e = 0; e < expected.size(); ++e)
    for (std::size_t j = 0; j < expected.entries()[e].value.size(); ++j)
      EXPECT_NEAR(m.params().entries()[e].value[j], expected.entries()[e].value[j], 1e-15);
}

TEST(SgSpenStep, SatisfiedPairContributesNothing) {
  Rng rng(2);
  EnergyModel m(tiny(), rng);
  const auto data = tiny_data(1);
  const auto& x = data[0].input;
  const DiscreteOutput a(m.space(), {0, 1, 0, 1, 0}), b(m.space(), {1, 1, 0, 0, 0});
  ParamSet g = m.params().zeros_like();
  const double xi = detail::hinge_pair(m, x, a, b, -1e6, g);
  EXPECT_LT(xi, 0.0);
  EXPECT_EQ(g.squared_norm(), 0.0);
}

TEST(SgSpenStep, HingeGradientMatchesFiniteDifferences) {
  Rng rng(3);
  EnergyModel m(tiny(), rng);
  const auto data = tiny_data(1);
  const auto& x = data[0].input;
  const DiscreteOutput lo(m.space(), {0, 1, 0, 1, 0}), hi(m.space(), {1, 1, 0, 0, 1});
  const double margin = 5.0;
  ParamSet g = m.params().zeros_like();
  ASSERT_GT(detail::hinge_pair(m, x, lo, hi, margin, g), 0.0);

  auto loss = [&](const EnergyModel& mm) {
    return std::max(0.0, margin - mm.energy(x, one_hot(lo)) + mm.energy(x, one_hot(hi)));
  };
  EnergyModel probe = m;
  const double eps = 1e-6;
  double worst = 0.0;
  for (std::size_t e = 0; e < probe.params().size(); ++e) {
    const std::size_t n = probe.params().entries()[e].value.size();
    for (std::size_t j = 0; j < n; j += 3) {
      auto& v = probe.mutable_params().entries()[e].value[j];
      const double orig = v;
      v = orig + eps;
      const double up = loss(probe);
      probe.mutable_params().entries()[e].value[j] = orig - eps;
      const double dn = loss(probe);
      probe.mutable_params().entries()[e].value[j] = orig;
      const double fd = (up - dn) / (2 * eps);
      const double an = g.entries()[e].value[j];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3}));
    }
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(SgSpenStep, GradientStepShrinksAViolatedConstraint) {
  Rng rng(4);
  EnergyModel m(tiny(), rng);
  const auto data = tiny_data(20);
  std::uniform_int_distribution<int> bit(0, 1);
  int checked = 0;
  for (const auto& ex : data) {
    std::vector<int> s1(5), s2(5);
    for (auto& v : s1) v = bit(rng);
    for (auto& v : s2) v = bit(rng);
    const DiscreteOutput lo(m.space(), s1), hi(m.space(), s2);
    if (lo == hi) continue;
    ParamSet g = m.params().zeros_like();
    const double xi = detail::hinge_pair(m, ex.input, lo, hi, 50.0, g);
    ASSERT_GT(xi, 0.0);
    EnergyModel stepped = m;
    stepped.mutable_params().axpy(-1e-4, g);
    ParamSet unused = m.params().zeros_like();
    EXPECT_LT(detail::hinge_pair(stepped, ex.input, lo, hi, 50.0, unused), xi);
    ++checked;
  }
  EXPECT_GT(checked, 10);
}

TEST(RSpenStep, AtMostStepsMinusOnePairsPerExample) {
  Rng rng(5);
  EnergyModel m(tiny(), rng);
  const auto data = tiny_data(10);
  F1Reward r;
  TrainConfig cfg = small_config();
  cfg.inference_steps = 10;
  cfg.eta = 3.0;  // noisy trajectories with many distinct points
  const auto res = r_spen_step(m, data, r, cfg, StepContext{1, 1, nullptr});
  std::map<std::size_t, int> per_example;
  for (const auto& rec : res.records) {
    EXPECT_EQ(rec.source, PairSource::trajectory);
    EXPECT_TRUE(rec.informative);
    EXPECT_LT(rec.reward_lo, rec.reward_hi);
    ++per_example[rec.example_id];
  }
  EXPECT_FALSE(per_example.empty());
  for (const auto& [id, n] : per_example) EXPECT_LE(n, 9);
}

TEST(DvnStep, ZeroModelWithZeroRewardHasZeroLoss) {
  Rng rng(6);
  EnergyModel m(tiny(), rng);
  m.mutable_params().scale(0.0);
  const auto data = tiny_data(5);
  ZeroReward r;
  TrainConfig cfg = small_config();
  cfg.c = 0.0;
  const auto res = dvn_step(m, data, r, cfg, StepContext{1, 1, nullptr});
  EXPECT_EQ(res.loss, 0.0);
  EXPECT_EQ(m.params().squared_norm(), 0.0);
  EXPECT_EQ(res.records.size(), 5u);
}

TEST(DvnStep, SignSelectsTheTarget) {
  Rng rng(6);
  EnergyModel m(tiny(), rng);
  m.mutable_params().scale(0.0);
  const auto data = tiny_data(1);
  ConstantReward r;
  TrainConfig cfg = small_config();
  cfg.c = 0.0;
  cfg.alpha = 10.0;
  EnergyModel lit = m;
  const auto corrected = dvn_step(m, data, r, cfg, StepContext{1, 1, nullptr});
  EXPECT_DOUBLE_EQ(corrected.records[0].xi, 5.0);  // E - (-alpha R)
  cfg.dvn_sign = DvnSign::literal;
  const auto literal = dvn_step(lit, data, r, cfg, StepContext{1, 1, nullptr});
  EXPECT_DOUBLE_EQ(literal.records[0].xi, -5.0);
}

TEST(SemiSupervised, FullLabelsReplaceSearch) {
  Rng rng(7);
  EnergyModel m(tiny(), rng);
  const auto data = tiny_data(12);
  F1Reward r;
  const auto cfg = small_config();
  const auto step = semi_supervised_wrap(sg_spen_step, labels_of(data, 1));
  const auto res = step(m, data, r, cfg, StepContext{1, 1, nullptr});
  for (const auto& rec : res.records) {
    EXPECT_EQ(rec.source, PairSource::label);
    EXPECT_EQ(rec.queries_used, 0);
    EXPECT_DOUBLE_EQ(rec.reward_hi, 1.0);
  }
  // Two reward queries per example: the sample and the label.
  EXPECT_EQ(r.queries(), 24u);
}

TEST(SemiSupervised, NoLabelsIsTheUnwrappedStep) {
  Rng a(8);
  EnergyModel m1(tiny(), a);
  EnergyModel m2 = m1;
  const auto data = tiny_data(12);
  F1Reward r;
  const auto cfg = small_config();
  const auto s1 = sg_spen_step(m1, data, r, cfg, StepContext{1, 4, nullptr});
  const auto s2 = semi_supervised_wrap(sg_spen_step, {})(m2, data, r, cfg, StepContext{1, 4, nullptr});
  EXPECT_EQ(s1.loss, s2.loss);
  EXPECT_TRUE(m1.params() == m2.params());
}

TEST(SemiSupervised, MixedLabelsOnlyAffectLabelledExamples) {
  Rng a(9);
  EnergyModel m(tiny(), a);
  const auto data = tiny_data(12);
  F1Reward r;
  const auto cfg = small_config();
  const auto labels = labels_of(data, 3);
  for (auto alg : {Algorithm::sg_spen, Algorithm::r_spen, Algorithm::dvn}) {
    EnergyModel mm = m;
    const auto res = semi_supervised_wrap(make_step(alg), labels)(mm, data, r, cfg, StepContext{1, 1, nullptr});
    for (const auto& rec : res.records) {
      if (rec.source == PairSource::label) EXPECT_TRUE(labels.count(rec.example_id)) << to_string(alg);
      if (!labels.count(rec.example_id)) EXPECT_NE(rec.source, PairSource::label) << to_string(alg);
    }
  }
}

TEST(SemiSupervised, LabelSpaceMustMatch) {
  Rng a(1);
  EnergyModel m(tiny(), a);
  const auto data = tiny_data(2);
  F1Reward r;
  LabelSet bad{{0, DiscreteOutput(OutputSpace::uniform(3, 2), {0, 1, 0})}};
  EXPECT_THROW(semi_supervised_wrap(sg_spen_step, bad)(m, data, r, small_config(), StepContext{}), DataError);
}

TEST(Train, ZeroEpochsChangesNothing) {
  Rng a(10);
  EnergyModel m(tiny(), a);
  const ParamSet before = m.params();
  const auto data = tiny_data(8);
  F1Reward r;
  auto cfg = small_config();
  cfg.epochs = 0;
  const auto h = train(m, data, data, r, cfg);
  EXPECT_TRUE(h.epochs.empty());
  EXPECT_TRUE(m.params() == before);
}

TEST(Train, RunsAreDeterministicAndLogged) {
  const auto data = tiny_data(20);
  const auto eval = tiny_data(6, 2);
  F1Reward r;
  auto cfg = small_config();
  cfg.epochs = 3;
  for (auto alg : {Algorithm::sg_spen, Algorithm::r_spen, Algorithm::dvn}) {
    cfg.algorithm = alg;
    if (alg == Algorithm::dvn) cfg.lambda = 1e-5;
    Rng a(11), b(11);
    EnergyModel m1(tiny(), a), m2(tiny(), b);
    int callbacks = 0;
    TrainHooks hooks;
    hooks.on_epoch_end = [&](const EpochStats&, const EnergyModel&) { ++callbacks; };
    const auto h1 = train(m1, data, eval, r, cfg, hooks);
    const auto h2 = train(m2, data, eval, r, cfg);
    EXPECT_TRUE(m1.params() == m2.params()) << to_string(alg);
    EXPECT_EQ(callbacks, 3);
    ASSERT_EQ(h1.epochs.size(), 3u);
    EXPECT_EQ(h1.steps.size(), 15u);  // 5 batches of 4 per epoch
    std::stringstream s1, s2;
    write_metrics_csv(s1, h1);
    write_metrics_csv(s2, h2);
    EXPECT_EQ(s1.str(), s2.str());
    EXPECT_EQ(s1.str().substr(0, s1.str().find('\n')), "epoch,loss,train_reward,eval_reward,constraints,mean_budget");
  }
}

TEST(Train, RejectsBadConfigurationAndEmptyData) {
  Rng a(12);
  EnergyModel m(tiny(), a);
  const auto data = tiny_data(4);
  F1Reward r;
  auto cfg = small_config();
  EXPECT_THROW(train(m, {}, data, r, cfg), DataError);
  cfg.alpha = 1.0;
  EXPECT_THROW(train(m, data, data, r, cfg), ConfigError);
  cfg = small_config();
  cfg.sigma = -0.5;
  EXPECT_THROW(train(m, data, data, r, cfg), ConfigError);
  cfg = small_config();
  cfg.batch_size = 0;
  EXPECT_THROW(train(m, data, data, r, cfg), ConfigError);
  EXPECT_THROW(parse_algorithm("adam"), ConfigError);
}

TEST(Train, DivergenceIsANumericError) {
  Rng a(13);
  EnergyModel m(tiny(), a);
  const auto data = tiny_data(8);
  F1Reward r;
  auto cfg = small_config();
  cfg.algorithm = Algorithm::dvn;
  cfg.alpha = 1e200;
  cfg.lambda = 1e200;
  EXPECT_THROW(train(m, data, data, r, cfg), NumericError);
}

TEST(Train, EmptyEvalSetReportsNaN) {
  Rng a(14);
  EnergyModel m(tiny(), a);
  const auto data = tiny_data(4);
  F1Reward r;
  auto cfg = small_config();
  cfg.epochs = 1;
  const auto h = train(m, data, {}, r, cfg);
  EXPECT_TRUE(std::isnan(h.epochs[0].eval_reward));
}
