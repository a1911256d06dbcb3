#include <gtest/gtest.h>

#include <functional>
#include <map>

#include "sgspen/beam_baseline.hpp"
#include "sgspen/rng.hpp"

using namespace sgspen;

namespace {

class TableReward final : public RewardFunction {
 public:
  explicit TableReward(std::map<std::vector<int>, double> t) : t_(std::move(t)) {}
  std::string name() const override { return "table"; }

 protected:
  double evaluate(const Example&, const DiscreteOutput& y) const override { return t_.at(y.states); }

 private:
  std::map<std::vector<int>, double> t_;
};

const Example kExample{0, FeatureVector{}, std::nullopt};

std::map<std::vector<int>, double> random_table(int L, int K, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::map<std::vector<int>, double> t;
  std::vector<int> s(static_cast<std::size_t>(L), 0);
  while (true) {
    t[s] = u(rng);
    int i = 0;
    while (i < L && ++s[static_cast<std::size_t>(i)] == K) s[static_cast<std::size_t>(i++)] = 0;
    if (i == L) break;
  }
  return t;
}

}  // namespace

TEST(Beam, SingleVariableFindsArgmax) {
  TableReward r({{{0}, 0.2}, {{1}, 0.9}, {{2}, 0.4}, {{3}, 0.1}});
  Rng rng(1);
  const auto res = iterative_beam_search(r, kExample, OutputSpace({4}), BeamConfig{1, 1, 2, 100}, rng);
  EXPECT_EQ(res.best.states, std::vector<int>{1});
  EXPECT_DOUBLE_EQ(res.best_reward, 0.9);
}

TEST(Beam, WideBeamMatchesBruteForce) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const auto table = random_table(3, 3, rng);
    double best = -1;
    for (const auto& [s, v] : table) best = std::max(best, v);
    TableReward r(table);
    const auto res = iterative_beam_search(r, kExample, OutputSpace::uniform(3, 3), BeamConfig{27, 1, 2, 100}, rng);
    EXPECT_DOUBLE_EQ(res.best_reward, best);
    EXPECT_DOUBLE_EQ(table.at(res.best.states), best);
  }
}

TEST(Beam, BestOfBeamNeverDecreasesWithinARestart) {
  Rng rng(9);
  const auto table = random_table(4, 3, rng);
  TableReward r(table);
  const auto res = iterative_beam_search(r, kExample, OutputSpace::uniform(4, 3), BeamConfig{2, 1, 3, 100}, rng);
  ASSERT_FALSE(res.best_per_iteration.empty());
  EXPECT_GE(res.best_per_iteration.front(), res.initial_rewards.front());
  for (std::size_t i = 1; i < res.best_per_iteration.size(); ++i)
    EXPECT_GE(res.best_per_iteration[i], res.best_per_iteration[i - 1]);
  EXPECT_EQ(res.reward_queries, r.queries());
}

TEST(Beam, StopsAfterStallRoundsAndIsDeterministic) {
  TableReward r({{{0, 0}, 0.1}, {{0, 1}, 0.2}, {{1, 0}, 0.3}, {{1, 1}, 0.4}});
  Rng a(3), b(3);
  const BeamConfig cfg{1, 2, 4, 1000};
  const auto x = iterative_beam_search(r, kExample, OutputSpace::uniform(2, 2), cfg, a);
  const auto y = iterative_beam_search(r, kExample, OutputSpace::uniform(2, 2), cfg, b);
  EXPECT_EQ(x.best_per_iteration, y.best_per_iteration);
  EXPECT_EQ(x.best.states, (std::vector<int>{1, 1}));
  // At most 2 improving moves, then 4 unchanged rounds, per restart.
  EXPECT_LE(x.best_per_iteration.size(), 2u * 6u);
  EXPECT_GE(x.best_per_iteration.size(), 2u * 4u);
}

TEST(Beam, ConfigValidation) {
  TableReward r({{{0}, 0.0}, {{1}, 1.0}});
  Rng rng(1);
  EXPECT_THROW(iterative_beam_search(r, kExample, OutputSpace({2}), BeamConfig{0, 1, 1, 1}, rng), ConfigError);
  EXPECT_THROW(iterative_beam_search(r, kExample, OutputSpace({2}), BeamConfig{1, 0, 1, 1}, rng), ConfigError);
}
