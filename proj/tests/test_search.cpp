#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "sgspen/rng.hpp"
#include "sgspen/search.hpp"

using namespace sgspen;

namespace {

class LambdaReward final : public RewardFunction {
 public:
  explicit LambdaReward(std::function<double(const DiscreteOutput&)> f) : f_(std::move(f)) {}
  std::string name() const override { return "lambda"; }

 protected:
  double evaluate(const Example&, const DiscreteOutput& y) const override { return f_(y); }

 private:
  std::function<double(const DiscreteOutput&)> f_;
};

const Example kExample{0, FeatureVector{}, std::nullopt};

// One variable with ten states: start at 0 scores 0.5, state 1 scores 1,
// everything else 0. Each proposal succeeds with probability 1/9.
LambdaReward needle() {
  return LambdaReward([](const DiscreteOutput& y) { return y[0] == 0 ? 0.5 : (y[0] == 1 ? 1.0 : 0.0); });
}

}  // namespace

TEST(Search, BudgetOneOnlyScoresTheStart) {
  auto r = needle();
  const DiscreteOutput start(OutputSpace({10}), {0});
  Rng rng(1);
  const auto out = truncated_search(r, kExample, start, SearchConfig{0.01, 1}, rng);
  EXPECT_FALSE(out.result);
  EXPECT_EQ(out.queries_used, 1);
  EXPECT_EQ(r.queries(), 1u);
  EXPECT_DOUBLE_EQ(out.start_reward, 0.5);
}

TEST(Search, PerfectStartCannotBeBeaten) {
  LambdaReward r([](const DiscreteOutput& y) { return y[0] == 0 ? 1.0 : 0.3; });
  const DiscreteOutput start(OutputSpace({3, 3}), {0, 0});
  Rng rng(2);
  const auto out = truncated_search(r, kExample, start, SearchConfig{0.01, 50}, rng);
  EXPECT_FALSE(out.result);
  EXPECT_EQ(out.queries_used, 50);
  EXPECT_EQ(r.queries(), 50u);
}

TEST(Search, SuccessProbabilityMatchesClosedForm) {
  const DiscreteOutput start(OutputSpace({10}), {0});
  const int budget = 10;
  const int trials = 4000;
  auto r = needle();
  int wins = 0;
  for (int t = 0; t < trials; ++t) {
    Rng rng = make_rng(7, "search", static_cast<std::uint64_t>(t));
    const auto out = truncated_search(r, kExample, start, SearchConfig{0.01, budget}, rng);
    if (out.result) {
      ++wins;
      EXPECT_EQ((*out.result)[0], 1);
      EXPECT_LE(out.queries_used, budget);
    }
  }
  const double expected = 1.0 - std::pow(8.0 / 9.0, budget - 1);  // about 0.654
  EXPECT_NEAR(static_cast<double>(wins) / trials, expected, 0.03);
}

TEST(Search, ResultBeatsStartByMoreThanDelta) {
  // Reward = fraction of ones over 6 binary variables.
  LambdaReward r([](const DiscreteOutput& y) {
    double s = 0;
    for (int v : y.states) s += v;
    return s / 6.0;
  });
  const DiscreteOutput start(OutputSpace::uniform(6, 2), {1, 0, 0, 1, 0, 0});
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto out = truncated_search(r, kExample, start, SearchConfig{0.2, 100}, rng);
    ASSERT_TRUE(out.result);
    EXPECT_GT(r(kExample, *out.result), out.start_reward + 0.2);
  }
}

TEST(Search, RevertModeUndoesWorseningProposals) {
  // Reward 0.5 at the start, 0 elsewhere: every proposal is undone, so each
  // one is a single-variable change from the start.
  const DiscreteOutput start(OutputSpace::uniform(4, 3), {1, 1, 1, 1});
  std::vector<DiscreteOutput> seen;
  LambdaReward r([&](const DiscreteOutput& y) {
    seen.push_back(y);
    return y == start ? 0.5 : 0.0;
  });
  Rng rng(3);
  truncated_search(r, kExample, start, SearchConfig{0.01, 40}, rng);
  ASSERT_EQ(seen.size(), 40u);
  for (std::size_t k = 1; k < seen.size(); ++k) {
    int diff = 0;
    for (std::size_t i = 0; i < 4; ++i) diff += seen[k][i] != start[i];
    EXPECT_EQ(diff, 1);
  }
}

TEST(Search, ContractAndConfigErrors) {
  LambdaReward bad([](const DiscreteOutput&) { return 1.5; });
  const DiscreteOutput start(OutputSpace({2}), {0});
  Rng rng(1);
  EXPECT_THROW(truncated_search(bad, kExample, start, SearchConfig{}, rng), ContractError);
  auto r = needle();
  EXPECT_THROW(truncated_search(r, kExample, start, SearchConfig{0.0, 10}, rng), ConfigError);
  EXPECT_THROW(truncated_search(r, kExample, start, SearchConfig{0.1, 0}, rng), ConfigError);
}

TEST(Search, DeterministicGivenSeed) {
  LambdaReward r([](const DiscreteOutput& y) { return (y[0] + y[1]) / 8.0; });
  const DiscreteOutput start(OutputSpace({5, 5}), {0, 0});
  Rng a(11), b(11);
  const auto x = truncated_search(r, kExample, start, SearchConfig{0.3, 30}, a);
  const auto y = truncated_search(r, kExample, start, SearchConfig{0.3, 30}, b);
  EXPECT_EQ(x.queries_used, y.queries_used);
  EXPECT_EQ(x.result, y.result);
}
