#include <gtest/gtest.h>

#include <sstream>

#include "sgspen/errors.hpp"
#include "sgspen/rng.hpp"
#include "sgspen/structured_output.hpp"

using namespace sgspen;

TEST(OutputSpace, RejectsDegenerateSpaces) {
  EXPECT_THROW(OutputSpace(std::vector<int>{}), DataError);
  EXPECT_THROW(OutputSpace({3, 1}), DataError);
  const OutputSpace s({2, 3});
  EXPECT_EQ(s.num_vars(), 2u);
  EXPECT_EQ(s.total_states(), 5u);
}

TEST(Round, ArgmaxPerVariable) {
  const OutputSpace s({2, 2});
  const RelaxedOutput y{s, {{0.9, 0.1}, {0.2, 0.8}}};
  EXPECT_EQ(round(y).states, (std::vector<int>{0, 1}));
}

TEST(Round, TiesGoToLowestIndex) {
  const RelaxedOutput y{OutputSpace({2}), {{0.5, 0.5}}};
  EXPECT_EQ(round(y).states, std::vector<int>{0});
  const RelaxedOutput z{OutputSpace({3}), {{0.2, 0.4, 0.4}}};
  EXPECT_EQ(round(z).states, std::vector<int>{1});
}

TEST(Round, InvariantToPositiveRescaling) {
  Rng rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const OutputSpace s({4, 2, 5});
  for (int t = 0; t < 200; ++t) {
    RelaxedOutput y{s, {}};
    RelaxedOutput z{s, {}};
    for (std::size_t i = 0; i < s.num_vars(); ++i) {
      std::vector<double> d(static_cast<std::size_t>(s.num_states(i)));
      for (auto& v : d) v = u(rng);
      const double c = 0.1 + 10 * u(rng);
      std::vector<double> e = d;
      for (auto& v : e) v *= c;
      y.dists.push_back(d);
      z.dists.push_back(e);
    }
    EXPECT_EQ(round(y), round(z));
  }
}

TEST(OneHot, EncodesTheVertex) {
  const DiscreteOutput d(OutputSpace({3}), {1});
  const auto y = one_hot(d);
  EXPECT_EQ(y.dists[0], (std::vector<double>{0, 1, 0}));
  EXPECT_TRUE(y.is_valid());
  EXPECT_EQ(y.space, d.space);
}

TEST(OneHot, RoundTripsThroughRound) {
  Rng rng(21);
  const OutputSpace s({2, 7, 3, 30, 2});
  for (int t = 0; t < 1000; ++t) {
    std::vector<int> st;
    for (std::size_t i = 0; i < s.num_vars(); ++i)
      st.push_back(std::uniform_int_distribution<int>(0, s.num_states(i) - 1)(rng));
    const DiscreteOutput d(s, st);
    EXPECT_EQ(round(one_hot(d)), d);
  }
}

TEST(UniformLogits, ZeroLogitsGiveUniformAndRoundToZero) {
  const OutputSpace s({2, 3});
  const auto l = uniform_logits(s);
  EXPECT_EQ(l.values[0], (std::vector<double>{0, 0}));
  EXPECT_EQ(l.values[1], (std::vector<double>{0, 0, 0}));
  const auto y = softmax(l);
  EXPECT_DOUBLE_EQ(y.dists[0][1], 0.5);
  EXPECT_DOUBLE_EQ(y.dists[1][2], 1.0 / 3.0);
  EXPECT_EQ(round(y).states, (std::vector<int>{0, 0}));
}

TEST(DiscreteOutput, BoundsChecked) {
  EXPECT_THROW(DiscreteOutput(OutputSpace({2, 2}), {0, 2}), DataError);
  EXPECT_THROW(DiscreteOutput(OutputSpace({2, 2}), {0}), DataError);
}

TEST(RelaxedOutput, ValidityChecksSimplex) {
  const OutputSpace s({2});
  EXPECT_TRUE((RelaxedOutput{s, {{0.3, 0.7}}}.is_valid()));
  EXPECT_FALSE((RelaxedOutput{s, {{0.3, 0.6}}}.is_valid()));
  EXPECT_FALSE((RelaxedOutput{s, {{-0.1, 1.1}}}.is_valid()));
  EXPECT_FALSE((RelaxedOutput{s, {{1.0}}}.is_valid()));
}

TEST(DiscreteText, RoundTripAndLineNumberedErrors) {
  const OutputSpace s({3, 3, 3});
  std::stringstream ss;
  write_discrete_line(ss, DiscreteOutput(s, {0, 2, 1}));
  write_discrete_line(ss, DiscreteOutput(s, {2, 2, 2}));
  const auto back = read_discrete_outputs(ss, s);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].states, (std::vector<int>{0, 2, 1}));

  std::stringstream bad("0 1 2\n0 x 1\n");
  try {
    read_discrete_outputs(bad, s);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}
