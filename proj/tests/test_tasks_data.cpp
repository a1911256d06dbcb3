#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "sgspen/rewards.hpp"
#include "sgspen/rng.hpp"
#include "sgspen/tasks_data.hpp"

using namespace sgspen;

TEST(MultiLabelGen, NoiselessDisjointClustersHaveExactLabelSets) {
  Rng rng(1);
  MultiLabelGenOptions opt;
  opt.labels_per_cluster = 3;
  opt.label_noise = 0.0;
  opt.disjoint = true;
  const auto ds = gen_multilabel(200, 10, 6, 2, rng, opt);
  std::map<int, std::vector<int>> sets;
  for (const auto& it : ds.items) {
    ASSERT_EQ(it.labels.size(), 3u);
    auto [pos, fresh] = sets.emplace(it.cluster, it.labels);
    if (!fresh) EXPECT_EQ(pos->second, it.labels);
  }
  ASSERT_EQ(sets.size(), 2u);
  const auto& a = sets[0];
  const auto& b = sets[1];
  std::vector<int> both = a;
  both.insert(both.end(), b.begin(), b.end());
  std::sort(both.begin(), both.end());
  EXPECT_EQ(std::set<int>(both.begin(), both.end()).size(), 6u);
  // Disjoint sets of size k: F1 0 against each other, 2k / 3k against the union.
  EXPECT_DOUBLE_EQ(f1_score(a, b), 0.0);
  EXPECT_DOUBLE_EQ(f1_score(a, both), 2.0 / 3.0);
}

TEST(MultiLabelGen, LabelNoiseFlipsAboutTheRequestedFraction) {
  Rng rng(2);
  MultiLabelGenOptions opt;
  opt.labels_per_cluster = 0;
  opt.label_noise = 0.1;
  const auto ds = gen_multilabel(2000, 3, 20, 1, rng, opt);
  std::size_t on = 0;
  for (const auto& it : ds.items) on += it.labels.size();
  EXPECT_NEAR(static_cast<double>(on) / (2000.0 * 20.0), 0.1, 0.01);
}

TEST(MultiLabelGen, RejectsBadSizes) {
  Rng rng(1);
  EXPECT_THROW(gen_multilabel(0, 3, 3, 1, rng), ConfigError);
  MultiLabelGenOptions opt;
  opt.labels_per_cluster = 3;
  opt.disjoint = true;
  EXPECT_THROW(gen_multilabel(10, 3, 5, 2, rng, opt), ConfigError);
}

TEST(SparseFormat, RoundTripAndExamples) {
  Rng rng(3);
  const auto ds = gen_multilabel(30, 6, 5, 3, rng);
  std::stringstream ss;
  write_sparse_multilabel(ss, ds);
  const auto back = load_sparse_multilabel(ss, 6, 5);
  ASSERT_EQ(back.items.size(), ds.items.size());
  for (std::size_t k = 0; k < ds.items.size(); ++k) {
    EXPECT_EQ(back.items[k].features, ds.items[k].features);
    EXPECT_EQ(back.items[k].labels, ds.items[k].labels);
  }
  const auto ex = to_examples(back, 100);
  EXPECT_EQ(ex[3].id, 103u);
  EXPECT_EQ(label_set(*ex[3].reference), ds.items[3].labels);
}

TEST(SparseFormat, InfersSizesAndDeduplicatesLabels) {
  std::istringstream is("0:1.5 4:-2 | 2 2 0\n\n1:3 |\n");
  const auto ds = load_sparse_multilabel(is);
  EXPECT_EQ(ds.num_features, 5);
  EXPECT_EQ(ds.num_labels, 3);
  ASSERT_EQ(ds.items.size(), 2u);
  EXPECT_EQ(ds.items[0].features, (FeatureVector{1.5, 0, 0, 0, -2}));
  EXPECT_EQ(ds.items[0].labels, (std::vector<int>{0, 2}));
  EXPECT_TRUE(ds.items[1].labels.empty());
}

TEST(SparseFormat, ErrorsNameTheLine) {
  for (const std::string bad : {"0:1 | 1\n1:2 3\n", "0:1 | 1\n1:x | 2\n", "0:1 | 1\n0:1 0:2 | 1\n",
                                "0:1 | 1\n1:1 | a\n", "0:1 | 1\n-1:2 | 0\n"}) {
    std::istringstream is(bad);
    try {
      load_sparse_multilabel(is);
      ADD_FAILURE() << bad;
    } catch (const DataError& e) {
      EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    }
  }
}

TEST(Tagging, GoldTagsSatisfyTheRules) {
  const auto rules = default_rules(4, 30);
  Rng rng(4);
  const auto ds = gen_tagging(300, 30, 12, rules, rng);
  std::uniform_int_distribution<int> any_tag(0, 3);
  double gold = 0.0, random = 0.0;
  for (const auto& it : ds.items) {
    ASSERT_EQ(it.tokens.size(), 12u);
    gold += rule_reward(rules, it.tokens, it.tags);
    std::vector<int> guess(it.tags.size());
    for (auto& g : guess) g = any_tag(rng);
    random += rule_reward(rules, it.tokens, guess);
  }
  gold /= 300.0;
  random /= 300.0;
  EXPECT_GE(gold, 0.99);
  EXPECT_LT(random, gold - 0.2);
}

TEST(Tagging, FilesRoundTripAndValidate) {
  const auto rules = default_rules(3, 10);
  Rng rng(5);
  const auto ds = gen_tagging(10, 10, 6, rules, rng);
  std::stringstream toks, tags;
  write_tagging(toks, tags, ds);
  const auto back = read_tagging(toks, tags, 10, 3);
  ASSERT_EQ(back.items.size(), 10u);
  EXPECT_EQ(back.max_len, 6);
  for (std::size_t k = 0; k < 10; ++k) {
    EXPECT_EQ(back.items[k].tokens, ds.items[k].tokens);
    EXPECT_EQ(back.items[k].tags, ds.items[k].tags);
  }
  std::istringstream t1("1 2\n3 4\n"), g1("1 1\n");
  EXPECT_THROW(read_tagging(t1, g1, 10, 3), DataError);
  std::istringstream t2("1 12\n"), g2("1 1\n");
  EXPECT_THROW(read_tagging(t2, g2, 10, 3), DataError);
  std::istringstream t3("1 2\n"), g3("1 5\n");
  EXPECT_THROW(read_tagging(t3, g3, 10, 3), DataError);
}

TEST(Split, SizesAndDisjointness) {
  EXPECT_EQ(split_sizes(2000, {0.7, 0.15, 0.15}), (std::vector<std::size_t>{1400, 300, 300}));
  EXPECT_EQ(split_sizes(10, {1.0 / 3, 1.0 / 3, 1.0 / 3}), (std::vector<std::size_t>{4, 3, 3}));
  EXPECT_THROW(split_sizes(10, {0.5, 0.6}), ConfigError);

  std::vector<int> items(2000);
  std::iota(items.begin(), items.end(), 0);
  Rng a(6), b(6);
  const auto parts = split(items, {0.7, 0.15, 0.15}, a);
  EXPECT_EQ(parts, split(items, {0.7, 0.15, 0.15}, b));
  std::set<int> all;
  std::size_t total = 0;
  for (const auto& p : parts) {
    all.insert(p.begin(), p.end());
    total += p.size();
  }
  EXPECT_EQ(total, 2000u);
  EXPECT_EQ(all.size(), 2000u);
}

TEST(Split, EmptySplitOnlyWarns) {
  std::vector<int> items{1, 2};
  Rng rng(1);
  const auto parts = split(items, {1.0, 0.0}, rng);
  EXPECT_EQ(parts[0].size(), 2u);
  EXPECT_TRUE(parts[1].empty());
}
