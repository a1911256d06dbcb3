#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "sgspen/energy_models.hpp"
#include "sgspen/errors.hpp"
#include "sgspen/shapes_dsl.hpp"
#include "sgspen/structured_output.hpp"

namespace sgspen {

/// One input plus, optionally, its true output. The reference is read only
/// by oracle rewards and by evaluation, never by training code (except
/// through an explicit semi-supervised label set).
struct Example {
  std::size_t id = 0;
  InputInstance input;
  std::optional<DiscreteOutput> reference;
};

/// Black-box R(x, y) in [0, 1] with a query counter.
class RewardFunction {
 public:
  virtual ~RewardFunction() = default;

  double operator()(const Example& ex, const DiscreteOutput& y) const {
    queries_.fetch_add(1, std::memory_order_relaxed);
    return evaluate(ex, y);
  }

  std::uint64_t queries() const { return queries_.load(std::memory_order_relaxed); }
  void reset_queries() { queries_.store(0, std::memory_order_relaxed); }

  virtual std::string name() const = 0;

 protected:
  virtual double evaluate(const Example& ex, const DiscreteOutput& y) const = 0;

 private:
  mutable std::atomic<std::uint64_t> queries_{0};
};

// ---- F1 ---------------------------------------------------------------------

/// 2|T & P| / (|T| + |P|); 1 when both sets are empty. Inputs are sorted
/// label-id lists.
inline double f1_score(const std::vector<int>& truth, const std::vector<int>& pred) {
  if (truth.empty() && pred.empty()) return 1.0;
  std::vector<int> common;
  std::set_intersection(truth.begin(), truth.end(), pred.begin(), pred.end(), std::back_inserter(common));
  return 2.0 * static_cast<double>(common.size()) / static_cast<double>(truth.size() + pred.size());
}

/// Labels present (state 1) in a binary multi-label output.
inline std::vector<int> label_set(const DiscreteOutput& y) {
  std::vector<int> s;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y.states[i] == 1) s.push_back(static_cast<int>(i));
  return s;
}

inline double f1_reward(const std::vector<int>& truth, const DiscreteOutput& pred) {
  for (int k : pred.space.states())
    if (k != 2) throw DataError("f1_reward: prediction must be over binary variables");
  std::vector<int> t = truth;
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return f1_score(t, label_set(pred));
}

/// Oracle reward: F1 against the example's reference label set.
class F1Reward final : public RewardFunction {
 public:
  std::string name() const override { return "f1"; }

 protected:
  double evaluate(const Example& ex, const DiscreteOutput& y) const override {
    if (!ex.reference) throw DataError("f1 reward: example " + std::to_string(ex.id) + " has no reference labels");
    return f1_reward(label_set(*ex.reference), y);
  }
};

// ---- rule-based tagging -------------------------------------------------------

/// Tag 0 is reserved for padding; token id 0 is the pad token.
inline constexpr int kPadToken = 0;
inline constexpr int kPadTag = 0;

struct Rule {
  enum class Kind { token_pattern, span_contiguity, order };
  Kind kind;
  double weight = 1.0;
  // token_pattern: tokens in [lo, hi] should carry tag_a.
  int lo = 0, hi = 0;
  int tag_a = 0;
  // order: every tag_a precedes every tag_b.
  int tag_b = 0;
};

/// Weighted rules over a tag set of num_tags ids (0 = pad). Weights are
/// normalized to sum to 1.
class RuleSet {
 public:
  RuleSet(std::vector<Rule> rules, int num_tags) : rules_(std::move(rules)), num_tags_(num_tags) {
    if (rules_.empty()) throw ConfigError("rule set: no rules (weights cannot be normalized)");
    if (num_tags_ < 2) throw ConfigError("rule set: need at least one non-pad tag");
    double total = 0.0;
    for (const auto& r : rules_) {
      if (!(r.weight > 0)) throw ConfigError("rule set: weights must be positive");
      check_tag(r.tag_a);
      if (r.kind == Rule::Kind::order) check_tag(r.tag_b);
      if (r.kind == Rule::Kind::token_pattern && (r.lo < 1 || r.hi < r.lo))
        throw ConfigError("rule set: bad token range [" + std::to_string(r.lo) + ", " + std::to_string(r.hi) + "]");
      total += r.weight;
    }
    for (auto& r : rules_) r.weight /= total;
  }

  const std::vector<Rule>& rules() const { return rules_; }
  int num_tags() const { return num_tags_; }

  /// Format: "tags N" once, then one rule per line:
  ///   token_pattern <weight> <lo> <hi> <tag>
  ///   span_contiguity <weight> <tag>
  ///   order <weight> <tag_before> <tag_after>
  /// '#' starts a comment.
  static RuleSet parse(std::istream& is) {
    std::vector<Rule> rules;
    int num_tags = -1;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      std::istringstream ls(line);
      std::string kind;
      if (!(ls >> kind)) continue;
      auto fail = [&](const std::string& why) {
        return ConfigError("rule file line " + std::to_string(lineno) + ": " + why);
      };
      Rule r{};
      bool ok = true;
      if (kind == "tags") {
        ok = static_cast<bool>(ls >> num_tags);
      } else if (kind == "token_pattern") {
        r.kind = Rule::Kind::token_pattern;
        ok = static_cast<bool>(ls >> r.weight >> r.lo >> r.hi >> r.tag_a);
      } else if (kind == "span_contiguity") {
        r.kind = Rule::Kind::span_contiguity;
        ok = static_cast<bool>(ls >> r.weight >> r.tag_a);
      } else if (kind == "order") {
        r.kind = Rule::Kind::order;
        ok = static_cast<bool>(ls >> r.weight >> r.tag_a >> r.tag_b);
      } else {
        throw fail("unknown rule kind '" + kind + "'");
      }
      std::string extra;
      if (!ok || (ls >> extra)) throw fail("wrong arguments for '" + kind + "'");
      if (kind != "tags") rules.push_back(r);
    }
    if (num_tags < 0) throw ConfigError("rule file: missing 'tags N' line");
    return RuleSet(std::move(rules), num_tags);
  }

  void write(std::ostream& os) const {
    const auto old = os.precision(17);
    os << "tags " << num_tags_ << '\n';
    for (const auto& r : rules_) {
      switch (r.kind) {
        case Rule::Kind::token_pattern:
          os << "token_pattern " << r.weight << ' ' << r.lo << ' ' << r.hi << ' ' << r.tag_a << '\n';
          break;
        case Rule::Kind::span_contiguity:
          os << "span_contiguity " << r.weight << ' ' << r.tag_a << '\n';
          break;
        case Rule::Kind::order:
          os << "order " << r.weight << ' ' << r.tag_a << ' ' << r.tag_b << '\n';
          break;
      }
    }
    os.precision(old);
  }

 private:
  void check_tag(int t) const {
    if (t <= kPadTag || t >= num_tags_)
      throw ConfigError("rule set: unknown tag id " + std::to_string(t));
  }

  std::vector<Rule> rules_;
  int num_tags_;
};

/// Weighted fraction of satisfied rules. Pad positions are ignored.
inline double rule_reward(const RuleSet& rules, const TokenSequence& x, const std::vector<int>& tags) {
  if (x.size() != tags.size()) throw DataError("rule_reward: token and tag sequences differ in length");
  for (int t : tags)
    if (t < 0 || t >= rules.num_tags()) throw DataError("rule_reward: unknown tag id " + std::to_string(t));
  double total = 0.0;
  for (const auto& r : rules.rules()) {
    double score = 1.0;
    switch (r.kind) {
      case Rule::Kind::token_pattern: {
        int matches = 0, sat = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
          if (x[i] == kPadToken || x[i] < r.lo || x[i] > r.hi) continue;
          ++matches;
          if (tags[i] == r.tag_a) ++sat;
        }
        if (matches > 0) score = static_cast<double>(sat) / matches;
        break;
      }
      case Rule::Kind::span_contiguity: {
        int first = -1, last = -1, count = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
          if (x[i] == kPadToken || tags[i] != r.tag_a) continue;
          if (first < 0) first = static_cast<int>(i);
          last = static_cast<int>(i);
          ++count;
        }
        if (count > 0) {
          int nonpad_in_span = 0;
          for (int i = first; i <= last; ++i)
            if (x[static_cast<std::size_t>(i)] != kPadToken) ++nonpad_in_span;
          score = nonpad_in_span == count ? 1.0 : 0.0;
        }
        break;
      }
      case Rule::Kind::order: {
        int last_a = -1, first_b = -1;
        for (std::size_t i = 0; i < x.size(); ++i) {
          if (x[i] == kPadToken) continue;
          if (tags[i] == r.tag_a) last_a = static_cast<int>(i);
          if (tags[i] == r.tag_b && first_b < 0) first_b = static_cast<int>(i);
        }
        if (last_a >= 0 && first_b >= 0) score = last_a < first_b ? 1.0 : 0.0;
        break;
      }
    }
    total += r.weight * score;
  }
  return std::clamp(total, 0.0, 1.0);
}

class RuleReward final : public RewardFunction {
 public:
  explicit RuleReward(RuleSet rules) : rules_(std::move(rules)) {}
  std::string name() const override { return "rules"; }
  const RuleSet& rules() const { return rules_; }

 protected:
  double evaluate(const Example& ex, const DiscreteOutput& y) const override {
    const auto* toks = std::get_if<TokenSequence>(&ex.input);
    if (!toks) throw DataError("rule reward: example input is not a token sequence");
    return rule_reward(rules_, *toks, y.states);
  }

 private:
  RuleSet rules_;
};

// ---- shape IOU ----------------------------------------------------------------

/// 0 for programs that do not parse; otherwise IOU of the rendered program
/// with the target image.
inline double iou_reward(const shapes::Vocabulary& vocab, const shapes::BinaryImage& target,
                         const DiscreteOutput& y) {
  if (!shapes::validate(vocab, y.states)) return 0.0;
  return shapes::iou(target, shapes::execute(vocab, y.states));
}

class IouReward final : public RewardFunction {
 public:
  explicit IouReward(std::shared_ptr<const shapes::Vocabulary> vocab) : vocab_(std::move(vocab)) {}
  std::string name() const override { return "iou"; }
  const shapes::Vocabulary& vocabulary() const { return *vocab_; }

 protected:
  double evaluate(const Example& ex, const DiscreteOutput& y) const override {
    const auto* im = std::get_if<shapes::BinaryImage>(&ex.input);
    if (!im) throw DataError("iou reward: example input is not an image");
    return iou_reward(*vocab_, *im, y);
  }

 private:
  std::shared_ptr<const shapes::Vocabulary> vocab_;
};

/// Per-position accuracy over non-pad tokens.
inline double token_accuracy(const TokenSequence& x, const std::vector<int>& gold, const std::vector<int>& pred) {
  int n = 0, ok = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] == kPadToken) continue;
    ++n;
    if (gold[i] == pred[i]) ++ok;
  }
  return n == 0 ? 1.0 : static_cast<double>(ok) / n;
}

/// Token accuracy against the example's gold tags (evaluation and the
/// fully supervised tagging setting).
class TokenAccuracyReward final : public RewardFunction {
 public:
  std::string name() const override { return "token_accuracy"; }

 protected:
  double evaluate(const Example& ex, const DiscreteOutput& y) const override {
    const auto* toks = std::get_if<TokenSequence>(&ex.input);
    if (!toks) throw DataError("token accuracy: example input is not a token sequence");
    if (!ex.reference) throw DataError("token accuracy: example " + std::to_string(ex.id) + " has no gold tags");
    if (y.size() != toks->size() || ex.reference->size() != toks->size())
      throw DataError("token accuracy: length mismatch");
    return token_accuracy(*toks, ex.reference->states, y.states);
  }
};

}  // namespace sgspen
