#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sgspen/energy_models.hpp"
#include "sgspen/errors.hpp"
#include "sgspen/rewards.hpp"
#include "sgspen/rng.hpp"
#include "sgspen/shapes_dsl.hpp"
#include "sgspen/structured_output.hpp"

namespace sgspen {

// ---- multi-label --------------------------------------------------------------

struct MultiLabelItem {
  FeatureVector features;
  std::vector<int> labels;  // sorted label ids
  int cluster = -1;         // generator bookkeeping, -1 when loaded from file
};

struct MultiLabelDataset {
  int num_features = 0;
  int num_labels = 0;
  std::vector<MultiLabelItem> items;
};

struct MultiLabelGenOptions {
  int labels_per_cluster = 3;
  double feature_noise = 1.0;
  double label_noise = 0.02;
  /// Assign clusters non-overlapping label sets (needs clusters * labels_per_cluster <= num_labels).
  bool disjoint = false;
};

/// Latent-cluster generator: every cluster has a Gaussian feature prototype
/// and a label subset; an example is its cluster's prototype plus Gaussian
/// noise, with each label bit of the cluster set flipped independently with
/// probability label_noise.
inline MultiLabelDataset gen_multilabel(int n, int num_features, int num_labels, int num_clusters, Rng& rng,
                                        const MultiLabelGenOptions& opt = {}) {
  if (n < 1 || num_features < 1 || num_labels < 1 || num_clusters < 1)
    throw ConfigError("gen_multilabel: sizes must be positive");
  if (opt.labels_per_cluster < 0 || opt.labels_per_cluster > num_labels)
    throw ConfigError("gen_multilabel: labels_per_cluster out of range");
  if (opt.disjoint && num_clusters * opt.labels_per_cluster > num_labels)
    throw ConfigError("gen_multilabel: not enough labels for disjoint clusters");

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<FeatureVector> protos(static_cast<std::size_t>(num_clusters));
  for (auto& p : protos) {
    p.resize(static_cast<std::size_t>(num_features));
    for (auto& v : p) v = gauss(rng);
  }
  std::vector<std::vector<int>> cluster_labels(static_cast<std::size_t>(num_clusters));
  std::vector<int> all(static_cast<std::size_t>(num_labels));
  std::iota(all.begin(), all.end(), 0);
  if (opt.disjoint) std::shuffle(all.begin(), all.end(), rng);
  for (int c = 0; c < num_clusters; ++c) {
    auto& ls = cluster_labels[static_cast<std::size_t>(c)];
    if (opt.disjoint) {
      ls.assign(all.begin() + c * opt.labels_per_cluster, all.begin() + (c + 1) * opt.labels_per_cluster);
    } else {
      std::vector<int> perm = all;
      std::shuffle(perm.begin(), perm.end(), rng);
      ls.assign(perm.begin(), perm.begin() + opt.labels_per_cluster);
    }
    std::sort(ls.begin(), ls.end());
  }

  MultiLabelDataset ds{num_features, num_labels, {}};
  std::uniform_int_distribution<int> pick_cluster(0, num_clusters - 1);
  std::bernoulli_distribution flip(opt.label_noise);
  for (int k = 0; k < n; ++k) {
    MultiLabelItem it;
    it.cluster = pick_cluster(rng);
    const auto& proto = protos[static_cast<std::size_t>(it.cluster)];
    it.features.resize(proto.size());
    for (std::size_t j = 0; j < proto.size(); ++j) it.features[j] = proto[j] + opt.feature_noise * gauss(rng);
    const auto& base = cluster_labels[static_cast<std::size_t>(it.cluster)];
    for (int l = 0; l < num_labels; ++l) {
      bool on = std::binary_search(base.begin(), base.end(), l);
      if (opt.label_noise > 0 && flip(rng)) on = !on;
      if (on) it.labels.push_back(l);
    }
    ds.items.push_back(std::move(it));
  }
  return ds;
}

/// Sparse text format, one example per line:  idx:val idx:val ... | label label ...
/// Feature and label counts are the largest index seen + 1 unless the
/// caller supplies larger ones.
inline MultiLabelDataset load_sparse_multilabel(std::istream& is, int num_features = 0, int num_labels = 0) {
  struct Raw {
    std::vector<std::pair<int, double>> feats;
    std::vector<int> labels;
  };
  std::vector<Raw> raws;
  int max_f = -1, max_l = -1;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& why) { return DataError("line " + std::to_string(lineno) + ": " + why); };
    const auto bar = line.find('|');
    if (bar == std::string::npos) throw fail("missing '|' separator");
    Raw raw;
    std::istringstream fs(line.substr(0, bar));
    std::string tok;
    std::set<int> seen;
    while (fs >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) throw fail("feature '" + tok + "' is not idx:val");
      int idx;
      double val;
      try {
        std::size_t used = 0;
        idx = std::stoi(tok.substr(0, colon), &used);
        if (used != colon) throw std::invalid_argument("idx");
        const std::string vs = tok.substr(colon + 1);
        val = std::stod(vs, &used);
        if (used != vs.size()) throw std::invalid_argument("val");
      } catch (const std::logic_error&) {
        throw fail("feature '" + tok + "' is not idx:val");
      }
      if (idx < 0) throw fail("negative feature index");
      if (!seen.insert(idx).second) throw fail("duplicate feature index " + std::to_string(idx));
      max_f = std::max(max_f, idx);
      raw.feats.emplace_back(idx, val);
    }
    std::istringstream ls(line.substr(bar + 1));
    while (ls >> tok) {
      int l;
      try {
        std::size_t used = 0;
        l = std::stoi(tok, &used);
        if (used != tok.size()) throw std::invalid_argument("label");
      } catch (const std::logic_error&) {
        throw fail("label '" + tok + "' is not an integer");
      }
      if (l < 0) throw fail("negative label id");
      raw.labels.push_back(l);
      max_l = std::max(max_l, l);
    }
    std::sort(raw.labels.begin(), raw.labels.end());
    raw.labels.erase(std::unique(raw.labels.begin(), raw.labels.end()), raw.labels.end());
    raws.push_back(std::move(raw));
  }
  MultiLabelDataset ds;
  ds.num_features = std::max(num_features, max_f + 1);
  ds.num_labels = std::max(num_labels, max_l + 1);
  for (auto& r : raws) {
    MultiLabelItem it;
    it.features.assign(static_cast<std::size_t>(ds.num_features), 0.0);
    for (auto [i, v] : r.feats) it.features[static_cast<std::size_t>(i)] = v;
    it.labels = std::move(r.labels);
    ds.items.push_back(std::move(it));
  }
  return ds;
}

inline void write_sparse_multilabel(std::ostream& os, const MultiLabelDataset& ds) {
  const auto old = os.precision(17);
  for (const auto& it : ds.items) {
    bool first = true;
    for (std::size_t j = 0; j < it.features.size(); ++j) {
      if (it.features[j] == 0.0) continue;
      os << (first ? "" : " ") << j << ':' << it.features[j];
      first = false;
    }
    os << (first ? "|" : " |");
    for (int l : it.labels) os << ' ' << l;
    os << '\n';
  }
  os.precision(old);
}

inline std::vector<Example> to_examples(const MultiLabelDataset& ds, std::size_t first_id = 0) {
  const auto space = OutputSpace::uniform(ds.num_labels, 2);
  std::vector<Example> out;
  for (std::size_t k = 0; k < ds.items.size(); ++k) {
    std::vector<int> st(static_cast<std::size_t>(ds.num_labels), 0);
    for (int l : ds.items[k].labels) {
      if (l >= ds.num_labels) throw DataError("label id " + std::to_string(l) + " exceeds label count");
      st[static_cast<std::size_t>(l)] = 1;
    }
    out.push_back(Example{first_id + k, ds.items[k].features, DiscreteOutput(space, std::move(st))});
  }
  return out;
}

// ---- tagging -----------------------------------------------------------------

struct TaggingItem {
  TokenSequence tokens;    // padded with kPadToken
  std::vector<int> tags;   // gold, kPadTag on padding
};

struct TaggingDataset {
  int vocab_size = 0;
  int max_len = 0;
  int num_tags = 0;
  std::vector<TaggingItem> items;
};

/// Rule set for a synthetic tagging task: non-pad token ids are split into
/// num_tags-1 contiguous ranges, one per field tag, and fields appear in tag
/// order. Patterns carry twice the weight of structural rules.
inline RuleSet default_rules(int num_tags, int vocab_size) {
  const int fields = num_tags - 1;
  if (fields < 1 || vocab_size - 1 < fields)
    throw ConfigError("default_rules: need vocab_size - 1 >= num_tags - 1 >= 1");
  std::vector<Rule> rules;
  const int usable = vocab_size - 1;
  for (int f = 0; f < fields; ++f) {
    const int lo = 1 + f * usable / fields;
    const int hi = (f + 1) * usable / fields;
    rules.push_back(Rule{Rule::Kind::token_pattern, 2.0, lo, hi, f + 1, 0});
  }
  for (int f = 0; f < fields; ++f) rules.push_back(Rule{Rule::Kind::span_contiguity, 1.0, 0, 0, f + 1, 0});
  for (int f = 0; f + 1 < fields; ++f) rules.push_back(Rule{Rule::Kind::order, 1.0, 0, 0, f + 1, f + 2});
  return RuleSet(std::move(rules), num_tags);
}

/// Token sequences assembled from fields. Each field tag with a
/// token_pattern rule emits a contiguous run of 1-3 tokens drawn from that
/// rule's range; fields follow the order rules (tag id order otherwise).
/// Sequences are padded to max_len.
inline TaggingDataset gen_tagging(int n, int vocab_size, int max_len, const RuleSet& rules, Rng& rng) {
  if (n < 1 || vocab_size < 2 || max_len < 1) throw ConfigError("gen_tagging: sizes must be positive");
  std::map<int, std::pair<int, int>> ranges;
  for (const auto& r : rules.rules())
    if (r.kind == Rule::Kind::token_pattern && !ranges.count(r.tag_a)) {
      if (r.hi >= vocab_size) throw ConfigError("gen_tagging: rule token range exceeds vocabulary");
      ranges[r.tag_a] = {r.lo, r.hi};
    }
  if (ranges.empty()) throw ConfigError("gen_tagging: rule set has no token_pattern rules");

  // Field order: topological order of the order rules, ties by tag id.
  std::vector<int> order;
  {
    std::map<int, std::set<int>> succ;
    std::map<int, int> indeg;
    for (const auto& [t, _] : ranges) indeg[t] = 0;
    for (const auto& r : rules.rules())
      if (r.kind == Rule::Kind::order && ranges.count(r.tag_a) && ranges.count(r.tag_b) &&
          succ[r.tag_a].insert(r.tag_b).second)
        ++indeg[r.tag_b];
    std::set<int> ready;
    for (const auto& [t, d] : indeg)
      if (d == 0) ready.insert(t);
    while (!ready.empty()) {
      const int t = *ready.begin();
      ready.erase(ready.begin());
      order.push_back(t);
      for (int s : succ[t])
        if (--indeg[s] == 0) ready.insert(s);
    }
    if (order.size() != ranges.size()) throw ConfigError("gen_tagging: order rules are cyclic");
  }

  TaggingDataset ds{vocab_size, max_len, rules.num_tags(), {}};
  std::uniform_int_distribution<int> field_len(1, 3);
  for (int k = 0; k < n; ++k) {
    TaggingItem it;
    for (int tag : order) {
      const auto [lo, hi] = ranges[tag];
      std::uniform_int_distribution<int> tok(lo, hi);
      const int len = field_len(rng);
      for (int j = 0; j < len && static_cast<int>(it.tokens.size()) < max_len; ++j) {
        it.tokens.push_back(tok(rng));
        it.tags.push_back(tag);
      }
    }
    it.tokens.resize(static_cast<std::size_t>(max_len), kPadToken);
    it.tags.resize(static_cast<std::size_t>(max_len), kPadTag);
    ds.items.push_back(std::move(it));
  }
  return ds;
}

inline std::vector<Example> to_examples(const TaggingDataset& ds, std::size_t first_id = 0) {
  const auto space = OutputSpace::uniform(ds.max_len, ds.num_tags);
  std::vector<Example> out;
  for (std::size_t k = 0; k < ds.items.size(); ++k)
    out.push_back(Example{first_id + k, ds.items[k].tokens, DiscreteOutput(space, ds.items[k].tags)});
  return out;
}

/// Two aligned files: token ids and tag ids, one sequence per line.
inline void write_tagging(std::ostream& tokens_os, std::ostream& tags_os, const TaggingDataset& ds) {
  for (const auto& it : ds.items) {
    for (std::size_t i = 0; i < it.tokens.size(); ++i) tokens_os << (i ? " " : "") << it.tokens[i];
    tokens_os << '\n';
    for (std::size_t i = 0; i < it.tags.size(); ++i) tags_os << (i ? " " : "") << it.tags[i];
    tags_os << '\n';
  }
}

inline TaggingDataset read_tagging(std::istream& tokens_is, std::istream& tags_is, int vocab_size, int num_tags) {
  auto read_rows = [](std::istream& is, const char* what) {
    std::vector<std::vector<int>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::istringstream ls(line);
      std::vector<int> row;
      int v;
      while (ls >> v) row.push_back(v);
      if (!ls.eof()) throw DataError(std::string(what) + " line " + std::to_string(lineno) + ": not integers");
      rows.push_back(std::move(row));
    }
    return rows;
  };
  auto toks = read_rows(tokens_is, "tokens");
  auto tags = read_rows(tags_is, "tags");
  if (toks.size() != tags.size()) throw DataError("tagging files have different line counts");
  TaggingDataset ds{vocab_size, 0, num_tags, {}};
  for (std::size_t k = 0; k < toks.size(); ++k) {
    if (toks[k].size() != tags[k].size())
      throw DataError("tagging line " + std::to_string(k + 1) + ": token/tag length mismatch");
    if (k == 0) ds.max_len = static_cast<int>(toks[k].size());
    if (static_cast<int>(toks[k].size()) != ds.max_len)
      throw DataError("tagging line " + std::to_string(k + 1) + ": sequences must share one padded length");
    for (std::size_t i = 0; i < toks[k].size(); ++i) {
      if (toks[k][i] < 0 || toks[k][i] >= vocab_size)
        throw DataError("tagging line " + std::to_string(k + 1) + ": token id out of range");
      if (tags[k][i] < 0 || tags[k][i] >= num_tags)
        throw DataError("tagging line " + std::to_string(k + 1) + ": tag id out of range");
    }
    ds.items.push_back({std::move(toks[k]), std::move(tags[k])});
  }
  return ds;
}

// ---- shapes -------------------------------------------------------------------

struct ShapeDataset {
  std::shared_ptr<const shapes::Vocabulary> vocab;
  std::vector<shapes::ImageProgram> items;
};

inline std::vector<Example> to_examples(const ShapeDataset& ds, std::size_t first_id = 0) {
  const auto space = OutputSpace::uniform(ds.vocab->program_length(), static_cast<int>(ds.vocab->size()));
  std::vector<Example> out;
  for (std::size_t k = 0; k < ds.items.size(); ++k)
    out.push_back(Example{first_id + k, ds.items[k].image, DiscreteOutput(space, ds.items[k].program)});
  return out;
}

// ---- splitting ----------------------------------------------------------------

/// Split sizes by largest remainder: floor(n * f_i), leftover items to the
/// largest fractional parts (earlier splits first on ties).
inline std::vector<std::size_t> split_sizes(std::size_t n, const std::vector<double>& fractions) {
  if (fractions.empty()) throw ConfigError("split: no fractions");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0)) throw ConfigError("split: negative fraction");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");
  std::vector<std::size_t> sizes(fractions.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double exact = static_cast<double>(n) * fractions[i];
    sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    used += sizes[i];
    rem.emplace_back(-(exact - static_cast<double>(sizes[i])), i);
  }
  std::sort(rem.begin(), rem.end());
  for (std::size_t k = 0; used < n; ++k, ++used) ++sizes[rem[k % rem.size()].second];
  return sizes;
}

/// Seeded disjoint partition. Warns on stderr when a split comes out empty.
template <typename T>
std::vector<std::vector<T>> split(const std::vector<T>& items, const std::vector<double>& fractions, Rng& rng) {
  const auto sizes = split_sizes(items.size(), fractions);
  std::vector<std::size_t> idx(items.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<T>> out(sizes.size());
  std::size_t pos = 0;
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    if (sizes[s] == 0) std::cerr << "warning: split " << s << " is empty\n";
    for (std::size_t k = 0; k < sizes[s]; ++k) out[s].push_back(items[idx[pos++]]);
  }
  return out;
}

}  // namespace sgspen
