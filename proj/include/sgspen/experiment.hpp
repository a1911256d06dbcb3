#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgspen/beam_baseline.hpp"
#include "sgspen/energy_models.hpp"
#include "sgspen/errors.hpp"
#include "sgspen/inference.hpp"
#include "sgspen/rewards.hpp"
#include "sgspen/rng.hpp"
#include "sgspen/shapes_dsl.hpp"
#include "sgspen/tasks_data.hpp"
#include "sgspen/trainer.hpp"

namespace sgspen::experiment {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---- config -------------------------------------------------------------------

struct KeySpec {
  std::string def;
  std::string help;
};

inline const std::map<std::string, KeySpec>& known_keys() {
  static const std::map<std::string, KeySpec> keys{
      {"task.name", {"multilabel", "multilabel | tagging | shapes"}},
      {"task.reward", {"auto", "training reward: auto | f1 | rules | iou | token_accuracy"}},

      {"data.dir", {"", "load splits written by gen-data from here instead of generating"}},
      {"data.seed", {"1", "root seed for generation and splitting"}},
      {"data.n", {"300", "examples to generate before splitting"}},
      {"data.split", {"2,1", "relative split sizes: train | train,test | train,dev,test"}},
      {"data.eval_split", {"test", "split used for held-out evaluation during training"}},
      {"data.num_features", {"32", "multilabel"}},
      {"data.num_labels", {"16", "multilabel"}},
      {"data.clusters", {"4", "multilabel"}},
      {"data.labels_per_cluster", {"4", "multilabel"}},
      {"data.feature_noise", {"1.0", "multilabel"}},
      {"data.label_noise", {"0.02", "multilabel"}},
      {"data.disjoint", {"false", "multilabel: clusters get non-overlapping label sets"}},
      {"data.vocab_size", {"30", "tagging: token ids, 0 is padding"}},
      {"data.max_len", {"12", "tagging"}},
      {"data.num_tags", {"4", "tagging: tag ids, 0 is padding"}},
      {"data.rules", {"", "tagging: rule file (default rules when empty)"}},
      {"data.vocab", {"reduced", "shapes: reduced | full"}},
      {"data.image_format", {"binary", "shapes: binary | pgm"}},

      {"model.feature_hidden", {"64", ""}},
      {"model.feature_dim", {"64", ""}},
      {"model.global_hidden", {"15", ""}},
      {"model.embed_dim", {"16", ""}},
      {"model.pair_hidden", {"32", ""}},
      {"model.pool", {"4", ""}},
      {"model.token_dim", {"32", ""}},
      {"model.program_hidden", {"128", ""}},
      {"model.program_embed", {"64", ""}},
      {"model.image_hidden", {"128", ""}},
      {"model.image_embed", {"64", ""}},
      {"model.joint_hidden", {"128", ""}},
      {"model.init_gain", {"1", "multiplies the Glorot bounds of weights"}},

      {"train.algorithm", {"sg_spen", "sg_spen | r_spen | dvn (eval also accepts beam)"}},
      {"train.eta", {"0.5", "inference step size"}},
      {"train.sigma", {"", "sampling noise; empty means 2 * eta"}},
      {"train.inference_steps", {"20", ""}},
      {"train.delta", {"0.01", "required reward improvement"}},
      {"train.budget", {"100", "reward queries per search"}},
      {"train.restart", {"revert", "revert | reset"}},
      {"train.alpha", {"100", "margin scale"}},
      {"train.c", {"1e-4", "L2 weight"}},
      {"train.lambda", {"1e-3", "learning rate"}},
      {"train.batch_size", {"20", ""}},
      {"train.epochs", {"10", ""}},
      {"train.seed", {"1", "root seed for init, inference, search and shuffling"}},
      {"train.semi_supervised", {"false", "use gold outputs for a fraction of the training set"}},
      {"train.label_fraction", {"1", "fraction of training examples labelled in semi-supervised mode"}},
      {"train.dvn_sign", {"corrected", "corrected | literal"}},
      {"train.clip_norm", {"0", "gradient norm cap, 0 disables"}},
      {"train.checkpoint_every", {"0", "periodic checkpoints every N epochs, 0 for final only"}},
      {"train.evaluate_train", {"true", "predict on the training set after each epoch"}},

      {"beam.width", {"5", ""}},
      {"beam.restarts", {"10", ""}},
      {"beam.stall_rounds", {"10", ""}},
      {"beam.max_iterations", {"1000", ""}},

      {"output.dir", {"runs/default", ""}},
  };
  return keys;
}

/// Fully resolved flat configuration. Every known key is always present.
class Config {
 public:
  Config() {
    for (const auto& [k, spec] : known_keys()) values_[k] = spec.def;
  }

  /// `key = value` lines; `[section]` prefixes following keys with
  /// "section."; '#' starts a comment.
  static Config parse(std::istream& is, const std::string& origin = "config") {
    Config c;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      const std::string t = trim(line);
      if (t.empty()) continue;
      auto where = [&] { return origin + " line " + std::to_string(lineno) + ": "; };
      if (t.front() == '[') {
        if (t.back() != ']') throw ConfigError(where() + "unterminated section header");
        section = trim(t.substr(1, t.size() - 2));
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw ConfigError(where() + "expected 'key = value'");
      std::string key = trim(t.substr(0, eq));
      if (!section.empty()) key = section + "." + key;
      if (!known_keys().count(key)) throw ConfigError(where() + "unknown config key '" + key + "'");
      c.values_[key] = trim(t.substr(eq + 1));
    }
    return c;
  }

  static Config from_file(const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw ConfigError("cannot open config file '" + p.string() + "'");
    return parse(is, p.string());
  }

  /// The config echoed in a run or data manifest.
  static Config from_manifest(const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw ConfigError("cannot open manifest '" + p.string() + "'");
    json j;
    try {
      is >> j;
    } catch (const json::exception& e) {
      throw DataError("manifest '" + p.string() + "': " + e.what());
    }
    if (!j.contains("config") || !j["config"].is_object())
      throw DataError("manifest '" + p.string() + "' has no config object");
    Config c;
    for (const auto& [k, v] : j["config"].items()) c.set(k, v.get<std::string>());
    return c;
  }

  void set(const std::string& key, const std::string& value) {
    if (!known_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  /// "key=value" as given on the command line.
  void set_assignment(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  long long integer(const std::string& key) const {
    const auto& s = str(key);
    try {
      std::size_t used = 0;
      const long long v = std::stoll(s, &used);
      if (used == s.size()) return v;
    } catch (const std::logic_error&) {
    }
    throw ConfigError("config key '" + key + "': expected an integer, got '" + s + "'");
  }

  int int32(const std::string& key) const {
    const long long v = integer(key);
    if (v < INT32_MIN || v > INT32_MAX) throw ConfigError("config key '" + key + "': value out of range");
    return static_cast<int>(v);
  }

  std::uint64_t seed(const std::string& key) const {
    const long long v = integer(key);
    if (v < 0) throw ConfigError("config key '" + key + "': seeds must be non-negative");
    return static_cast<std::uint64_t>(v);
  }

  double real(const std::string& key) const { return parse_real(key, str(key)); }

  bool boolean(const std::string& key) const {
    const auto& s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + s + "'");
  }

  std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(str(key));
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_real(key, trim(item)));
    if (out.empty()) throw ConfigError("config key '" + key + "': expected a comma-separated list");
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  void write(std::ostream& os) const {
    std::string section;
    for (const auto& [k, v] : values_) {
      const auto dot = k.find('.');
      const std::string s = k.substr(0, dot);
      if (s != section) {
        os << (section.empty() ? "" : "\n") << '[' << s << "]\n";
        section = s;
      }
      os << k.substr(dot + 1) << " = " << v << '\n';
    }
  }

  json to_json() const { return json(values_); }

  friend bool operator==(const Config&, const Config&) = default;

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  static double parse_real(const std::string& key, const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == s.size()) return v;
    } catch (const std::logic_error&) {
    }
    throw ConfigError("config key '" + key + "': expected a number, got '" + s + "'");
  }

  std::map<std::string, std::string> values_;
};

// ---- typed views ----------------------------------------------------------------

inline TrainConfig train_config(const Config& c) {
  TrainConfig t;
  const std::string alg = c.str("train.algorithm");
  if (alg != "beam") t.algorithm = parse_algorithm(alg);
  t.eta = c.real("train.eta");
  if (!c.str("train.sigma").empty()) t.sigma = c.real("train.sigma");
  t.inference_steps = c.int32("train.inference_steps");
  t.delta = c.real("train.delta");
  t.budget = c.int32("train.budget");
  const auto& restart = c.str("train.restart");
  if (restart == "revert") {
    t.restart = RestartMode::revert;
  } else if (restart == "reset") {
    t.restart = RestartMode::reset;
  } else {
    throw ConfigError("config key 'train.restart': expected revert or reset, got '" + restart + "'");
  }
  t.alpha = c.real("train.alpha");
  t.c = c.real("train.c");
  t.lambda = c.real("train.lambda");
  t.batch_size = c.int32("train.batch_size");
  t.epochs = c.int32("train.epochs");
  t.seed = c.seed("train.seed");
  t.semi_supervised = c.boolean("train.semi_supervised");
  const auto& sign = c.str("train.dvn_sign");
  if (sign == "corrected") {
    t.dvn_sign = DvnSign::corrected;
  } else if (sign == "literal") {
    t.dvn_sign = DvnSign::literal;
  } else {
    throw ConfigError("config key 'train.dvn_sign': expected corrected or literal, got '" + sign + "'");
  }
  t.clip_norm = c.real("train.clip_norm");
  try {
    t.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(e.what()) + " (see [train] keys)");
  }
  const double frac = c.real("train.label_fraction");
  if (!(frac >= 0 && frac <= 1)) throw ConfigError("config key 'train.label_fraction' must be in [0, 1]");
  if (c.int32("train.checkpoint_every") < 0) throw ConfigError("config key 'train.checkpoint_every' must be >= 0");
  return t;
}

inline BeamConfig beam_config(const Config& c) {
  BeamConfig b{c.int32("beam.width"), c.int32("beam.restarts"), c.int32("beam.stall_rounds"),
               c.int32("beam.max_iterations")};
  b.validate();
  return b;
}

inline shapes::VocabularyConfig vocab_config(const Config& c) {
  const auto& v = c.str("data.vocab");
  if (v == "reduced") return shapes::VocabularyConfig::reduced();
  if (v == "full") return {};
  throw ConfigError("config key 'data.vocab': expected reduced or full, got '" + v + "'");
}

// ---- data -------------------------------------------------------------------------

/// FNV-1a, 64 bit.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::vector<std::string> split_names(std::size_t n) {
  switch (n) {
    case 1: return {"train"};
    case 2: return {"train", "test"};
    case 3: return {"train", "dev", "test"};
  }
  throw ConfigError("config key 'data.split': expected 1 to 3 entries");
}

/// One task's splits plus everything needed to rebuild the output space.
struct TaskData {
  std::string task;
  std::vector<std::string> split_order;
  std::map<std::string, std::vector<Example>> splits;
  /// Serialized split files (file name -> bytes), the source of all checksums.
  std::map<std::string, std::string> files;

  // multilabel
  int num_features = 0, num_labels = 0;
  // tagging
  int vocab_size = 0, max_len = 0, num_tags = 0;
  std::optional<RuleSet> rules;
  // shapes
  std::shared_ptr<const shapes::Vocabulary> vocab;

  const std::vector<Example>& split(const std::string& name) const {
    auto it = splits.find(name);
    if (it == splits.end()) throw ConfigError("no data split named '" + name + "'");
    return it->second;
  }

  std::map<std::string, std::string> checksums() const {
    std::map<std::string, std::string> out;
    for (const auto& [name, bytes] : files) out[name] = hex64(fnv1a(bytes));
    return out;
  }

  OutputSpace space() const {
    if (task == "multilabel") return OutputSpace::uniform(num_labels, 2);
    if (task == "tagging") return OutputSpace::uniform(max_len, num_tags);
    return OutputSpace::uniform(vocab->program_length(), static_cast<int>(vocab->size()));
  }
};

namespace detail {

inline std::vector<double> split_fractions(const Config& c) {
  auto w = c.reals("data.split");
  double total = 0.0;
  for (double v : w) {
    if (!(v >= 0)) throw ConfigError("config key 'data.split': weights must be non-negative");
    total += v;
  }
  if (!(total > 0)) throw ConfigError("config key 'data.split': weights sum to zero");
  for (auto& v : w) v /= total;
  // Absorb rounding so the fractions sum to exactly 1 within split_sizes' tolerance.
  double rest = 1.0;
  for (std::size_t i = 0; i + 1 < w.size(); ++i) rest -= w[i];
  w.back() = rest;
  return w;
}

inline void check_task(const std::string& t) {
  if (t != "multilabel" && t != "tagging" && t != "shapes")
    throw ConfigError("config key 'task.name': expected multilabel, tagging or shapes, got '" + t + "'");
}

inline void serialize_multilabel(TaskData& d, const std::string& name, const MultiLabelDataset& ds) {
  std::ostringstream os;
  write_sparse_multilabel(os, ds);
  d.files[name + ".txt"] = os.str();
}

inline void serialize_tagging(TaskData& d, const std::string& name, const TaggingDataset& ds) {
  std::ostringstream toks, tags;
  write_tagging(toks, tags, ds);
  d.files[name + ".tokens"] = toks.str();
  d.files[name + ".tags"] = tags.str();
}

inline std::string image_file(const Config& c, const std::string& name) {
  const auto& f = c.str("data.image_format");
  if (f == "binary") return name + ".images";
  if (f == "pgm") return name + ".pgm";
  throw ConfigError("config key 'data.image_format': expected binary or pgm, got '" + f + "'");
}

inline void serialize_shapes(TaskData& d, const Config& c, const std::string& name, const ShapeDataset& ds) {
  std::vector<shapes::BinaryImage> ims;
  std::vector<shapes::Program> progs;
  for (const auto& it : ds.items) {
    ims.push_back(it.image);
    progs.push_back(it.program);
  }
  std::ostringstream im, pr;
  if (c.str("data.image_format") == "pgm") {
    shapes::write_images_pgm(im, ims);
  } else {
    shapes::write_images_binary(im, ims);
  }
  shapes::write_programs(pr, progs);
  d.files[image_file(c, name)] = im.str();
  d.files[name + ".programs"] = pr.str();
}

}  // namespace detail

/// Generates and splits a dataset from the data.* keys. Example ids are
/// assigned after splitting, consecutively in split order.
inline TaskData generate_data(const Config& c) {
  TaskData d;
  d.task = c.str("task.name");
  detail::check_task(d.task);
  const std::uint64_t seed = c.seed("data.seed");
  const long long n = c.integer("data.n");
  if (n < 1) throw ConfigError("config key 'data.n' must be >= 1");
  const auto fractions = detail::split_fractions(c);
  d.split_order = split_names(fractions.size());
  Rng gen = make_rng(seed, "data");
  Rng split_rng = make_rng(seed, "split");
  std::size_t next_id = 0;

  if (d.task == "multilabel") {
    MultiLabelGenOptions opt;
    opt.labels_per_cluster = c.int32("data.labels_per_cluster");
    opt.feature_noise = c.real("data.feature_noise");
    opt.label_noise = c.real("data.label_noise");
    opt.disjoint = c.boolean("data.disjoint");
    const auto all = gen_multilabel(static_cast<int>(n), c.int32("data.num_features"), c.int32("data.num_labels"),
                                    c.int32("data.clusters"), gen, opt);
    d.num_features = all.num_features;
    d.num_labels = all.num_labels;
    const auto parts = split(all.items, fractions, split_rng);
    for (std::size_t s = 0; s < parts.size(); ++s) {
      MultiLabelDataset sub{all.num_features, all.num_labels, parts[s]};
      d.splits[d.split_order[s]] = to_examples(sub, next_id);
      next_id += parts[s].size();
      detail::serialize_multilabel(d, d.split_order[s], sub);
    }
  } else if (d.task == "tagging") {
    d.vocab_size = c.int32("data.vocab_size");
    d.max_len = c.int32("data.max_len");
    d.num_tags = c.int32("data.num_tags");
    if (c.str("data.rules").empty()) {
      d.rules = default_rules(d.num_tags, d.vocab_size);
    } else {
      std::ifstream is(c.str("data.rules"));
      if (!is) throw ConfigError("config key 'data.rules': cannot open '" + c.str("data.rules") + "'");
      d.rules = RuleSet::parse(is);
      if (d.rules->num_tags() != d.num_tags)
        throw ConfigError("rule file declares " + std::to_string(d.rules->num_tags()) +
                          " tags but data.num_tags is " + std::to_string(d.num_tags));
    }
    const auto all = gen_tagging(static_cast<int>(n), d.vocab_size, d.max_len, *d.rules, gen);
    const auto parts = split(all.items, fractions, split_rng);
    for (std::size_t s = 0; s < parts.size(); ++s) {
      TaggingDataset sub{d.vocab_size, d.max_len, d.num_tags, parts[s]};
      d.splits[d.split_order[s]] = to_examples(sub, next_id);
      next_id += parts[s].size();
      detail::serialize_tagging(d, d.split_order[s], sub);
    }
    std::ostringstream rs;
    d.rules->write(rs);
    d.files["rules.txt"] = rs.str();
  } else {
    d.vocab = std::make_shared<const shapes::Vocabulary>(vocab_config(c));
    const auto all = shapes::generate_dataset(static_cast<std::size_t>(n), gen, *d.vocab);
    const auto parts = split(all, fractions, split_rng);
    for (std::size_t s = 0; s < parts.size(); ++s) {
      ShapeDataset sub{d.vocab, parts[s]};
      d.splits[d.split_order[s]] = to_examples(sub, next_id);
      next_id += parts[s].size();
      detail::serialize_shapes(d, c, d.split_order[s], sub);
    }
    std::ostringstream vm;
    d.vocab->write_manifest(vm);
    d.files["vocab.txt"] = vm.str();
  }
  return d;
}

inline std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline void write_text(const fs::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw DataError("cannot write '" + p.string() + "'");
  os << bytes;
  if (!os) throw DataError("write failed for '" + p.string() + "'");
}

inline std::string read_text(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw DataError("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Writes every split file plus data.json (config echo, sizes, checksums).
inline void write_data(const TaskData& d, const Config& c, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& [name, bytes] : d.files) write_text(dir / name, bytes);
  json j;
  j["format"] = "sgspen-data 1";
  j["task"] = d.task;
  j["config"] = c.to_json();
  j["seed"] = c.seed("data.seed");
  j["splits"] = d.split_order;
  json counts;
  for (const auto& s : d.split_order) counts[s] = d.split(s).size();
  j["counts"] = counts;
  j["checksums"] = d.checksums();
  j["sizes"] = {{"num_features", d.num_features}, {"num_labels", d.num_labels}, {"vocab_size", d.vocab_size},
                {"max_len", d.max_len}, {"num_tags", d.num_tags}};
  j["created_at"] = now_utc();
  write_text(dir / "data.json", j.dump(2) + "\n");
}

/// Reads a directory written by write_data, verifying checksums.
inline TaskData load_data(const Config& c, const fs::path& dir) {
  json j;
  try {
    j = json::parse(read_text(dir / "data.json"));
  } catch (const json::exception& e) {
    throw DataError("data manifest in '" + dir.string() + "': " + e.what());
  }
  TaskData d;
  d.task = j.at("task").get<std::string>();
  if (d.task != c.str("task.name"))
    throw DataError("data in '" + dir.string() + "' is for task '" + d.task + "', config says '" +
                    c.str("task.name") + "'");
  d.split_order = j.at("splits").get<std::vector<std::string>>();
  const auto expected = j.at("checksums").get<std::map<std::string, std::string>>();
  for (const auto& [name, sum] : expected) {
    d.files[name] = read_text(dir / name);
    if (hex64(fnv1a(d.files[name])) != sum) throw DataError("checksum mismatch for '" + (dir / name).string() + "'");
  }
  const auto& sizes = j.at("sizes");
  d.num_features = sizes.at("num_features");
  d.num_labels = sizes.at("num_labels");
  d.vocab_size = sizes.at("vocab_size");
  d.max_len = sizes.at("max_len");
  d.num_tags = sizes.at("num_tags");
  auto file = [&](const std::string& name) -> const std::string& {
    auto it = d.files.find(name);
    if (it == d.files.end()) throw DataError("data manifest does not list '" + name + "'");
    return it->second;
  };

  std::size_t next_id = 0;
  if (d.task == "tagging") {
    std::istringstream rs(file("rules.txt"));
    d.rules = RuleSet::parse(rs);
  }
  if (d.task == "shapes") {
    d.vocab = std::make_shared<const shapes::Vocabulary>(vocab_config(c));
    std::ostringstream vm;
    d.vocab->write_manifest(vm);
    if (vm.str() != file("vocab.txt")) throw DataError("data vocabulary differs from config data.vocab");
  }
  for (const auto& s : d.split_order) {
    if (d.task == "multilabel") {
      std::istringstream is(file(s + ".txt"));
      const auto ds = load_sparse_multilabel(is, d.num_features, d.num_labels);
      if (ds.num_features != d.num_features || ds.num_labels != d.num_labels)
        throw DataError("split '" + s + "' exceeds the recorded feature/label counts");
      d.splits[s] = to_examples(ds, next_id);
    } else if (d.task == "tagging") {
      std::istringstream toks(file(s + ".tokens")), tags(file(s + ".tags"));
      auto ds = read_tagging(toks, tags, d.vocab_size, d.num_tags);
      if (!ds.items.empty() && ds.max_len != d.max_len) throw DataError("split '" + s + "' has the wrong length");
      ds.max_len = d.max_len;
      d.splits[s] = to_examples(ds, next_id);
    } else {
      const std::string imname = detail::image_file(c, s);
      std::istringstream im(file(imname));
      const auto images = c.str("data.image_format") == "pgm" ? shapes::read_images_pgm(im)
                                                               : shapes::read_images_binary(im);
      std::istringstream pr(file(s + ".programs"));
      const auto progs = shapes::read_programs(pr);
      if (images.size() != progs.size()) throw DataError("split '" + s + "': image/program count mismatch");
      ShapeDataset ds{d.vocab, {}};
      for (std::size_t k = 0; k < images.size(); ++k) {
        if (progs[k].size() != static_cast<std::size_t>(d.vocab->program_length()) ||
            !shapes::validate(*d.vocab, progs[k]))
          throw DataError("split '" + s + "' program " + std::to_string(k + 1) + " is not valid");
        ds.items.push_back({images[k], progs[k]});
      }
      d.splits[s] = to_examples(ds, next_id);
    }
    next_id += d.splits[s].size();
  }
  return d;
}

inline TaskData load_or_generate(const Config& c) {
  detail::check_task(c.str("task.name"));
  return c.str("data.dir").empty() ? generate_data(c) : load_data(c, c.str("data.dir"));
}

// ---- models and rewards ---------------------------------------------------------

inline ModelDescriptor make_descriptor(const Config& c, const TaskData& d) {
  ModelDescriptor m;
  m.feature_hidden = c.int32("model.feature_hidden");
  m.feature_dim = c.int32("model.feature_dim");
  m.global_hidden = c.int32("model.global_hidden");
  m.embed_dim = c.int32("model.embed_dim");
  m.pair_hidden = c.int32("model.pair_hidden");
  m.pool = c.int32("model.pool");
  m.token_dim = c.int32("model.token_dim");
  m.program_hidden = c.int32("model.program_hidden");
  m.program_embed = c.int32("model.program_embed");
  m.image_hidden = c.int32("model.image_hidden");
  m.image_embed = c.int32("model.image_embed");
  m.joint_hidden = c.int32("model.joint_hidden");
  m.init_gain = c.real("model.init_gain");
  if (d.task == "multilabel") {
    m.arch = Architecture::multi_label;
    m.num_features = d.num_features;
    m.num_labels = d.num_labels;
  } else if (d.task == "tagging") {
    m.arch = Architecture::sequence;
    m.token_vocab = d.vocab_size;
    m.seq_len = d.max_len;
    m.num_tags = d.num_tags;
  } else {
    m.arch = Architecture::program;
    m.image_size = d.vocab->canvas();
    m.program_length = d.vocab->program_length();
    m.program_vocab = static_cast<int>(d.vocab->size());
  }
  m.validate();
  return m;
}

/// The reward used for training and for the logged train/eval reward.
inline std::unique_ptr<RewardFunction> make_reward(const Config& c, const TaskData& d) {
  std::string r = c.str("task.reward");
  if (r == "auto") r = d.task == "multilabel" ? "f1" : d.task == "tagging" ? "rules" : "iou";
  auto need = [&](const char* task) {
    if (d.task != task) throw ConfigError("task.reward '" + r + "' does not apply to task '" + d.task + "'");
  };
  if (r == "f1") {
    need("multilabel");
    return std::make_unique<F1Reward>();
  }
  if (r == "rules") {
    need("tagging");
    return std::make_unique<RuleReward>(*d.rules);
  }
  if (r == "token_accuracy") {
    need("tagging");
    return std::make_unique<TokenAccuracyReward>();
  }
  if (r == "iou") {
    need("shapes");
    return std::make_unique<IouReward>(d.vocab);
  }
  throw ConfigError("config key 'task.reward': unknown reward '" + r + "'");
}

/// The task's reported metric: F1, token accuracy or IOU against the gold output.
inline std::unique_ptr<RewardFunction> make_metric(const TaskData& d) {
  if (d.task == "multilabel") return std::make_unique<F1Reward>();
  if (d.task == "tagging") return std::make_unique<TokenAccuracyReward>();
  return std::make_unique<IouReward>(d.vocab);
}

/// Seeded subset of the training split used as labels in semi-supervised mode.
inline LabelSet pick_labels(const std::vector<Example>& train, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed, "labels");
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(train.size())));
  LabelSet out;
  for (std::size_t j = 0; j < k; ++j) {
    const auto& ex = train[idx[j]];
    if (!ex.reference) throw DataError("semi-supervised: example " + std::to_string(ex.id) + " has no gold output");
    out.emplace(ex.id, *ex.reference);
  }
  return out;
}

// ---- commands -------------------------------------------------------------------

struct GenDataResult {
  TaskData data;
  fs::path dir;
};

inline GenDataResult run_gen_data(const Config& c) {
  const fs::path dir = c.str("output.dir");
  TaskData d = generate_data(c);
  write_data(d, c, dir);
  return {std::move(d), dir};
}

struct TrainResult {
  RunHistory history;
  fs::path dir;
  double seconds = 0.0;
  std::map<std::string, std::string> checksums;
};

/// Trains per the config and writes manifest.json, metrics.csv,
/// constraints.csv, steps.csv and checkpoints into output.dir. With zero
/// epochs only the manifest is written.
inline TrainResult run_train(const Config& c, std::ostream* log = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string started = now_utc();
  const TrainConfig tc = train_config(c);
  if (c.str("train.algorithm") == "beam") throw ConfigError("train.algorithm 'beam' is evaluation-only");
  const int checkpoint_every = c.int32("train.checkpoint_every");
  const TaskData d = load_or_generate(c);
  const auto& train_set = d.split("train");
  const std::string eval_name = c.str("data.eval_split");
  static const std::vector<Example> kNone;
  const auto& eval_set = d.splits.count(eval_name) ? d.split(eval_name) : kNone;
  if (eval_name != "train" && !d.splits.count(eval_name) && log)
    *log << "warning: no '" << eval_name << "' split, eval_reward will be NaN\n";
  if (train_set.empty()) throw DataError("training split is empty");
  const auto reward = make_reward(c, d);
  const ModelDescriptor desc = make_descriptor(c, d);
  Rng init = make_rng(tc.seed, "init");
  EnergyModel model(desc, init);

  TrainResult res;
  res.dir = c.str("output.dir");
  res.checksums = d.checksums();
  fs::create_directories(res.dir);
  std::ostringstream echo;
  c.write(echo);

  TrainHooks hooks;
  hooks.evaluate_train = c.boolean("train.evaluate_train");
  if (tc.semi_supervised)
    hooks.step = semi_supervised_wrap(make_step(tc.algorithm),
                                      pick_labels(train_set, c.real("train.label_fraction"), tc.seed));
  hooks.on_epoch_end = [&](const EpochStats& e, const EnergyModel& m) {
    if (log)
      *log << "epoch " << e.epoch << " loss " << e.loss << " train " << e.train_reward << " eval " << e.eval_reward
           << " constraints " << e.constraints << " budget " << e.mean_budget << '\n';
    if (checkpoint_every > 0 && e.epoch % checkpoint_every == 0) {
      fs::create_directories(res.dir / "checkpoints");
      std::ofstream os(res.dir / "checkpoints" / ("epoch_" + std::to_string(e.epoch) + ".model"), std::ios::binary);
      write_model(os, m, echo.str());
    }
  };
  if (tc.epochs > 0) res.history = train(model, train_set, eval_set, *reward, tc, hooks);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json j;
  j["format"] = "sgspen-run 1";
  j["command"] = "train";
  j["config"] = c.to_json();
  j["seed"] = tc.seed;
  j["data_seed"] = c.seed("data.seed");
  j["data_checksums"] = res.checksums;
  j["started_at"] = started;
  j["wall_clock_seconds"] = res.seconds;
  j["reward"] = reward->name();
  j["counts"] = {{"train", train_set.size()}, {"eval", eval_set.size()}};
  if (tc.epochs > 0) {
    auto finite = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    const auto& last = res.history.epochs.back();
    j["final"] = {{"epoch", last.epoch}, {"train_reward", finite(last.train_reward)},
                  {"eval_reward", finite(last.eval_reward)}, {"loss", finite(last.loss)}};
    j["outputs"] = {"metrics.csv", "constraints.csv", "steps.csv", "model.ckpt"};
    std::ofstream m(res.dir / "metrics.csv"), cs(res.dir / "constraints.csv"), st(res.dir / "steps.csv");
    write_metrics_csv(m, res.history);
    write_constraints_csv(cs, res.history);
    write_steps_csv(st, res.history);
    std::ofstream ck(res.dir / "model.ckpt", std::ios::binary);
    write_model(ck, model, echo.str());
  } else {
    j["outputs"] = json::array();
  }
  write_text(res.dir / "manifest.json", j.dump(2) + "\n");
  return res;
}

/// Re-runs the config recorded in a run manifest and checks that the data
/// regenerate to the recorded checksums.
inline TrainResult rerun_from_manifest(const fs::path& manifest, const std::optional<fs::path>& out_dir,
                                       std::ostream* log = nullptr) {
  Config c = Config::from_manifest(manifest);
  if (out_dir) c.set("output.dir", out_dir->string());
  json j = json::parse(read_text(manifest));
  const auto recorded = j.value("data_checksums", std::map<std::string, std::string>{});
  const auto now = load_or_generate(c).checksums();
  if (!recorded.empty() && recorded != now) throw DataError("data checksums differ from manifest '" + manifest.string() + "'");
  return run_train(c, log);
}

struct EvalRow {
  std::size_t example_id = 0;
  double reward = 0.0;
  double metric = 0.0;
  double seconds = 0.0;
};

struct EvalReport {
  std::string split;
  std::string method;
  std::vector<EvalRow> rows;
  double mean_reward = 0.0;
  double mean_metric = 0.0;
  double mean_seconds = 0.0;
  std::uint64_t reward_queries = 0;  // beam search only
};

inline void write_eval(const EvalReport& r, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream ex(dir / "eval_examples.csv");
  ex.precision(17);
  ex << "example,reward,metric,seconds\n";
  for (const auto& row : r.rows)
    ex << row.example_id << ',' << row.reward << ',' << row.metric << ',' << row.seconds << '\n';
  std::ofstream sm(dir / "eval_summary.csv");
  sm.precision(17);
  sm << "split,method,n,mean_reward,mean_metric,mean_seconds,reward_queries\n";
  sm << r.split << ',' << r.method << ',' << r.rows.size() << ',' << r.mean_reward << ',' << r.mean_metric << ','
     << r.mean_seconds << ',' << r.reward_queries << '\n';
}

/// Evaluates a checkpoint (or, with train.algorithm = beam, reward-only beam
/// search) on one split. Reward is the training reward, metric the task metric.
inline EvalReport run_eval(const Config& c, const std::optional<fs::path>& checkpoint, const std::string& split_name) {
  const TaskData d = load_or_generate(c);
  const auto& examples = d.split(split_name);
  if (examples.empty()) throw DataError("split '" + split_name + "' is empty");
  const auto reward = make_reward(c, d);
  const auto metric = make_metric(d);
  EvalReport rep;
  rep.split = split_name;
  using clock = std::chrono::steady_clock;

  if (c.str("train.algorithm") == "beam") {
    rep.method = "beam";
    const BeamConfig bc = beam_config(c);
    const std::uint64_t seed = c.seed("train.seed");
    for (const auto& ex : examples) {
      Rng rng = make_rng(seed, "beam", ex.id);
      const auto t0 = clock::now();
      const auto br = iterative_beam_search(*reward, ex, d.space(), bc, rng);
      const double secs = std::chrono::duration<double>(clock::now() - t0).count();
      rep.reward_queries += br.reward_queries;
      rep.rows.push_back({ex.id, br.best_reward, (*metric)(ex, br.best), secs});
    }
  } else {
    if (!checkpoint) throw ConfigError("eval: a checkpoint is required unless train.algorithm = beam");
    std::ifstream is(*checkpoint, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint '" + checkpoint->string() + "'");
    const EnergyModel model = read_model(is);
    if (!(model.space() == d.space())) throw DataError("checkpoint output space does not match the task data");
    const InferenceConfig ic = train_config(c).prediction();
    rep.method = c.str("train.algorithm");
    for (const auto& ex : examples) {
      const auto t0 = clock::now();
      const auto y = predict(model, ex.input, ic);
      const double secs = std::chrono::duration<double>(clock::now() - t0).count();
      rep.rows.push_back({ex.id, (*reward)(ex, y), (*metric)(ex, y), secs});
    }
  }
  for (const auto& r : rep.rows) {
    rep.mean_reward += r.reward;
    rep.mean_metric += r.metric;
    rep.mean_seconds += r.seconds;
  }
  const auto n = static_cast<double>(rep.rows.size());
  rep.mean_reward /= n;
  rep.mean_metric /= n;
  rep.mean_seconds /= n;
  return rep;
}

struct SweepRow {
  std::string value;
  fs::path dir;
  double final_train_reward = 0.0;
  double final_eval_reward = 0.0;
  double best_eval_reward = 0.0;
  double mean_train_reward = 0.0;
};

/// One training run per value, sequentially, in <output.dir>/<key>=<value>,
/// plus comparison.csv.
inline std::vector<SweepRow> run_sweep(const Config& base, const std::string& key,
                                       const std::vector<std::string>& values, std::ostream* log = nullptr) {
  if (!known_keys().count(key)) throw ConfigError("sweep: unknown config key '" + key + "'");
  if (key == "output.dir") throw ConfigError("sweep: cannot sweep output.dir");
  if (values.empty()) throw ConfigError("sweep: no values");
  const fs::path root = base.str("output.dir");
  // Validate every value before spending time on any run.
  std::vector<Config> configs;
  for (const auto& v : values) {
    Config c = base;
    c.set(key, v);
    c.set("output.dir", (root / (key + "=" + v)).string());
    train_config(c);
    const auto& def = known_keys().at(key).def;
    if (!def.empty() && def.find_first_not_of("0123456789.-e") == std::string::npos) c.real(key);
    configs.push_back(std::move(c));
  }
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    if (log) *log << "== " << key << " = " << values[i] << '\n';
    const auto r = run_train(configs[i], log);
    SweepRow row{values[i], r.dir, NAN, NAN, NAN, NAN};
    if (!r.history.epochs.empty()) {
      row.final_train_reward = r.history.epochs.back().train_reward;
      row.final_eval_reward = r.history.epochs.back().eval_reward;
      row.best_eval_reward = -INFINITY;
      row.mean_train_reward = 0.0;
      for (const auto& e : r.history.epochs) {
        row.best_eval_reward = std::max(row.best_eval_reward, e.eval_reward);
        row.mean_train_reward += e.train_reward;
      }
      row.mean_train_reward /= static_cast<double>(r.history.epochs.size());
    }
    rows.push_back(row);
  }
  fs::create_directories(root);
  std::ofstream os(root / "comparison.csv");
  os.precision(17);
  os << "key,value,dir,final_train_reward,final_eval_reward,best_eval_reward,mean_train_reward\n";
  for (const auto& r : rows)
    os << key << ',' << r.value << ',' << r.dir.filename().string() << ',' << r.final_train_reward << ','
       << r.final_eval_reward << ',' << r.best_eval_reward << ',' << r.mean_train_reward << '\n';
  return rows;
}

/// Human-readable summary of a run directory or manifest file.
inline void inspect(const fs::path& target, std::ostream& os) {
  const fs::path dir = fs::is_directory(target) ? target : target.parent_path();
  const fs::path manifest = fs::is_directory(target) ? target / "manifest.json" : target;
  json j;
  try {
    j = json::parse(read_text(manifest));
  } catch (const json::exception& e) {
    throw DataError("manifest '" + manifest.string() + "': " + e.what());
  }
  os << "manifest: " << manifest.string() << '\n';
  for (const char* k : {"format", "command", "task", "seed", "data_seed", "reward", "started_at", "created_at",
                        "wall_clock_seconds"})
    if (j.contains(k)) os << "  " << k << ": " << j[k].dump() << '\n';
  for (const char* k : {"counts", "final", "data_checksums", "checksums"})
    if (j.contains(k)) os << "  " << k << ": " << j[k].dump() << '\n';
  if (j.contains("config")) {
    os << "config:\n";
    for (const auto& [k, v] : j["config"].items()) os << "  " << k << " = " << v.get<std::string>() << '\n';
  }

  const fs::path cons = dir / "constraints.csv";
  if (!fs::exists(cons)) return;
  std::ifstream is(cons);
  std::string line;
  std::getline(is, line);
  std::map<std::string, long> by_source;
  long rows = 0, informative = 0, violated = 0, queries = 0, searched = 0;
  while (std::getline(is, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 9) throw DataError("constraints.csv: malformed row " + std::to_string(rows + 2));
    ++rows;
    ++by_source[f[2]];
    informative += f[3] == "1";
    violated += f[4] == "1";
    const long q = std::stol(f[8]);
    if (q > 0) {
      ++searched;
      queries += q;
    }
  }
  os << "constraints: " << rows << " records, " << informative << " informative, " << violated << " violated\n";
  for (const auto& [s, n] : by_source) os << "  " << s << ": " << n << '\n';
  if (searched > 0)
    os << "  mean search queries: " << static_cast<double>(queries) / static_cast<double>(searched) << '\n';
}

}  // namespace sgspen::experiment
