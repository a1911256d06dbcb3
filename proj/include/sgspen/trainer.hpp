#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sgspen/energy_models.hpp"
#include "sgspen/errors.hpp"
#include "sgspen/inference.hpp"
#include "sgspen/rewards.hpp"
#include "sgspen/rng.hpp"
#include "sgspen/search.hpp"

namespace sgspen {

enum class Algorithm { sg_spen, r_spen, dvn };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::sg_spen: return "sg_spen";
    case Algorithm::r_spen: return "r_spen";
    case Algorithm::dvn: return "dvn";
  }
  return "?";
}

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "sg_spen") return Algorithm::sg_spen;
  if (s == "r_spen") return Algorithm::r_spen;
  if (s == "dvn") return Algorithm::dvn;
  throw ConfigError("unknown algorithm '" + s + "'");
}

/// Target sign for value matching. `corrected` fits E ~ -alpha R so that
/// low energy means high reward; `literal` fits E ~ +alpha R.
enum class DvnSign { corrected, literal };

struct TrainConfig {
  Algorithm algorithm = Algorithm::sg_spen;
  double eta = 0.5;
  std::optional<double> sigma;  // unset: 2 * eta
  int inference_steps = 20;
  double delta = 0.01;
  int budget = 100;
  RestartMode restart = RestartMode::revert;
  double alpha = 100.0;
  double c = 1e-4;
  double lambda = 1e-3;
  int batch_size = 20;
  int epochs = 10;
  std::uint64_t seed = 1;
  bool semi_supervised = false;
  DvnSign dvn_sign = DvnSign::corrected;
  /// Rescale the full parameter gradient to this L2 norm when it is larger;
  /// 0 disables.
  double clip_norm = 0.0;

  double effective_sigma() const { return sigma ? *sigma : 2.0 * eta; }

  InferenceConfig sampling() const { return {inference_steps, eta, effective_sigma(), false}; }
  InferenceConfig prediction() const { return {inference_steps, eta, 0.0, false}; }
  SearchConfig search() const { return {delta, budget, restart}; }

  void validate() const {
    if (!(alpha > 1)) throw ConfigError("train: alpha must be > 1");
    if (!(c >= 0)) throw ConfigError("train: c must be >= 0");
    if (!(lambda > 0)) throw ConfigError("train: lambda must be > 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (!(effective_sigma() >= 0)) throw ConfigError("train: sigma must be >= 0");
    if (!(clip_norm >= 0)) throw ConfigError("train: clip_norm must be >= 0");
    sampling().validate();
    search().validate();
  }
};

/// Where the better element of a training pair came from.
enum class PairSource { search, label, trajectory, skipped, value };

inline const char* to_string(PairSource s) {
  switch (s) {
    case PairSource::search: return "search";
    case PairSource::label: return "label";
    case PairSource::trajectory: return "trajectory";
    case PairSource::skipped: return "skipped";
    case PairSource::value: return "value";
  }
  return "?";
}

struct ConstraintRecord {
  std::uint64_t step = 0;
  std::size_t example_id = 0;
  PairSource source = PairSource::skipped;
  bool informative = false;  // pair with different rewards
  bool violated = false;     // xi > 0
  double xi = 0.0;
  double reward_lo = 0.0;    // R(y_hat), or the sample's reward for value matching
  double reward_hi = 0.0;    // R(y_n); best reward seen for failed searches
  int queries_used = 0;      // search queries, 0 when no search ran
};

struct StepResult {
  double loss = 0.0;
  std::vector<ConstraintRecord> records;
};

using LabelSet = std::map<std::size_t, DiscreteOutput>;

struct StepContext {
  std::uint64_t seed = 1;
  std::uint64_t step = 0;
  const LabelSet* labels = nullptr;

  const DiscreteOutput* label_for(const Example& ex) const {
    if (!labels) return nullptr;
    auto it = labels->find(ex.id);
    return it == labels->end() ? nullptr : &it->second;
  }
};

using StepFn = std::function<StepResult(EnergyModel&, std::span<const Example>, const RewardFunction&,
                                        const TrainConfig&, const StepContext&)>;

namespace detail {

/// Adds c||w||^2 to the loss and 2cw to the gradient, checks finiteness and
/// takes one plain gradient step.
inline double regularize_and_update(EnergyModel& model, ParamSet& grad, double loss, const TrainConfig& cfg) {
  const ParamSet& w = model.params();
  loss += cfg.c * w.squared_norm();
  if (!std::isfinite(loss)) throw NumericError("training: non-finite loss");
  grad.axpy(2.0 * cfg.c, w);
  if (!grad.all_finite()) throw NumericError("training: non-finite parameter gradient");
  if (cfg.clip_norm > 0) {
    const double norm = std::sqrt(grad.squared_norm());
    if (norm > cfg.clip_norm) grad.scale(cfg.clip_norm / norm);
  }
  model.mutable_params().axpy(-cfg.lambda, grad);
  return loss;
}

inline double checked_energy(const EnergyModel& model, const InputInstance& x, const DiscreteOutput& y) {
  const double e = model.energy(x, one_hot(y));
  if (!std::isfinite(e)) throw NumericError("training: non-finite energy");
  return e;
}

/// Hinge on one pair: xi = alpha * gap - E(lo) + E(hi). Accumulates the
/// gradient when violated; returns xi.
inline double hinge_pair(const EnergyModel& model, const InputInstance& x, const DiscreteOutput& lo,
                         const DiscreteOutput& hi, double margin, ParamSet& grad) {
  const double xi = margin - checked_energy(model, x, lo) + checked_energy(model, x, hi);
  if (xi > 0) {
    model.accumulate_grad_w(x, one_hot(lo), -1.0, grad);
    model.accumulate_grad_w(x, one_hot(hi), +1.0, grad);
  }
  return xi;
}

inline void check_label(const EnergyModel& model, const DiscreteOutput& label) {
  if (!(label.space == model.space())) throw DataError("semi-supervised label: output space mismatch");
}

}  // namespace detail

/// One SG-SPEN update on a mini-batch.
///
/// Per example: sample y_hat from the energy (noisy inference, rounded),
/// search the reward for y_n with R(y_n) > R(y_hat) + delta (or take the
/// label when one is supplied), and add the hinge
///   max(0, alpha (R(y_n) - R(y_hat)) - E(x, y_hat) + E(x, y_n)).
/// Examples where search fails are skipped. Then the regularizer and one
/// gradient step with rate lambda.
inline StepResult sg_spen_step(EnergyModel& model, std::span<const Example> batch, const RewardFunction& reward,
                               const TrainConfig& cfg, const StepContext& ctx) {
  StepResult res;
  ParamSet grad = model.params().zeros_like();
  double hinge = 0.0;
  for (const auto& ex : batch) {
    Rng inf_rng = make_rng(ctx.seed, "inference", ctx.step, ex.id);
    const DiscreteOutput y_hat = sample(model, ex.input, cfg.sampling(), inf_rng);

    ConstraintRecord rec;
    rec.step = ctx.step;
    rec.example_id = ex.id;
    std::optional<DiscreteOutput> y_n;
    if (const DiscreteOutput* label = ctx.label_for(ex)) {
      detail::check_label(model, *label);
      rec.source = PairSource::label;
      rec.reward_lo = detail::checked_reward(reward, ex, y_hat);
      rec.reward_hi = detail::checked_reward(reward, ex, *label);
      if (!(*label == y_hat)) y_n = *label;
    } else {
      Rng search_rng = make_rng(ctx.seed, "search", ctx.step, ex.id);
      const SearchOutcome out = truncated_search(reward, ex, y_hat, cfg.search(), search_rng);
      rec.queries_used = out.queries_used;
      rec.reward_lo = out.start_reward;
      rec.reward_hi = out.found_reward;
      if (out.result) {
        rec.source = PairSource::search;
        y_n = *out.result;
      }
    }
    if (y_n) {
      rec.informative = rec.reward_hi != rec.reward_lo;
      const double margin = cfg.alpha * std::max(0.0, rec.reward_hi - rec.reward_lo);
      rec.xi = detail::hinge_pair(model, ex.input, y_hat, *y_n, margin, grad);
      rec.violated = rec.xi > 0;
      if (rec.violated) hinge += rec.xi;
    } else {
      rec.source = rec.source == PairSource::label ? PairSource::label : PairSource::skipped;
    }
    res.records.push_back(rec);
  }
  res.loss = detail::regularize_and_update(model, grad, hinge, cfg);
  return res;
}

/// Rank-based baseline: pairs consecutive points of a noisy inference
/// trajectory whose rewards differ and applies the same margin hinge to
/// each pair. A label, when supplied, replaces the trajectory pairs with the
/// single pair (final sample, label).
inline StepResult r_spen_step(EnergyModel& model, std::span<const Example> batch, const RewardFunction& reward,
                              const TrainConfig& cfg, const StepContext& ctx) {
  StepResult res;
  ParamSet grad = model.params().zeros_like();
  double hinge = 0.0;
  InferenceConfig icfg = cfg.sampling();
  icfg.record_trajectory = true;
  auto add_pair = [&](const Example& ex, const DiscreteOutput& a, double ra, const DiscreteOutput& b, double rb,
                      PairSource src) {
    ConstraintRecord rec;
    rec.step = ctx.step;
    rec.example_id = ex.id;
    rec.source = src;
    const bool a_lo = ra <= rb;
    const DiscreteOutput& lo = a_lo ? a : b;
    const DiscreteOutput& hi = a_lo ? b : a;
    rec.reward_lo = std::min(ra, rb);
    rec.reward_hi = std::max(ra, rb);
    rec.informative = ra != rb;
    rec.xi = detail::hinge_pair(model, ex.input, lo, hi, cfg.alpha * (rec.reward_hi - rec.reward_lo), grad);
    rec.violated = rec.xi > 0;
    if (rec.violated) hinge += rec.xi;
    res.records.push_back(rec);
  };

  for (const auto& ex : batch) {
    Rng inf_rng = make_rng(ctx.seed, "inference", ctx.step, ex.id);
    const auto traj = infer(model, ex.input, icfg, &inf_rng).trajectory;
    if (const DiscreteOutput* label = ctx.label_for(ex)) {
      detail::check_label(model, *label);
      const DiscreteOutput last = round(traj.points.back());
      if (!(last == *label)) {
        const double r_last = detail::checked_reward(reward, ex, last);
        const double r_label = detail::checked_reward(reward, ex, *label);
        // Ground truth is the preferred element regardless of reward ties.
        add_pair(ex, last, std::min(r_last, r_label), *label, std::max(r_last, r_label), PairSource::label);
      }
      continue;
    }
    std::optional<DiscreteOutput> prev;
    double prev_r = 0.0;
    for (const auto& point : traj.points) {
      DiscreteOutput cur = round(point);
      if (prev && cur == *prev) continue;
      const double r = detail::checked_reward(reward, ex, cur);
      if (prev && r != prev_r) add_pair(ex, *prev, prev_r, cur, r, PairSource::trajectory);
      prev = std::move(cur);
      prev_r = r;
    }
  }
  res.loss = detail::regularize_and_update(model, grad, hinge, cfg);
  return res;
}

/// Value-matching baseline: squared error between the energy of a rounded
/// noisy-inference sample and -alpha R (or +alpha R with the literal sign).
/// Labelled examples also fit the label.
inline StepResult dvn_step(EnergyModel& model, std::span<const Example> batch, const RewardFunction& reward,
                           const TrainConfig& cfg, const StepContext& ctx) {
  StepResult res;
  ParamSet grad = model.params().zeros_like();
  const double sign = cfg.dvn_sign == DvnSign::corrected ? -1.0 : 1.0;
  double sq = 0.0;
  auto fit = [&](const Example& ex, const DiscreteOutput& y, PairSource src) {
    const double r = detail::checked_reward(reward, ex, y);
    const double target = sign * cfg.alpha * r;
    const double e = detail::checked_energy(model, ex.input, y);
    const double resid = e - target;
    sq += resid * resid;
    if (resid != 0.0) model.accumulate_grad_w(ex.input, one_hot(y), 2.0 * resid, grad);
    ConstraintRecord rec;
    rec.step = ctx.step;
    rec.example_id = ex.id;
    rec.source = src;
    rec.xi = resid;
    rec.violated = resid != 0.0;
    rec.reward_lo = rec.reward_hi = r;
    res.records.push_back(rec);
  };
  for (const auto& ex : batch) {
    Rng inf_rng = make_rng(ctx.seed, "inference", ctx.step, ex.id);
    fit(ex, sample(model, ex.input, cfg.sampling(), inf_rng), PairSource::value);
    if (const DiscreteOutput* label = ctx.label_for(ex)) {
      detail::check_label(model, *label);
      fit(ex, *label, PairSource::label);
    }
  }
  res.loss = detail::regularize_and_update(model, grad, sq, cfg);
  return res;
}

inline StepFn make_step(Algorithm alg) {
  switch (alg) {
    case Algorithm::sg_spen: return sg_spen_step;
    case Algorithm::r_spen: return r_spen_step;
    case Algorithm::dvn: return dvn_step;
  }
  throw ConfigError("unknown algorithm");
}

/// Uses ground-truth outputs for the examples in `labels` in place of search
/// (SG-SPEN), trajectory pairs (R-SPEN) or as an extra fitted point (DVN).
/// Unlabelled examples behave exactly as in the wrapped step.
inline StepFn semi_supervised_wrap(StepFn step, LabelSet labels) {
  auto owned = std::make_shared<const LabelSet>(std::move(labels));
  return [step = std::move(step), owned](EnergyModel& model, std::span<const Example> batch,
                                         const RewardFunction& reward, const TrainConfig& cfg,
                                         const StepContext& ctx) {
    for (const auto& [id, lab] : *owned) detail::check_label(model, lab);
    StepContext c = ctx;
    c.labels = owned.get();
    return step(model, batch, reward, cfg, c);
  };
}

// ---- evaluation ---------------------------------------------------------------

struct EvalResult {
  double mean_reward = 0.0;
  std::vector<DiscreteOutput> predictions;
  std::vector<double> rewards;
};

inline EvalResult evaluate(const EnergyModel& model, std::span<const Example> examples, const RewardFunction& reward,
                           const InferenceConfig& cfg) {
  EvalResult r;
  double sum = 0.0;
  for (const auto& ex : examples) {
    auto y = predict(model, ex.input, cfg);
    const double v = reward(ex, y);
    sum += v;
    r.rewards.push_back(v);
    r.predictions.push_back(std::move(y));
  }
  r.mean_reward = examples.empty() ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(examples.size());
  return r;
}

// ---- training loop ------------------------------------------------------------

struct StepStats {
  std::uint64_t step = 0;
  int epoch = 0;
  double loss = 0.0;
  int informative = 0;
  int violated = 0;
  int search_calls = 0;
  int search_successes = 0;
  long search_queries = 0;          // over all calls
  long success_queries = 0;         // over successful calls

  double mean_queries_per_success() const {
    return search_successes ? static_cast<double>(success_queries) / search_successes
                            : std::numeric_limits<double>::quiet_NaN();
  }
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;          // mean batch loss
  double train_reward = 0.0;  // mean reward of predictions on the training set
  double eval_reward = 0.0;   // same on the held-out set (NaN if none)
  int constraints = 0;        // informative constraints over the epoch
  int violated = 0;
  double mean_budget = 0.0;   // mean search queries per search call
};

struct RunHistory {
  std::vector<EpochStats> epochs;
  std::vector<StepStats> steps;
  std::vector<ConstraintRecord> records;
};

struct TrainHooks {
  StepFn step;  // default: make_step(cfg.algorithm)
  std::function<void(const EpochStats&, const EnergyModel&)> on_epoch_end;
  bool evaluate_train = true;
};

/// Epoch loop over seeded shuffles of the training set with per-epoch
/// evaluation. Deterministic in (cfg.seed, example order).
inline RunHistory train(EnergyModel& model, std::span<const Example> train_set, std::span<const Example> eval_set,
                        const RewardFunction& reward, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  const StepFn step = hooks.step ? hooks.step : make_step(cfg.algorithm);
  RunHistory hist;
  std::uint64_t global_step = 0;
  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = make_rng(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochStats es;
    es.epoch = epoch;
    double loss_sum = 0.0;
    int batches = 0;
    long calls = 0, queries = 0;
    std::vector<Example> batch;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++k)
        batch.push_back(train_set[order[k]]);
      ++global_step;
      StepContext ctx{cfg.seed, global_step, nullptr};
      StepResult sr = step(model, batch, reward, cfg, ctx);

      StepStats ss;
      ss.step = global_step;
      ss.epoch = epoch;
      ss.loss = sr.loss;
      for (const auto& r : sr.records) {
        ss.informative += r.informative ? 1 : 0;
        ss.violated += r.violated ? 1 : 0;
        if (r.queries_used > 0) {
          ++ss.search_calls;
          ss.search_queries += r.queries_used;
          if (r.source == PairSource::search) {
            ++ss.search_successes;
            ss.success_queries += r.queries_used;
          }
        }
      }
      loss_sum += sr.loss;
      ++batches;
      es.constraints += ss.informative;
      es.violated += ss.violated;
      calls += ss.search_calls;
      queries += ss.search_queries;
      hist.steps.push_back(ss);
      hist.records.insert(hist.records.end(), sr.records.begin(), sr.records.end());
    }
    es.loss = loss_sum / batches;
    es.mean_budget = calls ? static_cast<double>(queries) / static_cast<double>(calls) : 0.0;
    es.train_reward = hooks.evaluate_train ? evaluate(model, train_set, reward, cfg.prediction()).mean_reward
                                           : std::numeric_limits<double>::quiet_NaN();
    es.eval_reward = evaluate(model, eval_set, reward, cfg.prediction()).mean_reward;
    hist.epochs.push_back(es);
    if (hooks.on_epoch_end) hooks.on_epoch_end(es, model);
  }
  return hist;
}

// ---- persistence --------------------------------------------------------------

inline void write_metrics_csv(std::ostream& os, const RunHistory& h) {
  const auto old = os.precision(17);
  os << "epoch,loss,train_reward,eval_reward,constraints,mean_budget\n";
  for (const auto& e : h.epochs)
    os << e.epoch << ',' << e.loss << ',' << e.train_reward << ',' << e.eval_reward << ',' << e.constraints << ','
       << e.mean_budget << '\n';
  os.precision(old);
}

inline void write_constraints_csv(std::ostream& os, const RunHistory& h) {
  const auto old = os.precision(17);
  os << "step,example,source,informative,violated,xi,reward_lo,reward_hi,queries_used\n";
  for (const auto& r : h.records)
    os << r.step << ',' << r.example_id << ',' << to_string(r.source) << ',' << (r.informative ? 1 : 0) << ','
       << (r.violated ? 1 : 0) << ',' << r.xi << ',' << r.reward_lo << ',' << r.reward_hi << ',' << r.queries_used
       << '\n';
  os.precision(old);
}

inline void write_steps_csv(std::ostream& os, const RunHistory& h) {
  const auto old = os.precision(17);
  os << "step,epoch,loss,informative,violated,search_calls,search_successes,search_queries,success_queries\n";
  for (const auto& s : h.steps)
    os << s.step << ',' << s.epoch << ',' << s.loss << ',' << s.informative << ',' << s.violated << ','
       << s.search_calls << ',' << s.search_successes << ',' << s.search_queries << ',' << s.success_queries << '\n';
  os.precision(old);
}

}  // namespace sgspen
