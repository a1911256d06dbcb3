#pragma once

#include <cmath>
#include <optional>
#include <ostream>
#include <random>
#include <string>

#include "sgspen/errors.hpp"
#include "sgspen/rewards.hpp"
#include "sgspen/rng.hpp"
#include "sgspen/structured_output.hpp"

namespace sgspen {

/// What to do after a proposal lowers the reward.
enum class RestartMode {
  revert,  // undo the last change, keep proposing from the retained candidate
  reset,   // go back to the start point
};

struct SearchConfig {
  double delta = 0.01;
  int budget = 100;
  RestartMode restart = RestartMode::revert;

  void validate() const {
    if (!(delta > 0)) throw ConfigError("search: delta must be positive");
    if (budget < 1) throw ConfigError("search: budget must be >= 1");
  }
};

struct SearchOutcome {
  std::optional<DiscreteOutput> result;
  int queries_used = 0;
  double start_reward = 0.0;
  double found_reward = 0.0;  // best reward seen when result is empty
};

namespace detail {

inline double checked_reward(const RewardFunction& reward, const Example& ex, const DiscreteOutput& y) {
  const double r = reward(ex, y);
  if (!(r >= 0.0 && r <= 1.0))
    throw ContractError("reward '" + reward.name() + "' returned " + std::to_string(r) + " outside [0,1]");
  return r;
}

}  // namespace detail

/// Randomized local search for an output whose reward beats the start by
/// more than delta, within a fixed number of reward queries (the start point
/// costs one).
///
/// Each proposal resamples one uniformly chosen variable to a different
/// uniformly chosen state. Non-decreasing proposals are kept and mutation
/// continues from them; decreasing proposals are undone.
inline SearchOutcome truncated_search(const RewardFunction& reward, const Example& ex, const DiscreteOutput& start,
                                      const SearchConfig& cfg, Rng& rng) {
  cfg.validate();
  SearchOutcome out;
  out.start_reward = detail::checked_reward(reward, ex, start);
  out.queries_used = 1;
  out.found_reward = out.start_reward;
  const double target = out.start_reward + cfg.delta;

  DiscreteOutput current = start;
  double current_reward = out.start_reward;
  const auto& space = start.space;
  std::uniform_int_distribution<std::size_t> pick_var(0, space.num_vars() - 1);

  while (out.queries_used < cfg.budget) {
    const std::size_t i = pick_var(rng);
    const int k = space.num_states(i);
    const int old = current.states[i];
    std::uniform_int_distribution<int> pick_state(0, k - 2);
    int s = pick_state(rng);
    if (s >= old) ++s;
    current.states[i] = s;

    const double r = detail::checked_reward(reward, ex, current);
    ++out.queries_used;
    if (r > target) {
      out.found_reward = r;
      out.result = std::move(current);
      return out;
    }
    out.found_reward = std::max(out.found_reward, r);
    if (r >= current_reward) {
      current_reward = r;
    } else if (cfg.restart == RestartMode::revert) {
      current.states[i] = old;
    } else {
      current = start;
      current_reward = out.start_reward;
    }
  }
  return out;
}

/// CSV line: example id, queries_used, start_reward, found_reward, success.
inline void write_search_log_line(std::ostream& os, std::size_t example_id, const SearchOutcome& o) {
  os << example_id << ',' << o.queries_used << ',' << o.start_reward << ',' << o.found_reward << ','
     << (o.result ? 1 : 0) << '\n';
}

}  // namespace sgspen
