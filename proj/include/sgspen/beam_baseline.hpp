#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <set>
#include <vector>

#include "sgspen/errors.hpp"
#include "sgspen/rewards.hpp"
#include "sgspen/rng.hpp"
#include "sgspen/search.hpp"
#include "sgspen/structured_output.hpp"

namespace sgspen {

struct BeamConfig {
  int width = 5;
  int restarts = 10;
  int stall_rounds = 10;
  int max_iterations = 1000;

  void validate() const {
    if (width < 1) throw ConfigError("beam: width must be >= 1");
    if (restarts < 1) throw ConfigError("beam: restarts must be >= 1");
    if (stall_rounds < 1) throw ConfigError("beam: stall_rounds must be >= 1");
    if (max_iterations < 1) throw ConfigError("beam: max_iterations must be >= 1");
  }
};

struct BeamResult {
  DiscreteOutput best;
  double best_reward = 0.0;
  std::uint64_t reward_queries = 0;
  /// Best-of-beam reward after each iteration, restarts concatenated.
  std::vector<double> best_per_iteration;
  std::vector<double> initial_rewards;
};

/// Iterative beam search over the reward alone. Each restart starts from one
/// random output; every iteration scores the beam plus all its single-variable
/// substitutions and keeps the top `width` (ties broken by lexicographic
/// output order). A restart stops once the beam has not changed for
/// `stall_rounds` consecutive iterations.
inline BeamResult iterative_beam_search(const RewardFunction& reward, const Example& ex, const OutputSpace& space,
                                        const BeamConfig& cfg, Rng& rng) {
  cfg.validate();
  struct Scored {
    double r;
    std::vector<int> s;
  };
  auto better = [](const Scored& a, const Scored& b) { return a.r != b.r ? a.r > b.r : a.s < b.s; };

  BeamResult res;
  bool have_best = false;
  for (int restart = 0; restart < cfg.restarts; ++restart) {
    std::vector<int> init(space.num_vars());
    for (std::size_t i = 0; i < init.size(); ++i)
      init[i] = std::uniform_int_distribution<int>(0, space.num_states(i) - 1)(rng);
    const double r0 = detail::checked_reward(reward, ex, DiscreteOutput(space, init));
    ++res.reward_queries;
    res.initial_rewards.push_back(r0);

    std::vector<Scored> beam{{r0, init}};
    int stable = 0;
    for (int it = 0; it < cfg.max_iterations && stable < cfg.stall_rounds; ++it) {
      std::set<std::vector<int>> pool;
      for (const auto& b : beam) {
        pool.insert(b.s);
        auto s = b.s;
        for (std::size_t i = 0; i < s.size(); ++i) {
          const int orig = s[i];
          for (int k = 0; k < space.num_states(i); ++k) {
            if (k == orig) continue;
            s[i] = k;
            pool.insert(s);
          }
          s[i] = orig;
        }
      }
      std::vector<Scored> scored;
      scored.reserve(pool.size());
      for (const auto& s : pool) {
        scored.push_back({detail::checked_reward(reward, ex, DiscreteOutput(space, s)), s});
        ++res.reward_queries;
      }
      const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(cfg.width), scored.size());
      std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), better);
      scored.resize(keep);

      const bool same = scored.size() == beam.size() &&
                        std::equal(scored.begin(), scored.end(), beam.begin(),
                                   [](const Scored& a, const Scored& b) { return a.s == b.s; });
      stable = same ? stable + 1 : 0;
      beam = std::move(scored);
      res.best_per_iteration.push_back(beam.front().r);
    }
    const Scored& top = beam.front();
    if (!have_best || better(top, Scored{res.best_reward, res.best.states})) {
      res.best = DiscreteOutput(space, top.s);
      res.best_reward = top.r;
      have_best = true;
    }
  }
  return res;
}

}  // namespace sgspen
