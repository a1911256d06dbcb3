#pragma once

#include <cmath>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "sgspen/energy_models.hpp"
#include "sgspen/errors.hpp"
#include "sgspen/rng.hpp"
#include "sgspen/structured_output.hpp"

namespace sgspen {

struct InferenceConfig {
  int steps = 20;
  double eta = 0.5;
  double sigma = 0.0;
  bool record_trajectory = false;

  void validate() const {
    if (steps < 1) throw ConfigError("inference: steps must be >= 1");
    if (!(eta > 0)) throw ConfigError("inference: eta must be positive");
    if (!(sigma >= 0)) throw ConfigError("inference: sigma must be non-negative");
  }
};

/// Relaxed outputs after each update, with the energy at each of them.
struct Trajectory {
  std::vector<RelaxedOutput> points;
  std::vector<double> energies;
};

struct InferenceResult {
  RelaxedOutput output;
  Trajectory trajectory;
};

/// Exponentiated-gradient descent on the relaxed output, run as plain
/// gradient steps on the logits with the gradient taken w.r.t. the
/// probabilities:  I <- I - eta dE/dy (+ N(0, sigma^2) per logit when sigma > 0).
/// Starts from uniform distributions.
inline InferenceResult infer(const EnergyModel& model, const InputInstance& x, const InferenceConfig& cfg,
                             Rng* rng = nullptr) {
  cfg.validate();
  if (cfg.sigma > 0 && rng == nullptr) throw ContractError("infer: sigma > 0 requires an rng");
  Logits logits = uniform_logits(model.space());
  RelaxedOutput y = softmax(logits);
  auto session = model.session(x);
  OutputGradient grad;
  std::normal_distribution<double> noise(0.0, cfg.sigma > 0 ? cfg.sigma : 1.0);

  InferenceResult res;
  for (int t = 0; t < cfg.steps; ++t) {
    const double e = session.eval(y, grad);
    if (t > 0 && cfg.record_trajectory) res.trajectory.energies.push_back(e);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      auto& li = logits.values[i];
      for (std::size_t k = 0; k < li.size(); ++k) {
        if (!std::isfinite(grad[i][k]))
          throw NumericError("inference: non-finite energy gradient at step " + std::to_string(t) +
                             ", variable " + std::to_string(i));
        li[k] -= cfg.eta * grad[i][k];
        if (cfg.sigma > 0) li[k] += noise(*rng);
      }
      softmax_into(li, y.dists[i]);
    }
    if (cfg.record_trajectory) res.trajectory.points.push_back(y);
  }
  if (cfg.record_trajectory) res.trajectory.energies.push_back(session.energy(y));
  res.output = std::move(y);
  return res;
}

/// Deterministic prediction: noiseless inference, then per-variable argmax.
inline DiscreteOutput predict(const EnergyModel& model, const InputInstance& x, const InferenceConfig& cfg) {
  if (cfg.sigma != 0.0) throw ContractError("predict: sigma must be 0");
  InferenceConfig c = cfg;
  c.record_trajectory = false;
  return round(infer(model, x, c).output);
}

/// One sample from the energy: noisy inference, then per-variable argmax.
inline DiscreteOutput sample(const EnergyModel& model, const InputInstance& x, const InferenceConfig& cfg,
                             Rng& rng) {
  if (!(cfg.sigma > 0)) throw ContractError("sample: sigma must be positive");
  InferenceConfig c = cfg;
  c.record_trajectory = false;
  return round(infer(model, x, c, &rng).output);
}

/// CSV: step,energy,argmax of every variable (space separated).
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  os << "step,energy,argmax\n";
  for (std::size_t t = 0; t < traj.points.size(); ++t) {
    const auto d = round(traj.points[t]);
    os << t + 1 << ',' << traj.energies[t] << ',';
    for (std::size_t i = 0; i < d.size(); ++i) os << (i ? " " : "") << d.states[i];
    os << '\n';
  }
}

}  // namespace sgspen
