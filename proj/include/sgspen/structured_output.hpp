#pragma once

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "sgspen/errors.hpp"
#include "sgspen/tensor.hpp"

namespace sgspen {

/// L discrete variables, variable i taking K[i] states.
class OutputSpace {
 public:
  OutputSpace() = default;
  explicit OutputSpace(std::vector<int> states) : states_(std::move(states)) {
    if (states_.empty()) throw DataError("OutputSpace: need at least one variable");
    for (int k : states_)
      if (k < 2) throw DataError("OutputSpace: every variable needs at least 2 states");
  }
  static OutputSpace uniform(int num_vars, int num_states) {
    return OutputSpace(std::vector<int>(static_cast<std::size_t>(num_vars), num_states));
  }

  std::size_t num_vars() const { return states_.size(); }
  int num_states(std::size_t i) const { return states_[i]; }
  const std::vector<int>& states() const { return states_; }
  std::size_t total_states() const {
    std::size_t n = 0;
    for (int k : states_) n += static_cast<std::size_t>(k);
    return n;
  }

  friend bool operator==(const OutputSpace&, const OutputSpace&) = default;

 private:
  std::vector<int> states_;
};

/// One probability simplex per variable.
struct RelaxedOutput {
  OutputSpace space;
  std::vector<std::vector<double>> dists;

  bool is_valid(double tol = 1e-9) const {
    if (dists.size() != space.num_vars()) return false;
    for (std::size_t i = 0; i < dists.size(); ++i) {
      if (dists[i].size() != static_cast<std::size_t>(space.num_states(i))) return false;
      double s = 0.0;
      for (double p : dists[i]) {
        if (!(p >= 0.0)) return false;
        s += p;
      }
      if (std::abs(s - 1.0) > tol) return false;
    }
    return true;
  }
};

/// Unnormalized log-probabilities; softmax of each row gives a RelaxedOutput.
struct Logits {
  OutputSpace space;
  std::vector<std::vector<double>> values;
};

struct DiscreteOutput {
  OutputSpace space;
  std::vector<int> states;

  DiscreteOutput() = default;
  DiscreteOutput(OutputSpace sp, std::vector<int> st) : space(std::move(sp)), states(std::move(st)) {
    if (states.size() != space.num_vars())
      throw DataError("DiscreteOutput: " + std::to_string(states.size()) + " states for " +
                      std::to_string(space.num_vars()) + " variables");
    for (std::size_t i = 0; i < states.size(); ++i)
      if (states[i] < 0 || states[i] >= space.num_states(i))
        throw DataError("DiscreteOutput: state " + std::to_string(states[i]) +
                        " out of range for variable " + std::to_string(i));
  }

  std::size_t size() const { return states.size(); }
  int operator[](std::size_t i) const { return states[i]; }

  friend bool operator==(const DiscreteOutput& a, const DiscreteOutput& b) {
    return a.states == b.states && a.space == b.space;
  }
  friend bool operator<(const DiscreteOutput& a, const DiscreteOutput& b) {
    return a.states < b.states;
  }
};

/// Per-variable argmax, lowest index on ties.
inline DiscreteOutput round(const RelaxedOutput& y) {
  std::vector<int> st(y.dists.size());
  for (std::size_t i = 0; i < y.dists.size(); ++i) {
    const auto& d = y.dists[i];
    st[i] = static_cast<int>(std::max_element(d.begin(), d.end()) - d.begin());
  }
  return DiscreteOutput(y.space, std::move(st));
}

inline RelaxedOutput one_hot(const DiscreteOutput& d) {
  RelaxedOutput y{d.space, {}};
  y.dists.resize(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    y.dists[i].assign(static_cast<std::size_t>(d.space.num_states(i)), 0.0);
    y.dists[i][static_cast<std::size_t>(d.states[i])] = 1.0;
  }
  return y;
}

inline Logits uniform_logits(const OutputSpace& space) {
  Logits l{space, {}};
  l.values.resize(space.num_vars());
  for (std::size_t i = 0; i < space.num_vars(); ++i)
    l.values[i].assign(static_cast<std::size_t>(space.num_states(i)), 0.0);
  return l;
}

inline RelaxedOutput softmax(const Logits& logits) {
  RelaxedOutput y{logits.space, {}};
  y.dists.reserve(logits.values.size());
  for (const auto& v : logits.values) y.dists.push_back(softmax(std::span<const double>(v)));
  return y;
}

// Text format: one output per line, space-separated state indices.

inline void write_discrete_line(std::ostream& os, const DiscreteOutput& d) {
  for (std::size_t i = 0; i < d.size(); ++i) os << (i ? " " : "") << d.states[i];
  os << '\n';
}

inline DiscreteOutput parse_discrete_line(const std::string& line, const OutputSpace& space) {
  std::istringstream is(line);
  std::vector<int> st;
  int v;
  while (is >> v) st.push_back(v);
  if (!is.eof()) throw DataError("malformed state line: '" + line + "'");
  return DiscreteOutput(space, std::move(st));
}

inline std::vector<DiscreteOutput> read_discrete_outputs(std::istream& is, const OutputSpace& space) {
  std::vector<DiscreteOutput> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_discrete_line(line, space));
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace sgspen
