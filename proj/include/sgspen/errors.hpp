#pragma once

#include <stdexcept>
#include <string>

namespace sgspen {

/// Bad or unknown configuration keys/values. CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed files, dimension mismatches between data and models. CLI exit code 3.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite values during inference or training. CLI exit code 4.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A caller broke a documented contract (e.g. a reward outside [0,1]).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace sgspen
