#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace nas {

// Error taxonomy. The CLI maps these onto exit codes: config/parse -> 2,
// data -> 3, anything else -> 4.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define NAS_CHECK(cond, ExcType, msg)      \
  do {                                     \
    if (!(cond)) throw ExcType(msg);       \
  } while (0)

// Shortest exact decimal form of a double. Used everywhere numbers are
// written to CSV/JSON so reruns are byte-identical and values round-trip.
inline std::string fmt_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  return buf;
}

inline constexpr const char* kCodeVersion = "0.1.0";

}  // namespace nas
