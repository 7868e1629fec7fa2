#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace saic {

// Error taxonomy, mirrored by CLI exit codes: ConfigError -> 1,
// TrainError -> 2, FormatError -> 3. ContractError means a caller
// violated an API precondition and is a bug, not an input problem.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  format_into(os, rest...);
}
}  // namespace detail

template <typename... Parts>
std::string cat(const Parts&... parts) {
  std::ostringstream os;
  detail::format_into(os, parts...);
  return os.str();
}

template <typename... Parts>
void check_contract(bool ok, const Parts&... parts) {
  if (!ok) throw ContractError(cat(parts...));
}
template <typename... Parts>
void check_config(bool ok, const Parts&... parts) {
  if (!ok) throw ConfigError(cat(parts...));
}
template <typename... Parts>
void check_format(bool ok, const Parts&... parts) {
  if (!ok) throw FormatError(cat(parts...));
}

// FNV-1a, used for config fingerprints and parameter checksums.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t seed = 14695981039346656037ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Threading policy. "full" pins the worker count so repeated runs on the
// same machine produce bit-identical results; "fast" lets the runtime pick.
enum class Determinism { full, fast };

inline void apply_determinism(Determinism mode, int pinned_threads = 2) {
  if (mode == Determinism::full) {
    Eigen::setNbThreads(pinned_threads);
  } else {
    Eigen::setNbThreads(0);  // Eigen default: query OpenMP
  }
}

}  // namespace saic
