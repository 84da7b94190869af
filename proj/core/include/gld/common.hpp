#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace gld {

/// Error type thrown by all gld components.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void append(std::ostringstream&) {}
template <typename T, typename... Rest>
void append(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  append(os, rest...);
}
}  // namespace detail

template <typename... Args>
std::string str(const Args&... args) {
  std::ostringstream os;
  detail::append(os, args...);
  return os.str();
}

template <typename... Args>
void check(bool cond, const Args&... args) {
  if (!cond) throw Error(str(args...));
}

/// True when GLD_DETERMINISTIC=1 is set in the environment. Deterministic
/// mode pins all float reductions to a fixed order (single compute thread).
bool deterministic_mode();

/// FNV-1a over a byte string; used for config and artifact fingerprints.
uint64_t fnv1a(const std::string& bytes);
std::string fnv1a_hex(const std::string& bytes);

}  // namespace gld
