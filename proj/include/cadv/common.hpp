#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cadv {

// Error raised for violated preconditions (bad shapes, bad configs, bad files).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Error raised when an operation produces NaN/Inf or training diverges.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what) {}
};

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

template <class... Args>
[[noreturn]] inline void fail(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  throw Error(os.str());
}

#define CADV_CHECK(cond, ...)            \
  do {                                   \
    if (!(cond)) ::cadv::fail(__VA_ARGS__); \
  } while (0)

}  // namespace cadv
