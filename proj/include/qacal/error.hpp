#pragma once

#include <stdexcept>
#include <string>

namespace qacal {

// Bad user input: malformed files, out-of-range values, violated preconditions.
// The CLI maps this to exit code 1; everything else is a runtime failure (2).
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace qacal
