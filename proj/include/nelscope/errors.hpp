#pragma once

#include <stdexcept>
#include <string>

namespace nelscope {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Input bytes/text could not be understood at all (bad JSON, bad wire data).
struct ParseError : Error {
  explicit ParseError(const std::string& what) : Error(what) {}
};

// Input was well-formed but violates a stated invariant (range, required
// field, empty list). Never clamped, always rejected.
struct ValidationError : Error {
  explicit ValidationError(const std::string& what) : Error(what) {}
};

// A configuration object is unusable (empty region list, unknown id, ...).
struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(what) {}
};

// A hostname does not belong to the expected base domain.
struct DomainMismatchError : Error {
  explicit DomainMismatchError(const std::string& what) : Error(what) {}
};

}  // namespace nelscope
