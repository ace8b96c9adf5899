#pragma once

#include <stdexcept>
#include <string>

namespace neuraxis {

// Error taxonomy used across the library. `invalid_input` covers rejected
// preconditions, `numeric` covers failures discovered during computation
// (singular systems, degenerate statistics), `io` covers missing or
// malformed artifacts, `config` covers run-configuration problems.
class Error : public std::runtime_error {
 public:
  enum class Kind { invalid_input, numeric, io, config };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

[[noreturn]] inline void throw_invalid(const std::string& msg) {
  throw Error(Error::Kind::invalid_input, msg);
}
[[noreturn]] inline void throw_numeric(const std::string& msg) {
  throw Error(Error::Kind::numeric, msg);
}
[[noreturn]] inline void throw_io(const std::string& msg) {
  throw Error(Error::Kind::io, msg);
}
[[noreturn]] inline void throw_config(const std::string& msg) {
  throw Error(Error::Kind::config, msg);
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw_invalid(msg);
}

}  // namespace neuraxis
