#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace lfb {

/// Base class for every error thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes violate an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value is outside its numeric domain (NaN/Inf, bad rate, empty input...).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Filesystem-level failure: missing file, unreadable stream, short write.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Structured-file decoding failure. `kind()` pins down which contract the
/// input broke so callers (and tests) can tell the cases apart.
class FormatError : public Error {
 public:
  enum class Kind {
    kBadMagic,      // leading magic bytes are not the expected tag
    kBadVersion,    // recognised container, unsupported version
    kTruncated,     // stream ended before the declared contents
    kInconsistent,  // fields disagree with each other or with the payload
  };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Configuration rejected; carries one message per violated key so a bad file
/// is reported in full rather than one key at a time.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : Error(join(problems)), problems_(std::move(problems)) {}

  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& problems) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) {
      msg += "\n  - " + p;
    }
    return msg;
  }

  std::vector<std::string> problems_;
};

}  // namespace lfb
