#pragma once

#include <stdexcept>
#include <string>

namespace moltkv {

// Raised for anything a client command can legitimately fail with.
// The server maps the message onto a -ERR reply verbatim.
struct CommandError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A transformer aborted; the target value is left untouched.
struct TransformFailed : CommandError {
  std::string key;
  std::string step;
  std::string reason;

  TransformFailed(std::string key_, std::string step_, std::string reason_)
      : CommandError("transform failed on '" + key_ + "' at " + step_ + ": " + reason_),
        key(std::move(key_)),
        step(std::move(step_)),
        reason(std::move(reason_)) {}
};

// Transform program or update document text that does not parse.
struct ParseError : std::runtime_error {
  int line;
  int col;

  ParseError(int line_, int col_, const std::string& what_)
      : std::runtime_error("parse error at " + std::to_string(line_) + ":" + std::to_string(col_) +
                           ": " + what_),
        line(line_),
        col(col_) {}
};

// Persistence problems (unwritable dir, corrupt snapshot, ...).
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Byte stream off the wire that cannot be framed; the connection is dropped.
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace moltkv
