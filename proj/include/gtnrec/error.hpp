#pragma once

#include <stdexcept>
#include <string>

namespace gtnrec {

enum class ErrorKind {
  dimension,           // shape mismatch between operands
  contract,            // precondition violated (empty batch, non-scalar loss, ...)
  parse,               // malformed input file
  range,               // value outside its documented domain
  empty_neighborhood,  // softmax row with no active entries
  not_on_tape,         // tape ref detached or from another tape
  index,               // id out of range
  too_small,           // dataset below the minimum the operation supports
  divergence,          // training loss became non-finite
  io,                  // file could not be read/written
  format,              // artifact bytes not in the expected format
};

/// All library errors carry a kind so callers can branch without parsing
/// the message text.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace gtnrec
