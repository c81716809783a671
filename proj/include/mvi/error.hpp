#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mvi {

// Every recoverable failure carries a short machine-readable code
// ("invalid_parameter", "manifest_not_found", ...) next to the message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& detail)
      : std::runtime_error(detail), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

// Raised when an internal postcondition fails. The CLI maps it to exit code 2.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace errc {
inline constexpr const char* invalid_parameter = "invalid_parameter";
inline constexpr const char* invalid_input = "invalid_input";
inline constexpr const char* invalid_transform = "invalid_transform";
inline constexpr const char* ill_conditioned = "ill_conditioned_stain_matrix";
inline constexpr const char* unknown_stain = "unknown_stain";
inline constexpr const char* undefined_index = "undefined_index";
inline constexpr const char* inconsistent_field = "inconsistent_field";
inline constexpr const char* undefined_correlation = "undefined_correlation";
inline constexpr const char* manifest_not_found = "manifest_not_found";
inline constexpr const char* io_error = "io_error";
inline constexpr const char* resolution_mismatch = "resolution_mismatch";
inline constexpr const char* series_mismatch = "series_mismatch";
inline constexpr const char* invalid_config = "invalid_config";
}  // namespace errc

inline void require(bool condition, const char* code, const std::string& detail) {
  if (!condition) throw Error(code, detail);
}

}  // namespace mvi
