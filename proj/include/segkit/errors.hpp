#pragma once

#include <stdexcept>
#include <string>

namespace segkit {

// Error taxonomy. CLI maps these onto exit codes:
// config_error -> 1, data-ish errors -> 2, invariant_error -> 3.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct bounds_error : error {
  using error::error;
};

struct shape_error : error {
  using error::error;
};

struct empty_content_error : error {
  using error::error;
};

struct parse_error : error {
  using error::error;
};

struct io_error : error {
  using error::error;
};

struct config_error : error {
  using error::error;
};

struct no_tumor_error : error {
  using error::error;
};

struct checkpoint_error : error {
  using error::error;
};

struct invariant_error : error {
  using error::error;
};

}  // namespace segkit
