#pragma once

#include <stdexcept>
#include <string>

namespace mattforge {

/// Raised for every contract violation in the library (bad input, shape
/// mismatch, numerical divergence). Messages are meant for end users.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mattforge
