#pragma once

#include <stdexcept>
#include <string>

namespace piaa {

// Raised for malformed inputs, I/O failures and numerical breakdowns.
// The CLI maps it to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace piaa
