// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <stdexcept>

namespace eva {

// Raised when a computation produces NaN/Inf where the contract forbids it
// (training loss, gradients). Maps to CLI exit code 3.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace eva
