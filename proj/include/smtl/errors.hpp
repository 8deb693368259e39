#pragma once

#include <stdexcept>

namespace smtl {

// Bad or inconsistent input data: files, labels, masks, dataset contents.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values or other failed numeric checks.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace smtl
