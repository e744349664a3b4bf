#pragma once

#include <stdexcept>
#include <string>

namespace textloc {

// Malformed or out-of-range input data (corpus files, vocab files,
// checkpoints). CLI maps this to exit code 2.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values where finite ones are required. CLI maps this to exit
// code 3.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace textloc
