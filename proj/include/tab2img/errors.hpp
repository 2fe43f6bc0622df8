#pragma once

#include <stdexcept>
#include <string>

namespace tab2img {

// Bad user input: missing files, malformed records, inconsistent options.
// The CLI maps this to exit code 1.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Failure while executing otherwise valid work (I/O errors, divergence).
// The CLI maps this to exit code 2.
struct RuntimeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace tab2img
