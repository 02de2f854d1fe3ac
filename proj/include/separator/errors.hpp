#pragma once

#include <stdexcept>
#include <string>

namespace separator {

// Bad configs, malformed inputs, unusable paths. The CLI maps these to
// exit code 1; everything else that escapes is a runtime failure (exit 2).
struct validation_error : std::runtime_error {
    explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace separator
