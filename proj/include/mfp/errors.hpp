#pragma once

#include <stdexcept>
#include <string>

namespace mfp {

// Base class for everything thrown by this library.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad parameters, malformed configs, unknown names. CLI exit code 2.
struct config_error : error {
    using error::error;
};

// Numerical failures: solver breakdown, violated preconditions discovered at
// run time (CFL bound, disconnected graphs, degenerate geometry). CLI exit 3.
struct numeric_error : error {
    using error::error;
};

}  // namespace mfp
