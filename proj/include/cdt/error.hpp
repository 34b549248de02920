#pragma once

#include <stdexcept>
#include <string>

namespace cdt {

// Error taxonomy shared by every module. The CLI maps these onto exit codes:
// io_error -> 1, config/contract/shape -> 2, numeric_error -> 3.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct shape_error : error {
    using error::error;
};

struct contract_error : error {
    using error::error;
};

struct config_error : error {
    using error::error;
};

struct io_error : error {
    using error::error;
};

struct numeric_error : error {
    using error::error;
};

} // namespace cdt
