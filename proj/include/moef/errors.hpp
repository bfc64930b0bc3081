#pragma once

#include <stdexcept>
#include <string>

namespace moef {

// Error taxonomy used across the library. The CLI maps these onto exit codes:
// config_error -> 1, numeric_error -> 2, io_error -> 3.
struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& what) : std::runtime_error(what) {}
};

struct config_error : std::runtime_error {
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

struct io_error : std::runtime_error {
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace moef
