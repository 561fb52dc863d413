#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ridnoise {

// Incompatible matrix shapes. Programming error; carries the offending node
// when raised from graph evaluation.
class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& what, std::ptrdiff_t node = -1)
        : std::invalid_argument(what), node_(node) {}
    std::ptrdiff_t node() const noexcept { return node_; }

private:
    std::ptrdiff_t node_;
};

// Bad user input: malformed files, out-of-range arguments, mismatched data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite losses, diverged training.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace ridnoise
