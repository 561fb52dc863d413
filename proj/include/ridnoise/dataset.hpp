#pragma once

#include "ridnoise/matrix.hpp"
#include "ridnoise/task_spec.hpp"

#include <optional>
#include <span>

namespace ridnoise {

// Paired design parameters x (n x dx) and responses y (n x dy).
struct Dataset {
    Matrix x;
    Matrix y;
    std::optional<Provenance> provenance;

    std::size_t size() const noexcept { return x.rows(); }
    std::size_t dx() const noexcept { return x.cols(); }
    std::size_t dy() const noexcept { return y.cols(); }

    // Throws DataError on mismatched row counts or non-finite entries.
    void validate() const;
    Dataset subset(std::span<const std::size_t> indices) const;
};

}  // namespace ridnoise
