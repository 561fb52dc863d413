#include "ridnoise/dataset.hpp"

#include "ridnoise/errors.hpp"

namespace ridnoise {

void Dataset::validate() const {
    if (x.rows() != y.rows()) {
        throw DataError("dataset x has " + std::to_string(x.rows()) + " rows but y has " +
                        std::to_string(y.rows()));
    }
    if (!x.all_finite() || !y.all_finite()) throw DataError("dataset contains non-finite values");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    return Dataset{x.gather_rows(indices), y.gather_rows(indices), provenance};
}

}  // namespace ridnoise
