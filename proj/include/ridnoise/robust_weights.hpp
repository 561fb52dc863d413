#pragma once

#include "ridnoise/dataset.hpp"
#include "ridnoise/neural.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace ridnoise {

struct WeightConfig {
    std::size_t k_folds = 5;
    double tau = 1.0;
    double eps = 1e-3;
    // Forward surrogate architecture; input/output sizes come from the data.
    std::vector<std::size_t> surrogate_hidden{64, 64};
    Activation surrogate_activation = Activation::Tanh;
    TrainConfig training{.epochs = 100, .batch_size = 64, .seed = 0, .adam = {.learning_rate = 3e-3}};
    // Share of each fold's training part held back to pick the best epoch.
    double inner_valid_fraction = 0.1;
    std::size_t threads = 1;

    void validate() const;
    friend bool operator==(const WeightConfig&, const WeightConfig&) = default;
};

// k disjoint index sets covering [0, n), sizes differing by at most one,
// after a seeded shuffle. Each set is sorted.
std::vector<std::vector<std::size_t>> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed);

struct RobustnessEstimate {
    std::vector<double> raw;  // held-out squared prediction error per sample
    std::vector<double> r;    // raw / mean(raw)
};

// Divides by the mean. If every raw value is zero the result is all zeros.
std::vector<double> normalize_robustness(std::span<const double> raw);

// Cross-validated forward prediction error: for each fold a fresh surrogate
// is trained on the remaining folds and scores the held-out samples.
RobustnessEstimate estimate_sample_robustness(const Dataset& data, const WeightConfig& cfg);

// w = exp(-tau r); w = w / mean(w) + eps.
std::vector<double> robustness_to_weights(std::span<const double> r, double tau, double eps);

// Both steps together.
std::vector<double> estimate_weights(const Dataset& data, const WeightConfig& cfg);

}  // namespace ridnoise
