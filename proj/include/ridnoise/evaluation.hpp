#pragma once

#include "ridnoise/flow.hpp"
#include "ridnoise/matrix.hpp"
#include "ridnoise/task_spec.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ridnoise {

struct EvalConfig {
    std::size_t n_targets = 512;
    std::size_t samples_per_target = 16;
    std::size_t mc_draws = 10000;
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    void validate() const;
};

struct Comparison {
    std::string baseline_id;
    double baseline_mse = 0.0;
    double t = 0.0;
    double p = 1.0;
};

struct EvalReport {
    std::string method;
    std::string task;
    std::string noise;
    EvalConfig config;
    std::vector<double> per_target;
    double mse = 0.0;
    double std_error = 0.0;
    double wall_seconds = 0.0;
    std::optional<Comparison> comparison;
};

// Squared Euclidean distance between two outcome vectors.
double squared_error(std::span<const double> a, std::span<const double> b);

// (1/N) sum_i l(y_i, yt) with y_i drawn from p(y | x').
double mc_expected_loss(const TaskSpec& task, const NoiseSpec& noise, std::span<const double> x,
                        std::span<const double> yt, std::size_t n, std::uint64_t seed);

struct Robustness {
    double r;                 // unbiased: N/(N-1) times the mean squared deviation
    std::vector<double> f_hat;  // sample mean outcome
};

Robustness target_agnostic_robustness(const TaskSpec& task, const NoiseSpec& noise,
                                      std::span<const double> x, std::size_t n, std::uint64_t seed);

// |L - (R + ||F_hat - yt||^2)| on one shared draw set, with R taken as the
// plain second sample moment about F_hat.
double decomposition_check(const TaskSpec& task, const NoiseSpec& noise, std::span<const double> x,
                           std::span<const double> yt, std::size_t n, std::uint64_t seed);

// Anything that maps targets to candidate designs. Must return
// rows.size() * n_per_target rows grouped by target.
using InverseDesignModel =
    std::function<Matrix(const Matrix& targets, std::size_t n_per_target, std::uint64_t seed)>;

InverseDesignModel flow_idm(const FlowModel& model);

// Targets drawn from p(y) by generating a fresh dataset and keeping y.
Matrix make_test_targets(const TaskSpec& task, const NoiseSpec& noise, std::size_t n,
                         std::uint64_t seed);

EvalReport resimulation_error(const InverseDesignModel& idm, const TaskSpec& task,
                              const NoiseSpec& noise, const Matrix& targets, const EvalConfig& cfg);
EvalReport resimulation_error(const FlowModel& model, const TaskSpec& task, const NoiseSpec& noise,
                              const Matrix& targets, const EvalConfig& cfg);

struct WelchResult {
    double t;
    double p;
    double df;
};

// Two-sided Welch t-test. Zero variance in both samples with equal means
// yields t = 0, p = 1.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

}  // namespace ridnoise
