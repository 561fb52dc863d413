#pragma once

#include "ridnoise/dataset.hpp"
#include "ridnoise/matrix.hpp"
#include "ridnoise/task_spec.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <span>

namespace ridnoise {

using Rng = std::mt19937_64;

// Polar angle of x in [0, 2pi). Throws DataError at the origin.
double radian_forward(std::span<const double> x);

// Label of the nearest cluster center: 0, 1/3 or 2/3.
double clusters_forward(const TaskSpec& task, std::span<const double> x);

enum class RadiusCluster { Clean, Noisy };  // centers (0,1) and (0,-1)

struct RadiusPoint {
    double y;
    RadiusCluster cluster;
};

// Distance to the nearer center; ties go to the clean center (0,1).
RadiusPoint radius_forward(std::span<const double> x);

// Rail height x1, joint angles x2..x4 (cumulative).
std::array<double, 2> kinematics_forward(const TaskSpec& task, std::span<const double> x);

// Landing abscissa of a drag-free throw from (x1, x2) at angle x3 and speed
// x4. A negative launch height is treated as ground level.
double ballistics_forward(const TaskSpec& task, std::span<const double> x);

// Deterministic g for one row / a batch.
void forward_row(const TaskSpec& task, std::span<const double> x, std::span<double> y);
Matrix forward(const TaskSpec& task, const Matrix& x);

// State-dependent noise levels.
double kinematics_sigma_x(const TaskSpec& task, const NoiseSpec& noise, std::span<const double> x);
double kinematics_sigma_y(const NoiseSpec& noise, std::span<const double> y);
double ballistics_sigma_x(const NoiseSpec& noise, std::span<const double> x);
double ballistics_sigma_y(const NoiseSpec& noise, std::span<const double> y);

// One draw from p(y | x) per row.
Matrix apply_noise(const TaskSpec& task, const NoiseSpec& noise, const Matrix& x, Rng& rng);

Matrix sample_prior(const TaskSpec& task, std::size_t n, Rng& rng);

// x from the prior, y through the stochastic wrapper. Generated in chunks of
// kGenerationChunk rows, each with its own derived seed.
inline constexpr std::size_t kGenerationChunk = 4096;
Dataset generate_dataset(const TaskSpec& task, const NoiseSpec& noise, std::size_t n,
                         std::uint64_t seed);

// Three-component mixture with labels 0, 1/3, 2/3.
Dataset clusters_sample(std::size_t n, std::uint64_t seed,
                        const NoiseSpec& noise = default_noise(TaskName::Clusters, NoiseMode::None));

}  // namespace ridnoise
