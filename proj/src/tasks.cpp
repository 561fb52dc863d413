#include "ridnoise/tasks.hpp"

#include "ridnoise/errors.hpp"
#include "ridnoise/seeding.hpp"

#include <cmath>
#include <numbers>

namespace ridnoise {

namespace {

constexpr double kPi = std::numbers::pi;

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

std::array<std::array<double, 2>, 3> cluster_centers(const TaskSpec& task) {
    const double s = task.cluster_scale;
    const double r3 = std::numbers::sqrt3;
    return {{{0.0, 2.0 * s}, {-r3 * s, -s}, {r3 * s, -s}}};
}

void require_dims(const TaskSpec& task, std::size_t x_cols) {
    if (x_cols != task.dx) {
        throw ShapeError(to_string(task.name) + " expects " + std::to_string(task.dx) +
                         "-dimensional x, got " + std::to_string(x_cols));
    }
}

}  // namespace

double radian_forward(std::span<const double> x) {
    if (x[0] == 0.0 && x[1] == 0.0) throw DataError("radian is undefined at the origin");
    double a = std::atan2(x[1], x[0]);
    if (a < 0.0) a += 2.0 * kPi;
    // atan2 can return -0.0 or round a tiny negative angle up to 2pi
    if (a >= 2.0 * kPi) a = 0.0;
    return a == 0.0 ? 0.0 : a;
}

double clusters_forward(const TaskSpec& task, std::span<const double> x) {
    const auto centers = cluster_centers(task);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centers.size(); ++k) {
        const double d = std::hypot(x[0] - centers[k][0], x[1] - centers[k][1]);
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return static_cast<double>(best) / 3.0;
}

RadiusPoint radius_forward(std::span<const double> x) {
    const double d_clean = std::hypot(x[0], x[1] - 1.0);
    const double d_noisy = std::hypot(x[0], x[1] + 1.0);
    if (d_clean <= d_noisy) return {d_clean, RadiusCluster::Clean};
    return {d_noisy, RadiusCluster::Noisy};
}

std::array<double, 2> kinematics_forward(const TaskSpec& task, std::span<const double> x) {
    const double lengths[3] = {task.arm1, task.arm2, task.arm3};
    double angle = 0.0;
    std::array<double, 2> end{0.0, x[0]};
    for (std::size_t j = 0; j < 3; ++j) {
        angle += x[j + 1];
        end[0] += lengths[j] * std::cos(angle);
        end[1] += lengths[j] * std::sin(angle);
    }
    return end;
}

double ballistics_forward(const TaskSpec& task, std::span<const double> x) {
    const double g = task.gravity;
    const double height = std::max(x[1], 0.0);
    const double vx = x[3] * std::cos(x[2]);
    const double vy = x[3] * std::sin(x[2]);
    // nonnegative root of height + vy t - g t^2 / 2 = 0
    const double t = (vy + std::sqrt(vy * vy + 2.0 * g * height)) / g;
    return x[0] + vx * std::max(t, 0.0);
}

void forward_row(const TaskSpec& task, std::span<const double> x, std::span<double> y) {
    switch (task.name) {
        case TaskName::Radian: y[0] = radian_forward(x); break;
        case TaskName::Clusters: y[0] = clusters_forward(task, x); break;
        case TaskName::Radius: y[0] = radius_forward(x).y; break;
        case TaskName::Kinematics: {
            auto e = kinematics_forward(task, x);
            y[0] = e[0];
            y[1] = e[1];
            break;
        }
        case TaskName::Ballistics: y[0] = ballistics_forward(task, x); break;
    }
}

Matrix forward(const TaskSpec& task, const Matrix& x) {
    require_dims(task, x.cols());
    Matrix y(x.rows(), task.dy);
    for (std::size_t r = 0; r < x.rows(); ++r) forward_row(task, x.row(r), y.row(r));
    return y;
}

double kinematics_sigma_x(const TaskSpec& task, const NoiseSpec& noise, std::span<const double> x) {
    return noise.sigma_x * sigmoid(-noise.alpha * kinematics_forward(task, x)[1]);
}

double kinematics_sigma_y(const NoiseSpec& noise, std::span<const double> y) {
    return noise.sigma_y * sigmoid(-noise.alpha * y[1]);
}

double ballistics_sigma_x(const NoiseSpec& noise, std::span<const double> x) {
    return noise.sigma_x * std::abs(x[2] - kPi / 4.0);
}

double ballistics_sigma_y(const NoiseSpec& noise, std::span<const double> y) {
    return noise.sigma_y * (1.0 + std::abs(y[0]));
}

namespace {

// Per-coordinate standard deviation of the x perturbation at x.
double sigma_x_at(const TaskSpec& task, const NoiseSpec& noise, std::span<const double> x) {
    switch (task.name) {
        case TaskName::Radian:
        case TaskName::Clusters: return noise.sigma_x;
        case TaskName::Radius:
            return radius_forward(x).cluster == RadiusCluster::Noisy ? noise.sigma_x : 0.0;
        case TaskName::Kinematics: return kinematics_sigma_x(task, noise, x);
        case TaskName::Ballistics: return ballistics_sigma_x(noise, x);
    }
    return 0.0;
}

// Standard deviation of the additive y perturbation. x is the design that
// produced y; the radius task decides its noisy cluster from it.
double sigma_y_at(const TaskSpec& task, const NoiseSpec& noise, std::span<const double> x,
                  std::span<const double> y) {
    switch (task.name) {
        case TaskName::Radian:
        case TaskName::Clusters: return noise.sigma_y;
        case TaskName::Radius:
            return radius_forward(x).cluster == RadiusCluster::Noisy ? noise.sigma_y : 0.0;
        case TaskName::Kinematics: return kinematics_sigma_y(noise, y);
        case TaskName::Ballistics: return ballistics_sigma_y(noise, y);
    }
    return 0.0;
}

}  // namespace

Matrix apply_noise(const TaskSpec& task, const NoiseSpec& noise, const Matrix& x, Rng& rng) {
    require_dims(task, x.cols());
    if (noise.sigma_x < 0.0 || noise.sigma_y < 0.0) throw DataError("noise levels must be >= 0");
    Matrix y(x.rows(), task.dy);
    if (noise.mode == NoiseMode::None) return forward(task, x);

    std::normal_distribution<double> normal(0.0, 1.0);
    const bool perturb_x = noise.mode == NoiseMode::X || noise.mode == NoiseMode::XY;
    const bool perturb_y = noise.mode == NoiseMode::Y || noise.mode == NoiseMode::XY;
    std::vector<double> xs(task.dx);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto xr = x.row(r);
        std::copy(xr.begin(), xr.end(), xs.begin());
        if (perturb_x) {
            const double s = sigma_x_at(task, noise, xr);
            for (double& v : xs) v += s * normal(rng);
        }
        auto yr = y.row(r);
        forward_row(task, xs, yr);
        if (perturb_y) {
            const double s = sigma_y_at(task, noise, xr, yr);
            for (double& v : yr) v += s * normal(rng);
        }
    }
    return y;
}

Matrix sample_prior(const TaskSpec& task, std::size_t n, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Matrix x(n, task.dx);
    for (std::size_t r = 0; r < n; ++r) {
        auto row = x.row(r);
        switch (task.name) {
            case TaskName::Radian:
                do {
                    row[0] = normal(rng);
                    row[1] = normal(rng);
                } while (std::hypot(row[0], row[1]) < task.radian_min_norm);
                break;
            case TaskName::Clusters: {
                const auto centers = cluster_centers(task);
                const auto k = static_cast<std::size_t>(rng() % 3);
                row[0] = centers[k][0] + task.cluster_sigma * normal(rng);
                row[1] = centers[k][1] + task.cluster_sigma * normal(rng);
                break;
            }
            case TaskName::Radius: {
                const double cy = rng() % 2 == 0 ? 1.0 : -1.0;
                const double rho = task.radius_inner + (task.radius_outer - task.radius_inner) * unit(rng);
                const double phi = 2.0 * kPi * unit(rng);
                row[0] = rho * std::cos(phi);
                row[1] = cy + rho * std::sin(phi);
                break;
            }
            case TaskName::Kinematics:
                row[0] = 0.25 * normal(rng);
                for (std::size_t j = 1; j < 4; ++j) row[j] = 0.5 * normal(rng);
                break;
            case TaskName::Ballistics:
                do {
                    row[0] = 0.5 * normal(rng);
                    do { row[1] = 1.5 + 0.5 * normal(rng); } while (row[1] < 0.0);
                    row[2] = kPi / 18.0 + (kPi / 3.0 - kPi / 18.0) * unit(rng);
                    do { row[3] = 4.5 + 0.5 * normal(rng); } while (row[3] < 0.1);
                    // degenerate flight: launched from the ground without climbing
                } while (row[1] == 0.0 && std::sin(row[2]) * row[3] <= 0.0);
                break;
        }
    }
    return x;
}

Dataset generate_dataset(const TaskSpec& task, const NoiseSpec& noise, std::size_t n,
                         std::uint64_t seed) {
    if (n == 0) throw DataError("dataset size must be >= 1");
    Dataset d{Matrix(n, task.dx), Matrix(n, task.dy), Provenance{task, noise, seed}};
    for (std::size_t start = 0, chunk = 0; start < n; start += kGenerationChunk, ++chunk) {
        const std::size_t count = std::min(kGenerationChunk, n - start);
        Rng rng(derive_seed(seed, "generate/chunk" + std::to_string(chunk)));
        Matrix x = sample_prior(task, count, rng);
        Matrix y = apply_noise(task, noise, x, rng);
        for (std::size_t r = 0; r < count; ++r) {
            std::copy(x.row(r).begin(), x.row(r).end(), d.x.row(start + r).begin());
            std::copy(y.row(r).begin(), y.row(r).end(), d.y.row(start + r).begin());
        }
    }
    return d;
}

Dataset clusters_sample(std::size_t n, std::uint64_t seed, const NoiseSpec& noise) {
    if (n < 3) throw DataError("clusters_sample needs n >= 3");
    return generate_dataset(make_task(TaskName::Clusters), noise, n, seed);
}

}  // namespace ridnoise
