#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace ridnoise {

enum class TaskName { Radian, Clusters, Radius, Kinematics, Ballistics };
enum class NoiseMode { None, X, Y, XY };

std::string to_string(TaskName t);
std::string to_string(NoiseMode m);
// Throws DataError on unknown names.
TaskName parse_task_name(std::string_view s);
NoiseMode parse_noise_mode(std::string_view s);

// Deterministic forward problem and its prior.
struct TaskSpec {
    TaskName name = TaskName::Radian;
    std::size_t dx = 2;
    std::size_t dy = 1;

    // radian: rejection radius around the origin for the N(0, I) prior.
    double radian_min_norm = 0.1;
    // clusters: centers (0,2), (-sqrt3,-1), (sqrt3,-1) times this scale.
    double cluster_scale = 0.5;
    double cluster_sigma = 0.15;
    // radius: annulus [inner, outer] around (0,1) and (0,-1).
    double radius_inner = 0.4;
    double radius_outer = 1.6;
    // kinematics
    double arm1 = 0.5;
    double arm2 = 0.5;
    double arm3 = 1.0;
    // ballistics
    double gravity = 9.81;

    friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

// Stochastic wrapper parameters. How each base level is modulated depends on
// the task; see tasks.hpp.
struct NoiseSpec {
    NoiseMode mode = NoiseMode::None;
    double sigma_x = 0.0;
    double sigma_y = 0.0;
    double alpha = 0.0;

    friend bool operator==(const NoiseSpec&, const NoiseSpec&) = default;
};

TaskSpec make_task(TaskName name);
// Built-in noise levels for a task, with the requested mode.
NoiseSpec default_noise(TaskName name, NoiseMode mode);

struct Provenance {
    TaskSpec task;
    NoiseSpec noise;
    std::uint64_t seed = 0;

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

}  // namespace ridnoise
