#pragma once

#include "ridnoise/evaluation.hpp"
#include "ridnoise/flow.hpp"
#include "ridnoise/io.hpp"
#include "ridnoise/robust_weights.hpp"
#include "ridnoise/task_spec.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>

namespace ridnoise {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitData = 3, kExitNumerical = 4 };

// Everything a pipeline run depends on. Component seeds are not set
// directly: each command derives its own from `seed` and a fixed role tag
// ("generate", "weights", "train/init", "train", "sample", "eval",
// "eval/targets").
struct RunConfig {
    TaskName task = TaskName::Radian;
    NoiseMode noise_mode = NoiseMode::X;
    // Overrides of the task's default noise levels.
    std::optional<NoiseSpec> noise;
    std::size_t n = 5000;
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    std::filesystem::path out = ".";
    std::filesystem::path dataset;
    std::filesystem::path weights;
    std::filesystem::path model;
    std::filesystem::path baseline;
    std::filesystem::path targets;

    WeightConfig weighting;
    FlowArchitecture architecture;
    WnllConfig training;
    EvalConfig eval;
    std::size_t n_per_target = 16;

    NoiseSpec noise_spec() const;
};

// Paths are left out: inputs are identified in artifacts by content checksum.
json to_json(const RunConfig& c);
void update_from_json(const json& j, RunConfig& c);

struct GenerateResult {
    std::size_t rows;
    std::string checksum;
};
GenerateResult cmd_generate(const RunConfig& cfg, std::ostream& out);

struct WeightsResult {
    double min, mean, max;
};
WeightsResult cmd_weights(const RunConfig& cfg, std::ostream& out);

FlowFit cmd_train(const RunConfig& cfg, std::ostream& out);

void cmd_sample(const RunConfig& cfg, std::ostream& out);

EvalReport cmd_eval(const RunConfig& cfg, std::ostream& out);

// Parses argv-style arguments (without the program name), runs the chosen
// subcommand and maps failures to exit codes.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace ridnoise
