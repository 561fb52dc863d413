#pragma once

#include "ridnoise/dataset.hpp"
#include "ridnoise/graph.hpp"
#include "ridnoise/matrix.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ridnoise {

enum class Activation { Tanh, Relu };

std::string to_string(Activation a);
Activation parse_activation(std::string_view s);

struct MlpSpec {
    std::size_t input_dim = 1;
    std::size_t output_dim = 1;
    std::vector<std::size_t> hidden;  // empty: affine model
    Activation activation = Activation::Tanh;

    void validate() const;
    friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

struct DenseLayer {
    Matrix weight;  // fan_in x fan_out
    Matrix bias;    // 1 x fan_out
    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct MlpParams {
    MlpSpec spec;
    std::vector<DenseLayer> layers;

    // Weight and bias of every layer, in layer order. Pointers into *this.
    std::vector<Matrix*> tensors();
    std::vector<const Matrix*> tensors() const;
    friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

// Glorot-uniform weights, zero biases. With zero_output_layer the last layer
// starts at zero so the network outputs 0 everywhere.
MlpParams init_mlp(const MlpSpec& spec, std::mt19937_64& rng, bool zero_output_layer = false);
MlpParams zero_mlp(const MlpSpec& spec);

Matrix mlp_forward(const MlpParams& params, const Matrix& x);

// Adds the network to a graph, reading parameters from leaves named
// "<prefix>.w<i>" and "<prefix>.b<i>". Returns the output node.
NodeId build_mlp(Graph& graph, const MlpSpec& spec, NodeId input, const std::string& prefix);
void bind_mlp(Bindings& bindings, const MlpParams& params, const std::string& prefix);
std::vector<std::string> mlp_leaf_names(const MlpSpec& spec, const std::string& prefix);

struct MseLoss {
    std::vector<double> per_row;  // squared Euclidean distance per row
    double mean = 0.0;
};

MseLoss mse_loss(const Matrix& predicted, const Matrix& truth);

struct AdamConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
    friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct AdamState {
    AdamConfig config;
    std::uint64_t step_count = 0;
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;

    explicit AdamState(AdamConfig cfg = {}) : config(cfg) { config.validate(); }
};

// One Adam update with bias correction. Weight decay is decoupled: each
// parameter is scaled by (1 - lr * wd) before the Adam delta is applied.
// Moment buffers are allocated on the first call.
void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state);

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    AdamConfig adam;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct RegressorFit {
    MlpParams params;
    std::vector<double> train_loss;  // one entry per epoch
    std::vector<double> valid_loss;  // empty when no validation set
    std::size_t best_epoch = 0;
};

// Minimises batch-mean MSE. Returns the parameters from the epoch with the
// lowest validation MSE, or the final epoch when valid is empty.
RegressorFit train_regressor(const MlpSpec& spec, const Dataset& train, const Dataset& valid,
                             const TrainConfig& cfg);

// Seeded permutation of [0, n), shared by every trainer for batch order.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng);

}  // namespace ridnoise
