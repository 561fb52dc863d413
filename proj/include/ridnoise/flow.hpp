#pragma once

#include "ridnoise/dataset.hpp"
#include "ridnoise/graph.hpp"
#include "ridnoise/neural.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace ridnoise {

// Conditional affine coupling block. The passive coordinates and the
// condition y feed two subnets; their outputs scale and shift the active
// coordinates:  v_a = u_a * exp(s) + t,  v_p = u_p.
// The raw scale output is soft-clamped, s = clamp * (2/pi) * atan(raw),
// so |s| < clamp. With dx = 1 the passive set is empty and the subnets see
// only y.
struct CouplingBlock {
    std::vector<std::size_t> passive;
    std::vector<std::size_t> active;
    MlpParams subnet_s;
    MlpParams subnet_t;
    double clamp = 2.0;
};

struct FlowArchitecture {
    std::size_t blocks = 8;
    std::vector<std::size_t> hidden{128, 128};
    Activation activation = Activation::Tanh;
    double clamp = 2.0;

    friend bool operator==(const FlowArchitecture&, const FlowArchitecture&) = default;
};

// Generative direction is z -> x: block 0, permutation 0, block 1, ...,
// block K-1. There are K-1 permutations; permutation k maps column j of its
// output to column perm[j] of its input.
// Fixed per-column affine map between data space and the space the coupling
// blocks see: standardized = (raw - shift) / scale.
struct Standardization {
    std::vector<double> shift;
    std::vector<double> scale;

    static Standardization identity(std::size_t d);
    // Column means and standard deviations; constant columns get scale 1.
    static Standardization fit(const Matrix& data);
    Matrix apply(const Matrix& raw) const;
    Matrix invert(const Matrix& standardized) const;
    double log_scale_sum() const;
};

struct FlowModel {
    std::size_t dx = 0;
    std::size_t dy = 0;
    std::vector<CouplingBlock> blocks;
    std::vector<std::vector<std::size_t>> permutations;
    // Identity after make_flow; set from the data by train_flow_wnll.
    Standardization x_norm;
    Standardization y_norm;

    std::vector<Matrix*> tensors();
    void validate() const;
};

// Alternating masks, seeded permutations, Glorot hidden layers and zeroed
// subnet output layers, so a fresh model is the identity map.
FlowModel make_flow(std::size_t dx, std::size_t dy, const FlowArchitecture& arch,
                    std::uint64_t seed);

double soft_clamp(double raw, double clamp);

struct CouplingOutput {
    Matrix v;
    std::vector<double> logdet;  // per row
};

CouplingOutput coupling_forward(const CouplingBlock& block, const Matrix& u, const Matrix& cond);
Matrix coupling_inverse(const CouplingBlock& block, const Matrix& v, const Matrix& cond);

Matrix permute_columns(const Matrix& m, std::span<const std::size_t> perm);
Matrix unpermute_columns(const Matrix& m, std::span<const std::size_t> perm);

struct FlowPass {
    Matrix out;
    std::vector<double> logdet;  // forward-direction log|det dx/dz| per row
};

// z -> x.
FlowPass flow_forward(const FlowModel& model, const Matrix& z, const Matrix& y);
// x -> z; logdet is still reported in the forward direction.
FlowPass flow_inverse(const FlowModel& model, const Matrix& x, const Matrix& y);

double standard_normal_log_density(std::span<const double> z);

// log q(x | y) per row.
std::vector<double> flow_log_prob(const FlowModel& model, const Matrix& x, const Matrix& y);

// n_per_row draws for every row of y. Rows of the result are grouped by
// target: rows [i*n, (i+1)*n) belong to y row i.
Matrix flow_sample(const FlowModel& model, const Matrix& y, std::size_t n_per_row,
                   std::uint64_t seed);

struct WnllConfig {
    std::size_t epochs = 60;
    std::size_t batch_size = 256;
    std::uint64_t seed = 0;
    AdamConfig adam;
    double sigma_aug = 1e-3;
    // Refit the model's x/y standardization to the training data first.
    bool standardize = true;
    // Replace y_i by a fitted forward surrogate's prediction f(x_i).
    bool relabel = false;
    std::vector<std::size_t> relabel_hidden{64, 64};
    std::size_t relabel_epochs = 100;

    void validate() const;
    friend bool operator==(const WnllConfig&, const WnllConfig&) = default;
};

// Weighted NLL of a fixed model as a graph: mean over rows of
// w_i * (-log q(x_i | y_i)).
class WnllGraph {
public:
    explicit WnllGraph(const FlowModel& model);

    const Graph& graph() const noexcept { return graph_; }
    NodeId loss() const noexcept { return loss_; }
    const std::vector<std::string>& parameter_names() const noexcept { return params_; }

    Bindings bind(const FlowModel& model, const Matrix& x, const Matrix& y,
                  std::span<const double> weights) const;

private:
    Graph graph_;
    NodeId loss_;
    std::vector<std::string> params_;
    std::size_t dx_ = 0;
};

double wnll_loss(const FlowModel& model, const Matrix& x, const Matrix& y,
                 std::span<const double> weights);

struct FlowFit {
    FlowModel model;
    std::vector<double> loss_trace;  // one entry per epoch
};

// Adam on the weighted NLL. Throws DataError on a weight/dataset length
// mismatch or a non-positive weight and NumericalError on a non-finite loss.
FlowFit train_flow_wnll(FlowModel model, const Dataset& data, std::span<const double> weights,
                        const WnllConfig& cfg);

}  // namespace ridnoise
