#include "ridnoise/neural.hpp"

#include "ridnoise/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ridnoise {

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

Activation parse_activation(std::string_view s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    throw DataError("unknown activation '" + std::string(s) + "'");
}

void MlpSpec::validate() const {
    if (input_dim == 0 || output_dim == 0) throw DataError("MLP dimensions must be >= 1");
    for (std::size_t w : hidden) {
        if (w == 0) throw DataError("MLP hidden widths must be >= 1");
    }
}

std::vector<Matrix*> MlpParams::tensors() {
    std::vector<Matrix*> out;
    out.reserve(layers.size() * 2);
    for (auto& l : layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

std::vector<const Matrix*> MlpParams::tensors() const {
    std::vector<const Matrix*> out;
    out.reserve(layers.size() * 2);
    for (const auto& l : layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

namespace {

std::vector<std::size_t> layer_widths(const MlpSpec& spec) {
    std::vector<std::size_t> widths{spec.input_dim};
    widths.insert(widths.end(), spec.hidden.begin(), spec.hidden.end());
    widths.push_back(spec.output_dim);
    return widths;
}

}  // namespace

MlpParams init_mlp(const MlpSpec& spec, std::mt19937_64& rng, bool zero_output_layer) {
    spec.validate();
    const auto widths = layer_widths(spec);
    MlpParams p{spec, {}};
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t fan_in = widths[l];
        const std::size_t fan_out = widths[l + 1];
        DenseLayer layer{Matrix(fan_in, fan_out), Matrix(1, fan_out)};
        const bool last = l + 2 == widths.size();
        if (!(last && zero_output_layer)) {
            const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            std::uniform_real_distribution<double> dist(-limit, limit);
            for (double& w : layer.weight.values()) w = dist(rng);
        }
        p.layers.push_back(std::move(layer));
    }
    return p;
}

MlpParams zero_mlp(const MlpSpec& spec) {
    spec.validate();
    const auto widths = layer_widths(spec);
    MlpParams p{spec, {}};
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        p.layers.push_back({Matrix(widths[l], widths[l + 1]), Matrix(1, widths[l + 1])});
    }
    return p;
}

Matrix mlp_forward(const MlpParams& params, const Matrix& x) {
    if (x.cols() != params.spec.input_dim) {
        throw ShapeError("mlp_forward input has " + std::to_string(x.cols()) +
                         " columns, expected " + std::to_string(params.spec.input_dim));
    }
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    RowMajor h = Eigen::Map<const RowMajor>(x.data(), x.rows(), x.cols());
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& layer = params.layers[l];
        Eigen::Map<const RowMajor> w(layer.weight.data(), layer.weight.rows(), layer.weight.cols());
        Eigen::Map<const Eigen::RowVectorXd> b(layer.bias.data(), layer.bias.cols());
        RowMajor next = h * w;
        next.rowwise() += b;
        if (l + 1 < params.layers.size()) {
            if (params.spec.activation == Activation::Tanh) {
                next = next.array().tanh();
            } else {
                next = next.array().max(0.0);
            }
        }
        h = std::move(next);
    }
    Matrix out(static_cast<std::size_t>(h.rows()), static_cast<std::size_t>(h.cols()));
    Eigen::Map<RowMajor>(out.data(), h.rows(), h.cols()) = h;
    return out;
}

std::vector<std::string> mlp_leaf_names(const MlpSpec& spec, const std::string& prefix) {
    std::vector<std::string> names;
    const std::size_t n_layers = spec.hidden.size() + 1;
    for (std::size_t l = 0; l < n_layers; ++l) {
        names.push_back(prefix + ".w" + std::to_string(l));
        names.push_back(prefix + ".b" + std::to_string(l));
    }
    return names;
}

NodeId build_mlp(Graph& graph, const MlpSpec& spec, NodeId input, const std::string& prefix) {
    spec.validate();
    const std::size_t n_layers = spec.hidden.size() + 1;
    NodeId h = input;
    for (std::size_t l = 0; l < n_layers; ++l) {
        NodeId w = graph.parameter(prefix + ".w" + std::to_string(l));
        NodeId b = graph.parameter(prefix + ".b" + std::to_string(l));
        h = graph.add_row(graph.matmul(h, w), b);
        if (l + 1 < n_layers) {
            h = spec.activation == Activation::Tanh ? graph.tanh(h) : graph.relu(h);
        }
    }
    return h;
}

void bind_mlp(Bindings& bindings, const MlpParams& params, const std::string& prefix) {
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        bindings.insert_or_assign(prefix + ".w" + std::to_string(l), params.layers[l].weight);
        bindings.insert_or_assign(prefix + ".b" + std::to_string(l), params.layers[l].bias);
    }
}

MseLoss mse_loss(const Matrix& predicted, const Matrix& truth) {
    if (!predicted.same_shape(truth)) {
        throw ShapeError("mse_loss " + predicted.shape_string() + " vs " + truth.shape_string());
    }
    MseLoss out;
    out.per_row.resize(predicted.rows());
    double total = 0.0;
    for (std::size_t r = 0; r < predicted.rows(); ++r) {
        auto a = predicted.row(r);
        auto b = truth.row(r);
        double s = 0.0;
        for (std::size_t c = 0; c < a.size(); ++c) {
            const double d = a[c] - b[c];
            s += d * d;
        }
        out.per_row[r] = s;
        total += s;
    }
    out.mean = predicted.rows() == 0 ? 0.0 : total / static_cast<double>(predicted.rows());
    return out;
}

void AdamConfig::validate() const {
    if (!(learning_rate > 0.0)) throw DataError("learning rate must be positive");
    if (!(weight_decay >= 0.0)) throw DataError("weight decay must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw DataError("Adam betas must lie in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw DataError("Adam epsilon must be positive");
}

void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state) {
    if (params.size() != grads.size()) {
        throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
    }
    if (state.first_moment.empty()) {
        for (const Matrix* p : params) {
            state.first_moment.emplace_back(p->rows(), p->cols());
            state.second_moment.emplace_back(p->rows(), p->cols());
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw ShapeError("adam_step: optimizer state was built for a different parameter set");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i]->same_shape(grads[i]) || !params[i]->same_shape(state.first_moment[i])) {
            throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i));
        }
    }

    const AdamConfig& c = state.config;
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double correction1 = 1.0 - std::pow(c.beta1, t);
    const double correction2 = 1.0 - std::pow(c.beta2, t);
    const double decay = 1.0 - c.learning_rate * c.weight_decay;

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i]->values();
        auto g = grads[i].values();
        auto m = state.first_moment[i].values();
        auto v = state.second_moment[i].values();
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
            v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
            const double m_hat = m[k] / correction1;
            const double v_hat = v[k] / correction2;
            p[k] = p[k] * decay - c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
        }
    }
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Fisher-Yates with an explicit draw so the order does not depend on the
    // standard library's shuffle.
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

namespace {

// Mean of per-row squared error as a 1x1 node.
struct RegressionGraph {
    Graph graph;
    NodeId loss;
    std::vector<std::string> params;

    explicit RegressionGraph(const MlpSpec& spec) {
        NodeId x = graph.input("x");
        NodeId y = graph.input("y");
        NodeId avg = graph.input("avg");  // 1 x n, each entry 1/n
        NodeId pred = build_mlp(graph, spec, x, "f");
        NodeId diff = graph.sub(pred, y);
        NodeId per_row = graph.row_sum(graph.mul(diff, diff));
        loss = graph.matmul(avg, per_row);
        graph.mark_output("loss", loss);
        params = mlp_leaf_names(spec, "f");
    }
};

}  // namespace

RegressorFit train_regressor(const MlpSpec& spec, const Dataset& train, const Dataset& valid,
                             const TrainConfig& cfg) {
    spec.validate();
    if (train.size() == 0) throw DataError("train_regressor: empty training set");
    if (train.dx() != spec.input_dim || train.dy() != spec.output_dim) {
        throw ShapeError("train_regressor: dataset dims do not match the MLP spec");
    }
    if (valid.size() > 0 && (valid.dx() != spec.input_dim || valid.dy() != spec.output_dim)) {
        throw ShapeError("train_regressor: validation dims do not match the MLP spec");
    }
    if (cfg.batch_size == 0) throw DataError("batch size must be >= 1");

    std::mt19937_64 rng(cfg.seed);
    RegressorFit fit;
    fit.params = init_mlp(spec, rng);
    AdamState opt(cfg.adam);
    RegressionGraph rg(spec);

    MlpParams best = fit.params;
    double best_valid = std::numeric_limits<double>::infinity();

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = shuffled_indices(train.size(), rng);
        double epoch_total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            std::span<const std::size_t> batch(order.data() + start, stop - start);
            const auto nb = static_cast<double>(batch.size());

            Bindings b;
            b.emplace("x", train.x.gather_rows(batch));
            b.emplace("y", train.y.gather_rows(batch));
            b.emplace("avg", Matrix(1, batch.size(), 1.0 / nb));
            bind_mlp(b, fit.params, "f");

            Evaluation ev(rg.graph, std::move(b));
            const double loss = ev.value(rg.loss)(0, 0);
            if (!std::isfinite(loss)) {
                throw NumericalError("regressor training diverged at epoch " +
                                     std::to_string(epoch));
            }
            epoch_total += loss * nb;
            GradientMap grads = ev.backward(rg.loss, rg.params);
            std::vector<Matrix> ordered;
            ordered.reserve(rg.params.size());
            for (const auto& name : rg.params) ordered.push_back(std::move(grads.at(name)));
            adam_step(fit.params.tensors(), ordered, opt);
        }
        fit.train_loss.push_back(epoch_total / static_cast<double>(train.size()));

        if (valid.size() > 0) {
            const double v = mse_loss(mlp_forward(fit.params, valid.x), valid.y).mean;
            fit.valid_loss.push_back(v);
            if (v < best_valid) {
                best_valid = v;
                best = fit.params;
                fit.best_epoch = epoch;
            }
        }
    }
    if (valid.size() > 0) {
        fit.params = std::move(best);
    } else {
        fit.best_epoch = cfg.epochs == 0 ? 0 : cfg.epochs - 1;
    }
    return fit;
}

}  // namespace ridnoise
