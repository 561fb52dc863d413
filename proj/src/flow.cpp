#include "ridnoise/flow.hpp"

#include "ridnoise/errors.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace ridnoise {

namespace {

constexpr double kTwoOverPi = 2.0 / std::numbers::pi;

Matrix gather_columns(const Matrix& m, std::span<const std::size_t> cols) {
    Matrix out(m.rows(), cols.size());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < cols.size(); ++c) out(r, c) = m(r, cols[c]);
    }
    return out;
}

Matrix subnet_input(const CouplingBlock& block, const Matrix& u, const Matrix& cond) {
    return hconcat(gather_columns(u, block.passive), cond);
}

void check_block_shapes(const CouplingBlock& block, const Matrix& u, const Matrix& cond) {
    const std::size_t dx = block.passive.size() + block.active.size();
    if (u.cols() != dx) {
        throw ShapeError("coupling block expects " + std::to_string(dx) + " columns, got " +
                         std::to_string(u.cols()));
    }
    if (u.rows() != cond.rows()) throw ShapeError("coupling block: row counts of u and y differ");
    if (cond.cols() + block.passive.size() != block.subnet_s.spec.input_dim) {
        throw ShapeError("coupling block: condition has " + std::to_string(cond.cols()) +
                         " columns, subnet expects " +
                         std::to_string(block.subnet_s.spec.input_dim - block.passive.size()));
    }
}

// Clamped log-scale and shift for the active half.
std::pair<Matrix, Matrix> scale_and_shift(const CouplingBlock& block, const Matrix& passive_in,
                                          const Matrix& cond) {
    Matrix in = subnet_input(block, passive_in, cond);
    Matrix s = mlp_forward(block.subnet_s, in);
    for (double& v : s.values()) v = soft_clamp(v, block.clamp);
    return {std::move(s), mlp_forward(block.subnet_t, in)};
}

}  // namespace

double soft_clamp(double raw, double clamp) { return clamp * kTwoOverPi * std::atan(raw); }

Standardization Standardization::identity(std::size_t d) {
    return {std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
}

Standardization Standardization::fit(const Matrix& data) {
    if (data.rows() == 0) throw DataError("cannot standardize an empty matrix");
    Standardization out = identity(data.cols());
    const double n = static_cast<double>(data.rows());
    for (std::size_t c = 0; c < data.cols(); ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < data.rows(); ++r) mean += data(r, c);
        mean /= n;
        double var = 0.0;
        for (std::size_t r = 0; r < data.rows(); ++r) var += (data(r, c) - mean) * (data(r, c) - mean);
        const double sd = std::sqrt(var / n);
        out.shift[c] = mean;
        if (sd > 1e-12 * std::max(1.0, std::abs(mean))) out.scale[c] = sd;
    }
    return out;
}

Matrix Standardization::apply(const Matrix& raw) const {
    Matrix out = raw;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = (out(r, c) - shift[c]) / scale[c];
    }
    return out;
}

Matrix Standardization::invert(const Matrix& standardized) const {
    Matrix out = standardized;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = out(r, c) * scale[c] + shift[c];
    }
    return out;
}

double Standardization::log_scale_sum() const {
    double s = 0.0;
    for (double v : scale) s += std::log(v);
    return s;
}

std::vector<Matrix*> FlowModel::tensors() {
    std::vector<Matrix*> out;
    for (auto& b : blocks) {
        for (Matrix* t : b.subnet_s.tensors()) out.push_back(t);
        for (Matrix* t : b.subnet_t.tensors()) out.push_back(t);
    }
    return out;
}

void FlowModel::validate() const {
    if (dx == 0 || dy == 0) throw DataError("flow dimensions must be >= 1");
    if (blocks.empty()) throw DataError("flow needs at least one coupling block");
    if (permutations.size() + 1 != blocks.size()) {
        throw DataError("flow needs exactly one permutation between consecutive blocks");
    }
    for (const auto& perm : permutations) {
        if (perm.size() != dx) throw DataError("permutation length differs from dx");
        std::vector<char> seen(dx, 0);
        for (std::size_t p : perm) {
            if (p >= dx || seen[p]) throw DataError("permutation is not a bijection");
            seen[p] = 1;
        }
    }
    for (const auto* norm : {&x_norm, &y_norm}) {
        const std::size_t d = norm == &x_norm ? dx : dy;
        if (norm->shift.size() != d || norm->scale.size() != d) {
            throw DataError("standardization length differs from the flow dimension");
        }
        for (std::size_t c = 0; c < d; ++c) {
            if (!std::isfinite(norm->shift[c]) || !(norm->scale[c] > 0.0) || !std::isfinite(norm->scale[c])) {
                throw DataError("standardization needs finite shifts and positive scales");
            }
        }
    }
    for (const auto& b : blocks) {
        if (b.passive.size() + b.active.size() != dx || b.active.empty()) {
            throw DataError("coupling mask does not partition the coordinates");
        }
        if (!(b.clamp > 0.0)) throw DataError("coupling clamp must be positive");
        const std::size_t in = b.passive.size() + dy;
        for (const MlpParams* net : {&b.subnet_s, &b.subnet_t}) {
            if (net->spec.input_dim != in || net->spec.output_dim != b.active.size()) {
                throw DataError("coupling subnet dimensions do not match the mask");
            }
        }
    }
}

FlowModel make_flow(std::size_t dx, std::size_t dy, const FlowArchitecture& arch,
                    std::uint64_t seed) {
    if (dx == 0 || dy == 0) throw DataError("flow dimensions must be >= 1");
    if (arch.blocks == 0) throw DataError("flow needs at least one coupling block");
    if (!(arch.clamp > 0.0)) throw DataError("coupling clamp must be positive");

    std::mt19937_64 rng(seed);
    FlowModel model;
    model.dx = dx;
    model.dy = dy;
    model.x_norm = Standardization::identity(dx);
    model.y_norm = Standardization::identity(dy);
    for (std::size_t k = 0; k < arch.blocks; ++k) {
        CouplingBlock block;
        block.clamp = arch.clamp;
        if (dx == 1) {
            block.active = {0};
        } else {
            // checkerboard, flipped on every other block
            for (std::size_t i = 0; i < dx; ++i) {
                ((i + k) % 2 == 0 ? block.passive : block.active).push_back(i);
            }
        }
        MlpSpec spec{block.passive.size() + dy, block.active.size(), arch.hidden, arch.activation};
        block.subnet_s = init_mlp(spec, rng, true);
        block.subnet_t = init_mlp(spec, rng, true);
        model.blocks.push_back(std::move(block));
        if (k + 1 < arch.blocks) model.permutations.push_back(shuffled_indices(dx, rng));
    }
    return model;
}

CouplingOutput coupling_forward(const CouplingBlock& block, const Matrix& u, const Matrix& cond) {
    check_block_shapes(block, u, cond);
    auto [s, t] = scale_and_shift(block, u, cond);
    CouplingOutput out{u, std::vector<double>(u.rows(), 0.0)};
    for (std::size_t r = 0; r < u.rows(); ++r) {
        for (std::size_t a = 0; a < block.active.size(); ++a) {
            const std::size_t c = block.active[a];
            out.v(r, c) = u(r, c) * std::exp(s(r, a)) + t(r, a);
            out.logdet[r] += s(r, a);
        }
    }
    return out;
}

Matrix coupling_inverse(const CouplingBlock& block, const Matrix& v, const Matrix& cond) {
    check_block_shapes(block, v, cond);
    auto [s, t] = scale_and_shift(block, v, cond);
    Matrix u = v;
    for (std::size_t r = 0; r < v.rows(); ++r) {
        for (std::size_t a = 0; a < block.active.size(); ++a) {
            const std::size_t c = block.active[a];
            u(r, c) = (v(r, c) - t(r, a)) * std::exp(-s(r, a));
        }
    }
    return u;
}

Matrix permute_columns(const Matrix& m, std::span<const std::size_t> perm) {
    return gather_columns(m, perm);
}

Matrix unpermute_columns(const Matrix& m, std::span<const std::size_t> perm) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t j = 0; j < perm.size(); ++j) out(r, perm[j]) = m(r, j);
    }
    return out;
}

namespace {

void check_flow_inputs(const FlowModel& model, const Matrix& x, const Matrix& y) {
    if (x.cols() != model.dx || y.cols() != model.dy) {
        throw ShapeError("flow expects x with " + std::to_string(model.dx) + " and y with " +
                         std::to_string(model.dy) + " columns, got " + x.shape_string() +
                         " and " + y.shape_string());
    }
    if (x.rows() != y.rows()) throw ShapeError("flow: x and y row counts differ");
}

}  // namespace

FlowPass flow_forward(const FlowModel& model, const Matrix& z, const Matrix& y) {
    check_flow_inputs(model, z, y);
    const Matrix cond = model.y_norm.apply(y);
    FlowPass pass{z, std::vector<double>(z.rows(), model.x_norm.log_scale_sum())};
    for (std::size_t k = 0; k < model.blocks.size(); ++k) {
        CouplingOutput step = coupling_forward(model.blocks[k], pass.out, cond);
        for (std::size_t r = 0; r < step.logdet.size(); ++r) pass.logdet[r] += step.logdet[r];
        pass.out = k < model.permutations.size() ? permute_columns(step.v, model.permutations[k])
                                                 : std::move(step.v);
    }
    pass.out = model.x_norm.invert(pass.out);
    return pass;
}

FlowPass flow_inverse(const FlowModel& model, const Matrix& x, const Matrix& y) {
    check_flow_inputs(model, x, y);
    const Matrix cond = model.y_norm.apply(y);
    FlowPass pass{model.x_norm.apply(x), std::vector<double>(x.rows(), model.x_norm.log_scale_sum())};
    for (std::size_t k = model.blocks.size(); k-- > 0;) {
        if (k < model.permutations.size()) {
            pass.out = unpermute_columns(pass.out, model.permutations[k]);
        }
        const CouplingBlock& block = model.blocks[k];
        auto [s, t] = scale_and_shift(block, pass.out, cond);
        for (std::size_t r = 0; r < pass.out.rows(); ++r) {
            for (std::size_t a = 0; a < block.active.size(); ++a) {
                const std::size_t c = block.active[a];
                pass.out(r, c) = (pass.out(r, c) - t(r, a)) * std::exp(-s(r, a));
                pass.logdet[r] += s(r, a);
            }
        }
    }
    return pass;
}

double standard_normal_log_density(std::span<const double> z) {
    double sq = 0.0;
    for (double v : z) sq += v * v;
    return -0.5 * sq - 0.5 * static_cast<double>(z.size()) * std::log(2.0 * std::numbers::pi);
}

std::vector<double> flow_log_prob(const FlowModel& model, const Matrix& x, const Matrix& y) {
    FlowPass pass = flow_inverse(model, x, y);
    std::vector<double> out(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        out[r] = standard_normal_log_density(pass.out.row(r)) - pass.logdet[r];
    }
    return out;
}

Matrix flow_sample(const FlowModel& model, const Matrix& y, std::size_t n_per_row,
                   std::uint64_t seed) {
    if (n_per_row == 0) throw DataError("flow_sample needs at least one sample per target");
    if (y.cols() != model.dy) {
        throw ShapeError("flow_sample: y has " + std::to_string(y.cols()) + " columns, model dy = " +
                         std::to_string(model.dy));
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t n = y.rows() * n_per_row;
    Matrix z(n, model.dx);
    Matrix cond(n, model.dy);
    for (std::size_t i = 0; i < y.rows(); ++i) {
        for (std::size_t j = 0; j < n_per_row; ++j) {
            const std::size_t r = i * n_per_row + j;
            for (double& v : z.row(r)) v = normal(rng);
            std::copy(y.row(i).begin(), y.row(i).end(), cond.row(r).begin());
        }
    }
    return flow_forward(model, z, cond).out;
}

// ---------------------------------------------------------------------------
// Weighted likelihood training

void WnllConfig::validate() const {
    if (batch_size == 0) throw DataError("batch size must be >= 1");
    if (!(sigma_aug >= 0.0)) throw DataError("sigma_aug must be >= 0");
    adam.validate();
}

namespace {

NodeId gather_node(Graph& g, NodeId m, std::span<const std::size_t> cols) {
    std::vector<NodeId> parts;
    parts.reserve(cols.size());
    for (std::size_t c : cols) parts.push_back(g.slice(m, c, c + 1));
    return parts.size() == 1 ? parts.front() : g.concat(std::move(parts));
}

std::string subnet_prefix(std::size_t block, char which) {
    return "block" + std::to_string(block) + "." + which;
}

}  // namespace

// x and y are bound in standardized form.
WnllGraph::WnllGraph(const FlowModel& model) : dx_(model.dx) {
    model.validate();
    NodeId x = graph_.input("x");
    NodeId y = graph_.input("y");
    NodeId w = graph_.input("w");               // 1 x n, w_i / n
    NodeId log_norm = graph_.input("log_norm");  // 1 x 1, (dx/2) log(2 pi) + sum log x_scale

    NodeId current = x;
    std::vector<NodeId> log_scales;
    for (std::size_t k = model.blocks.size(); k-- > 0;) {
        const CouplingBlock& block = model.blocks[k];
        if (k < model.permutations.size()) {
            // inverse permutation: column perm[j] of the result is column j
            const auto& perm = model.permutations[k];
            std::vector<std::size_t> inverse(perm.size());
            for (std::size_t j = 0; j < perm.size(); ++j) inverse[perm[j]] = j;
            current = gather_node(graph_, current, inverse);
        }
        NodeId cond = block.passive.empty()
                          ? y
                          : graph_.concat({gather_node(graph_, current, block.passive), y});
        NodeId raw_s = build_mlp(graph_, block.subnet_s.spec, cond, subnet_prefix(k, 's'));
        NodeId t = build_mlp(graph_, block.subnet_t.spec, cond, subnet_prefix(k, 't'));
        NodeId s = graph_.scale(graph_.atan(raw_s), block.clamp * kTwoOverPi);
        NodeId v_active = gather_node(graph_, current, block.active);
        NodeId u_active = graph_.mul(graph_.sub(v_active, t), graph_.exp(graph_.scale(s, -1.0)));
        log_scales.push_back(graph_.row_sum(s));

        // reassemble columns in index order
        std::vector<NodeId> cols(dx_);
        for (std::size_t a = 0; a < block.active.size(); ++a) {
            cols[block.active[a]] =
                block.active.size() == 1 ? u_active : graph_.slice(u_active, a, a + 1);
        }
        for (std::size_t p : block.passive) cols[p] = graph_.slice(current, p, p + 1);
        current = cols.size() == 1 ? cols.front() : graph_.concat(std::move(cols));

        for (const auto& name : mlp_leaf_names(block.subnet_s.spec, subnet_prefix(k, 's'))) {
            params_.push_back(name);
        }
        for (const auto& name : mlp_leaf_names(block.subnet_t.spec, subnet_prefix(k, 't'))) {
            params_.push_back(name);
        }
    }
    // -log q = 0.5 |z|^2 + (dx/2) log 2pi + sum log x_scale + sum_k sum(s_k)
    NodeId nll = graph_.add_row(graph_.scale(graph_.row_sum(graph_.mul(current, current)), 0.5),
                                log_norm);
    for (NodeId ls : log_scales) nll = graph_.add(nll, ls);
    loss_ = graph_.matmul(w, nll);
    graph_.mark_output("nll", nll);
    graph_.mark_output("loss", loss_);
}

Bindings WnllGraph::bind(const FlowModel& model, const Matrix& x, const Matrix& y,
                         std::span<const double> weights) const {
    if (weights.size() != x.rows()) throw DataError("one weight per row is required");
    Bindings b;
    b.emplace("x", model.x_norm.apply(x));
    b.emplace("y", model.y_norm.apply(y));
    Matrix w(1, x.rows());
    const double inv_n = 1.0 / static_cast<double>(x.rows());
    for (std::size_t i = 0; i < weights.size(); ++i) w(0, i) = weights[i] * inv_n;
    b.emplace("w", std::move(w));
    b.emplace("log_norm",
              Matrix(1, 1, 0.5 * static_cast<double>(dx_) * std::log(2.0 * std::numbers::pi) +
                               model.x_norm.log_scale_sum()));
    for (std::size_t k = 0; k < model.blocks.size(); ++k) {
        bind_mlp(b, model.blocks[k].subnet_s, subnet_prefix(k, 's'));
        bind_mlp(b, model.blocks[k].subnet_t, subnet_prefix(k, 't'));
    }
    return b;
}

double wnll_loss(const FlowModel& model, const Matrix& x, const Matrix& y,
                 std::span<const double> weights) {
    WnllGraph g(model);
    Evaluation ev(g.graph(), g.bind(model, x, y, weights));
    return ev.value(g.loss())(0, 0);
}

FlowFit train_flow_wnll(FlowModel model, const Dataset& data, std::span<const double> weights,
                        const WnllConfig& cfg) {
    cfg.validate();
    model.validate();
    data.validate();
    if (data.size() == 0) throw DataError("train_flow_wnll: empty dataset");
    if (data.dx() != model.dx || data.dy() != model.dy) {
        throw ShapeError("train_flow_wnll: dataset dims do not match the model");
    }
    if (weights.size() != data.size()) {
        throw DataError("weights length " + std::to_string(weights.size()) +
                        " does not match dataset size " + std::to_string(data.size()));
    }
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (!(weights[i] > 0.0) || !std::isfinite(weights[i])) {
            throw DataError("weight " + std::to_string(i) + " is not positive");
        }
    }

    std::mt19937_64 rng(cfg.seed);
    Matrix targets = data.y;
    if (cfg.relabel) {
        TrainConfig tc;
        tc.epochs = cfg.relabel_epochs;
        tc.seed = rng();
        tc.adam = cfg.adam;
        MlpSpec spec{data.dx(), data.dy(), cfg.relabel_hidden, Activation::Tanh};
        targets = mlp_forward(train_regressor(spec, data, {}, tc).params, data.x);
    }
    if (cfg.standardize) {
        model.x_norm = Standardization::fit(data.x);
        model.y_norm = Standardization::fit(targets);
    }

    WnllGraph wg(model);
    AdamState opt(cfg.adam);
    std::normal_distribution<double> normal(0.0, 1.0);
    FlowFit fit;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = shuffled_indices(data.size(), rng);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            std::span<const std::size_t> batch(order.data() + start, stop - start);
            Matrix xb = data.x.gather_rows(batch);
            if (cfg.sigma_aug > 0.0) {
                for (double& v : xb.values()) v += cfg.sigma_aug * normal(rng);
            }
            std::vector<double> wb(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i) wb[i] = weights[batch[i]];

            Evaluation ev(wg.graph(), wg.bind(model, xb, targets.gather_rows(batch), wb));
            const double loss = ev.value(wg.loss())(0, 0);
            if (!std::isfinite(loss)) {
                throw NumericalError("non-finite WNLL at epoch " + std::to_string(epoch));
            }
            total += loss * static_cast<double>(batch.size());
            GradientMap grads = ev.backward(wg.loss(), wg.parameter_names());
            std::vector<Matrix> ordered;
            ordered.reserve(grads.size());
            // parameter_names() is block-descending; tensors() is block-ascending
            for (std::size_t k = 0; k < model.blocks.size(); ++k) {
                for (char which : {'s', 't'}) {
                    const MlpSpec& spec = which == 's' ? model.blocks[k].subnet_s.spec
                                                       : model.blocks[k].subnet_t.spec;
                    for (const auto& name : mlp_leaf_names(spec, subnet_prefix(k, which))) {
                        ordered.push_back(std::move(grads.at(name)));
                    }
                }
            }
            adam_step(model.tensors(), ordered, opt);
        }
        fit.loss_trace.push_back(total / static_cast<double>(data.size()));
    }
    fit.model = std::move(model);
    return fit;
}

}  // namespace ridnoise
