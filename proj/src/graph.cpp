#include "ridnoise/graph.hpp"

#include "ridnoise/errors.hpp"

#include <algorithm>
#include <cmath>

namespace ridnoise {

const char* op_name(OpKind op) noexcept {
    switch (op) {
        case OpKind::Input: return "input";
        case OpKind::Parameter: return "parameter";
        case OpKind::MatMul: return "matmul";
        case OpKind::Add: return "add";
        case OpKind::AddRow: return "add_row";
        case OpKind::Mul: return "mul";
        case OpKind::Tanh: return "tanh";
        case OpKind::Relu: return "relu";
        case OpKind::Exp: return "exp";
        case OpKind::Log: return "log";
        case OpKind::Atan: return "atan";
        case OpKind::RowSum: return "row_sum";
        case OpKind::Scale: return "scale";
        case OpKind::Concat: return "concat";
        case OpKind::Slice: return "slice";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Construction

namespace {

Graph::Node op_node(OpKind op, std::vector<NodeId> args) {
    Graph::Node n;
    n.op = op;
    n.args = std::move(args);
    return n;
}

}  // namespace

NodeId Graph::push(Node node) {
    for (NodeId a : node.args) check_arg(a);
    nodes_.push_back(std::move(node));
    return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Graph::check_arg(NodeId id) const {
    if (id.index >= nodes_.size()) throw std::out_of_range("graph node reference out of range");
}

NodeId Graph::leaf(OpKind op, std::string name) {
    if (leaves_.contains(name)) throw std::invalid_argument("duplicate leaf name: " + name);
    Node n = op_node(op, {});
    n.name = name;
    NodeId id = push(std::move(n));
    leaves_.emplace(name, id);
    (op == OpKind::Parameter ? parameter_names_ : input_names_).push_back(std::move(name));
    return id;
}

NodeId Graph::input(std::string name) { return leaf(OpKind::Input, std::move(name)); }
NodeId Graph::parameter(std::string name) { return leaf(OpKind::Parameter, std::move(name)); }

NodeId Graph::matmul(NodeId a, NodeId b) { return push(op_node(OpKind::MatMul, {a, b})); }
NodeId Graph::add(NodeId a, NodeId b) { return push(op_node(OpKind::Add, {a, b})); }
NodeId Graph::add_row(NodeId a, NodeId row) { return push(op_node(OpKind::AddRow, {a, row})); }
NodeId Graph::mul(NodeId a, NodeId b) { return push(op_node(OpKind::Mul, {a, b})); }
NodeId Graph::tanh(NodeId a) { return push(op_node(OpKind::Tanh, {a})); }
NodeId Graph::relu(NodeId a) { return push(op_node(OpKind::Relu, {a})); }
NodeId Graph::exp(NodeId a) { return push(op_node(OpKind::Exp, {a})); }
NodeId Graph::log(NodeId a) { return push(op_node(OpKind::Log, {a})); }
NodeId Graph::atan(NodeId a) { return push(op_node(OpKind::Atan, {a})); }
NodeId Graph::row_sum(NodeId a) { return push(op_node(OpKind::RowSum, {a})); }

NodeId Graph::scale(NodeId a, double factor) {
    Node n = op_node(OpKind::Scale, {a});
    n.scalar = factor;
    return push(std::move(n));
}

NodeId Graph::concat(std::vector<NodeId> parts) {
    if (parts.empty()) throw std::invalid_argument("concat of zero nodes");
    return push(op_node(OpKind::Concat, std::move(parts)));
}

NodeId Graph::slice(NodeId a, std::size_t begin, std::size_t end) {
    if (begin >= end) throw std::invalid_argument("empty column slice");
    Node n = op_node(OpKind::Slice, {a});
    n.begin = begin;
    n.end = end;
    return push(std::move(n));
}

void Graph::mark_output(std::string name, NodeId node) {
    check_arg(node);
    outputs_.emplace_back(std::move(name), node);
}

std::optional<NodeId> Graph::find_leaf(std::string_view name) const {
    auto it = leaves_.find(name);
    if (it == leaves_.end()) return std::nullopt;
    return it->second;
}

std::optional<NodeId> Graph::find_output(std::string_view name) const {
    for (const auto& [n, id] : outputs_) {
        if (n == name) return id;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

[[noreturn]] void shape_fail(std::uint32_t node, OpKind op, const std::string& detail) {
    throw ShapeError("node " + std::to_string(node) + " (" + op_name(op) + "): " + detail,
                     static_cast<std::ptrdiff_t>(node));
}

template <typename F>
Matrix map_elementwise(const Matrix& a, F f) {
    Matrix out(a.rows(), a.cols());
    auto src = a.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
    return out;
}

void accumulate(Matrix& into, const Matrix& delta) {
    auto dst = into.values();
    auto src = delta.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Evaluation::Evaluation(const Graph& graph, Bindings bindings)
    : graph_(&graph), bindings_(std::move(bindings)) {
    const std::size_t n = graph.size();
    leaf_values_.assign(n, nullptr);
    values_.resize(n);

    for (std::uint32_t i = 0; i < n; ++i) {
        const auto& node = graph.node(NodeId{i});
        auto arg = [&](std::size_t k) -> const Matrix& { return value(node.args[k]); };
        switch (node.op) {
            case OpKind::Input:
            case OpKind::Parameter: {
                auto it = bindings_.find(node.name);
                if (it == bindings_.end()) {
                    throw std::invalid_argument("unbound leaf '" + node.name + "' (node " +
                                                std::to_string(i) + ")");
                }
                leaf_values_[i] = &it->second;
                break;
            }
            case OpKind::MatMul: {
                const Matrix& a = arg(0);
                const Matrix& b = arg(1);
                if (a.cols() != b.rows()) {
                    shape_fail(i, node.op, a.shape_string() + " * " + b.shape_string());
                }
                values_[i] = ridnoise::matmul(a, b);
                break;
            }
            case OpKind::Add:
            case OpKind::Mul: {
                const Matrix& a = arg(0);
                const Matrix& b = arg(1);
                if (!a.same_shape(b)) {
                    shape_fail(i, node.op, a.shape_string() + " vs " + b.shape_string());
                }
                Matrix out(a.rows(), a.cols());
                auto va = a.values();
                auto vb = b.values();
                auto vo = out.values();
                if (node.op == OpKind::Add) {
                    for (std::size_t k = 0; k < vo.size(); ++k) vo[k] = va[k] + vb[k];
                } else {
                    for (std::size_t k = 0; k < vo.size(); ++k) vo[k] = va[k] * vb[k];
                }
                values_[i] = std::move(out);
                break;
            }
            case OpKind::AddRow: {
                const Matrix& a = arg(0);
                const Matrix& r = arg(1);
                if (r.rows() != 1 || r.cols() != a.cols()) {
                    shape_fail(i, node.op, a.shape_string() + " + row " + r.shape_string());
                }
                Matrix out = a;
                for (std::size_t row = 0; row < out.rows(); ++row) {
                    auto dst = out.row(row);
                    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += r(0, c);
                }
                values_[i] = std::move(out);
                break;
            }
            case OpKind::Tanh:
                values_[i] = map_elementwise(arg(0), [](double v) { return std::tanh(v); });
                break;
            case OpKind::Relu:
                values_[i] = map_elementwise(arg(0), [](double v) { return v > 0.0 ? v : 0.0; });
                break;
            case OpKind::Exp:
                values_[i] = map_elementwise(arg(0), [](double v) { return std::exp(v); });
                break;
            case OpKind::Log:
                values_[i] = map_elementwise(arg(0), [](double v) { return std::log(v); });
                break;
            case OpKind::Atan:
                values_[i] = map_elementwise(arg(0), [](double v) { return std::atan(v); });
                break;
            case OpKind::RowSum: {
                const Matrix& a = arg(0);
                Matrix out(a.rows(), 1);
                for (std::size_t r = 0; r < a.rows(); ++r) {
                    double s = 0.0;
                    for (double v : a.row(r)) s += v;
                    out(r, 0) = s;
                }
                values_[i] = std::move(out);
                break;
            }
            case OpKind::Scale: {
                const double f = node.scalar;
                values_[i] = map_elementwise(arg(0), [f](double v) { return f * v; });
                break;
            }
            case OpKind::Concat: {
                const std::size_t rows = arg(0).rows();
                std::size_t cols = 0;
                for (std::size_t k = 0; k < node.args.size(); ++k) {
                    if (arg(k).rows() != rows) {
                        shape_fail(i, node.op, "row counts differ across concat parts");
                    }
                    cols += arg(k).cols();
                }
                Matrix out(rows, cols);
                std::size_t offset = 0;
                for (std::size_t k = 0; k < node.args.size(); ++k) {
                    const Matrix& part = arg(k);
                    for (std::size_t r = 0; r < rows; ++r) {
                        auto src = part.row(r);
                        std::copy(src.begin(), src.end(),
                                  out.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
                    }
                    offset += part.cols();
                }
                values_[i] = std::move(out);
                break;
            }
            case OpKind::Slice: {
                const Matrix& a = arg(0);
                if (node.end > a.cols()) {
                    shape_fail(i, node.op, "slice [" + std::to_string(node.begin) + "," +
                                               std::to_string(node.end) + ") of " +
                                               a.shape_string());
                }
                Matrix out(a.rows(), node.end - node.begin);
                for (std::size_t r = 0; r < a.rows(); ++r) {
                    auto src = a.row(r);
                    std::copy(src.begin() + static_cast<std::ptrdiff_t>(node.begin),
                              src.begin() + static_cast<std::ptrdiff_t>(node.end),
                              out.row(r).begin());
                }
                values_[i] = std::move(out);
                break;
            }
        }
    }
}

const Matrix& Evaluation::value(NodeId id) const {
    if (leaf_values_.at(id.index) != nullptr) return *leaf_values_[id.index];
    return values_[id.index];
}

// ---------------------------------------------------------------------------
// Reverse

GradientMap Evaluation::backward(NodeId scalar_output, std::span<const std::string> wrt) const {
    const Graph& g = *graph_;
    const Matrix& out = value(scalar_output);
    if (out.rows() != 1 || out.cols() != 1) {
        throw ShapeError("gradient output node " + std::to_string(scalar_output.index) +
                             " is " + out.shape_string() + ", expected 1x1",
                         static_cast<std::ptrdiff_t>(scalar_output.index));
    }

    // Only propagate through nodes that depend on a requested leaf.
    const std::size_t n = scalar_output.index + 1;
    std::vector<char> needs(n, 0);
    for (const auto& name : wrt) {
        auto id = g.find_leaf(name);
        if (!id) throw std::invalid_argument("unbound leaf '" + name + "' requested in gradients");
        if (id->index < n) needs[id->index] = 1;
    }
    for (std::uint32_t i = 0; i < n; ++i) {
        for (NodeId a : g.node(NodeId{i}).args) {
            if (needs[a.index]) {
                needs[i] = 1;
                break;
            }
        }
    }

    std::vector<Matrix> adj(n);
    adj[scalar_output.index] = Matrix(1, 1, 1.0);

    auto grad_for = [&](NodeId a) -> Matrix* {
        if (!needs[a.index]) return nullptr;
        Matrix& slot = adj[a.index];
        if (slot.empty()) {
            const Matrix& v = value(a);
            slot = Matrix(v.rows(), v.cols());
        }
        return &slot;
    };

    for (std::uint32_t idx = n; idx-- > 0;) {
        if (!needs[idx] || adj[idx].empty()) continue;
        const auto& node = g.node(NodeId{idx});
        const Matrix& dout = adj[idx];
        const Matrix& self = value(NodeId{idx});

        switch (node.op) {
            case OpKind::Input:
            case OpKind::Parameter:
                break;
            case OpKind::MatMul: {
                const Matrix& a = value(node.args[0]);
                const Matrix& b = value(node.args[1]);
                if (Matrix* da = grad_for(node.args[0])) accumulate(*da, matmul_nt(dout, b));
                if (Matrix* db = grad_for(node.args[1])) accumulate(*db, matmul_tn(a, dout));
                break;
            }
            case OpKind::Add:
                if (Matrix* da = grad_for(node.args[0])) accumulate(*da, dout);
                if (Matrix* db = grad_for(node.args[1])) accumulate(*db, dout);
                break;
            case OpKind::AddRow:
                if (Matrix* da = grad_for(node.args[0])) accumulate(*da, dout);
                if (Matrix* dr = grad_for(node.args[1])) {
                    for (std::size_t r = 0; r < dout.rows(); ++r) {
                        auto src = dout.row(r);
                        for (std::size_t c = 0; c < src.size(); ++c) (*dr)(0, c) += src[c];
                    }
                }
                break;
            case OpKind::Mul: {
                const Matrix& a = value(node.args[0]);
                const Matrix& b = value(node.args[1]);
                auto vd = dout.values();
                if (Matrix* da = grad_for(node.args[0])) {
                    auto dst = da->values();
                    auto vb = b.values();
                    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += vd[k] * vb[k];
                }
                if (Matrix* db = grad_for(node.args[1])) {
                    auto dst = db->values();
                    auto va = a.values();
                    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += vd[k] * va[k];
                }
                break;
            }
            case OpKind::Tanh:
            case OpKind::Relu:
            case OpKind::Exp:
            case OpKind::Log:
            case OpKind::Atan:
            case OpKind::Scale: {
                Matrix* da = grad_for(node.args[0]);
                if (!da) break;
                auto dst = da->values();
                auto vd = dout.values();
                auto vx = value(node.args[0]).values();
                auto vy = self.values();
                for (std::size_t k = 0; k < dst.size(); ++k) {
                    double local = 0.0;
                    switch (node.op) {
                        case OpKind::Tanh: local = 1.0 - vy[k] * vy[k]; break;
                        case OpKind::Relu: local = vx[k] > 0.0 ? 1.0 : 0.0; break;
                        case OpKind::Exp: local = vy[k]; break;
                        case OpKind::Log: local = 1.0 / vx[k]; break;
                        case OpKind::Atan: local = 1.0 / (1.0 + vx[k] * vx[k]); break;
                        case OpKind::Scale: local = node.scalar; break;
                        default: break;
                    }
                    dst[k] += vd[k] * local;
                }
                break;
            }
            case OpKind::RowSum: {
                Matrix* da = grad_for(node.args[0]);
                if (!da) break;
                for (std::size_t r = 0; r < da->rows(); ++r) {
                    const double d = dout(r, 0);
                    for (double& v : da->row(r)) v += d;
                }
                break;
            }
            case OpKind::Concat: {
                std::size_t offset = 0;
                for (NodeId part : node.args) {
                    const std::size_t w = value(part).cols();
                    if (Matrix* dp = grad_for(part)) {
                        for (std::size_t r = 0; r < dout.rows(); ++r) {
                            auto src = dout.row(r);
                            auto dst = dp->row(r);
                            for (std::size_t c = 0; c < w; ++c) dst[c] += src[offset + c];
                        }
                    }
                    offset += w;
                }
                break;
            }
            case OpKind::Slice: {
                Matrix* da = grad_for(node.args[0]);
                if (!da) break;
                for (std::size_t r = 0; r < dout.rows(); ++r) {
                    auto src = dout.row(r);
                    auto dst = da->row(r);
                    for (std::size_t c = 0; c < src.size(); ++c) dst[node.begin + c] += src[c];
                }
                break;
            }
        }
    }

    GradientMap result;
    for (const auto& name : wrt) {
        NodeId id = *g.find_leaf(name);
        if (id.index < n && !adj[id.index].empty()) {
            result.insert_or_assign(name, std::move(adj[id.index]));
        } else {
            const Matrix& v = value(id);
            result.insert_or_assign(name, Matrix(v.rows(), v.cols()));
        }
    }
    return result;
}

// ---------------------------------------------------------------------------

std::map<std::string, Matrix, std::less<>> evaluate(const Graph& graph, const Bindings& bindings) {
    Evaluation ev(graph, bindings);
    std::map<std::string, Matrix, std::less<>> out;
    for (const auto& [name, id] : graph.outputs()) out.insert_or_assign(name, ev.value(id));
    return out;
}

GradientMap gradients(const Graph& graph, const Bindings& bindings, NodeId scalar_output,
                      std::span<const std::string> wrt) {
    return Evaluation(graph, bindings).backward(scalar_output, wrt);
}

double finite_diff_check(const Graph& graph, const Bindings& bindings, NodeId scalar_output,
                         std::span<const std::string> wrt, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("finite difference step must be positive");
    const GradientMap analytic = gradients(graph, bindings, scalar_output, wrt);

    Bindings probe = bindings;
    auto scalar_at = [&]() { return Evaluation(graph, probe).value(scalar_output)(0, 0); };

    double worst = 0.0;
    for (const auto& name : wrt) {
        auto slot = probe.find(name);
        if (slot == probe.end()) throw std::invalid_argument("unbound leaf '" + name + "'");
        const Matrix& grad = analytic.find(name)->second;
        for (std::size_t k = 0; k < slot->second.size(); ++k) {
            const double saved = slot->second.values()[k];
            slot->second.values()[k] = saved + h;
            const double up = scalar_at();
            slot->second.values()[k] = saved - h;
            const double down = scalar_at();
            slot->second.values()[k] = saved;

            const double numeric = (up - down) / (2.0 * h);
            const double a = grad.values()[k];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace ridnoise
