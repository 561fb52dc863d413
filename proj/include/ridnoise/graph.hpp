#pragma once

#include "ridnoise/matrix.hpp"

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ridnoise {

struct NodeId {
    std::uint32_t index = 0;
    friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

enum class OpKind : std::uint8_t {
    Input,
    Parameter,
    MatMul,
    Add,
    AddRow,  // n x c plus a 1 x c row broadcast over the batch
    Mul,     // elementwise
    Tanh,
    Relu,
    Exp,
    Log,
    Atan,
    RowSum,  // n x c -> n x 1
    Scale,
    Concat,  // column-wise
    Slice,   // column range [begin, end)
};

const char* op_name(OpKind op) noexcept;

using Bindings = std::map<std::string, Matrix, std::less<>>;
using GradientMap = std::map<std::string, Matrix, std::less<>>;

// Static computation graph over dense matrices. Nodes can only reference
// nodes created before them, so insertion order is a topological order.
// Shapes are resolved at evaluation time from the bound leaves.
class Graph {
public:
    struct Node {
        OpKind op = OpKind::Input;
        std::vector<NodeId> args;
        double scalar = 0.0;
        std::size_t begin = 0;
        std::size_t end = 0;
        std::string name;  // leaves only
    };

    NodeId input(std::string name);
    NodeId parameter(std::string name);

    NodeId matmul(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId add_row(NodeId a, NodeId row);
    NodeId mul(NodeId a, NodeId b);
    NodeId tanh(NodeId a);
    NodeId relu(NodeId a);
    NodeId exp(NodeId a);
    NodeId log(NodeId a);
    NodeId atan(NodeId a);
    NodeId row_sum(NodeId a);
    NodeId scale(NodeId a, double factor);
    NodeId concat(std::vector<NodeId> parts);
    NodeId slice(NodeId a, std::size_t begin, std::size_t end);

    // a - b, composed from scale and add.
    NodeId sub(NodeId a, NodeId b) { return add(a, scale(b, -1.0)); }

    void mark_output(std::string name, NodeId node);

    std::size_t size() const noexcept { return nodes_.size(); }
    const Node& node(NodeId id) const { return nodes_.at(id.index); }
    std::optional<NodeId> find_leaf(std::string_view name) const;
    std::optional<NodeId> find_output(std::string_view name) const;
    const std::vector<std::string>& parameter_names() const noexcept { return parameter_names_; }
    const std::vector<std::string>& input_names() const noexcept { return input_names_; }
    const std::vector<std::pair<std::string, NodeId>>& outputs() const noexcept { return outputs_; }

private:
    NodeId push(Node node);
    NodeId leaf(OpKind op, std::string name);
    void check_arg(NodeId id) const;

    std::vector<Node> nodes_;
    std::map<std::string, NodeId, std::less<>> leaves_;
    std::vector<std::string> parameter_names_;
    std::vector<std::string> input_names_;
    std::vector<std::pair<std::string, NodeId>> outputs_;
};

// Forward values of every node for one set of bindings. Owns the bindings.
class Evaluation {
public:
    Evaluation(const Graph& graph, Bindings bindings);

    const Matrix& value(NodeId id) const;
    const Graph& graph() const noexcept { return *graph_; }

    // Reverse sweep from a 1 x 1 node. Returns d(output)/d(leaf) for each
    // requested leaf name, shaped like the leaf.
    GradientMap backward(NodeId scalar_output, std::span<const std::string> wrt) const;

private:
    const Graph* graph_;
    Bindings bindings_;
    std::vector<const Matrix*> leaf_values_;
    std::vector<Matrix> values_;
};

// Values of every marked output.
std::map<std::string, Matrix, std::less<>> evaluate(const Graph& graph, const Bindings& bindings);

GradientMap gradients(const Graph& graph, const Bindings& bindings, NodeId scalar_output,
                      std::span<const std::string> wrt);

// Central differences against gradients(); returns the largest entrywise
// relative error |a-b| / max(|a|, |b|, 1e-8).
double finite_diff_check(const Graph& graph, const Bindings& bindings, NodeId scalar_output,
                         std::span<const std::string> wrt, double h);

}  // namespace ridnoise
