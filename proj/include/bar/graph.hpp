#pragma once

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "bar/tensor.hpp"

namespace bar {

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order by construction, so backward() is a single reverse scan.
///
/// The tape owns all intermediate values for one forward/backward cycle;
/// clear() drops them. Parameters live outside the tape and are bound per
/// step through leaf(); their gradients are read back from the leaf node.
template <class T>
class GraphT {
public:
    struct Node {
        TensorT<T> value;
        TensorT<T> grad;  // allocated on first accumulation
        std::vector<int> parents;
        std::function<void(GraphT&, int)> backward;
        bool requires_grad = false;
    };

    int add(TensorT<T> value, std::vector<int> parents, bool requires_grad,
            std::function<void(GraphT&, int)> backward_fn) {
        for (int p : parents) check_id(p);
        Node n;
        n.value = std::move(value);
        n.parents = std::move(parents);
        n.requires_grad = requires_grad;
        n.backward = std::move(backward_fn);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int leaf(TensorT<T> value, bool requires_grad) {
        return add(std::move(value), {}, requires_grad, nullptr);
    }

    [[nodiscard]] const TensorT<T>& value(int id) const { return nodes_[check_id(id)].value; }
    [[nodiscard]] TensorT<T>& value(int id) { return nodes_[check_id(id)].value; }

    /// Gradient of the last backward() root w.r.t. node id; zeros if the node
    /// was never reached.
    [[nodiscard]] const TensorT<T>& grad(int id) {
        Node& n = nodes_[check_id(id)];
        if (n.grad.data.empty()) n.grad = TensorT<T>::zeros(n.value.shape);
        return n.grad;
    }

    [[nodiscard]] bool requires_grad(int id) const { return nodes_[check_id(id)].requires_grad; }

    TensorT<T>& grad_buffer(int id) {
        Node& n = nodes_[check_id(id)];
        if (n.grad.data.empty()) n.grad = TensorT<T>::zeros(n.value.shape);
        return n.grad;
    }

    void accumulate_grad(int id, const TensorT<T>& g) {
        TensorT<T>& buf = grad_buffer(id);
        check_same_shape(buf, g, "accumulate_grad");
        for (std::size_t i = 0; i < buf.data.size(); ++i) buf.data[i] += g.data[i];
    }

    /// Reverse pass from a scalar root. Grads of prior calls are cleared.
    void backward(int root) {
        check_id(root);
        if (nodes_[static_cast<std::size_t>(root)].value.numel() != 1)
            throw std::invalid_argument("backward: root must be scalar, got shape " +
                                        nodes_[static_cast<std::size_t>(root)].value.shape_str());
        for (auto& n : nodes_) n.grad = TensorT<T>();
        grad_buffer(root).data[0] = T(1);
        for (int id = root; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (!n.requires_grad || !n.backward || n.grad.data.empty()) continue;
            n.backward(*this, id);
        }
    }

    void clear() { nodes_.clear(); }
    [[nodiscard]] int size() const { return static_cast<int>(nodes_.size()); }

private:
    int check_id(int id) const {
        if (id < 0 || id >= static_cast<int>(nodes_.size()))
            throw std::invalid_argument("graph: node id " + std::to_string(id) + " out of range");
        return id;
    }

    std::vector<Node> nodes_;
};

/// Lightweight handle pairing a node id with its graph.
template <class T>
struct VarT {
    GraphT<T>* graph = nullptr;
    int id = -1;

    [[nodiscard]] const TensorT<T>& value() const { return graph->value(id); }
    [[nodiscard]] const TensorT<T>& grad() const { return graph->grad(id); }
    [[nodiscard]] bool requires_grad() const { return graph->requires_grad(id); }
};

template <class T>
VarT<T> make_leaf(GraphT<T>& g, TensorT<T> value, bool requires_grad) {
    return {&g, g.leaf(std::move(value), requires_grad)};
}

using Graph = GraphT<float>;
using Var = VarT<float>;

}  // namespace bar
