#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lpq/diff/tensor.hpp"

namespace lpq::diff {

template <typename T>
class Tape;

// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    int id = -1;

    const BasicTensor<T>& value() const { return tape->value(id); }
    const Shape& dims() const { return value().dims(); }
    std::int64_t dim(std::size_t i) const { return value().dim(i); }
    std::int64_t size() const { return value().size(); }
    bool valid() const { return tape != nullptr && id >= 0; }
};

template <typename T>
using Gradients = std::map<int, BasicTensor<T>>;

// Records operations in execution order and replays them in reverse for
// gradients. Node ids are assigned in recording order, so every parent id is
// strictly smaller than its child's id.
template <typename T>
class Tape {
public:
    using TensorT = BasicTensor<T>;
    using BackwardFn = std::function<void(Tape&, int)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> leaf(TensorT v, bool requires_grad) {
        check_open();
        if (!v.all_finite()) throw NumericalError("non-finite value in leaf tensor");
        Node n;
        n.value = std::move(v);
        n.requires_grad = requires_grad;
        n.is_leaf = true;
        n.op = "leaf";
        nodes_.push_back(std::move(n));
        return {this, static_cast<int>(nodes_.size()) - 1};
    }
    Var<T> param(TensorT v) { return leaf(std::move(v), true); }
    Var<T> constant(TensorT v) { return leaf(std::move(v), false); }

    // Appends an op result. The backward closure is dropped when no parent
    // requires a gradient.
    Var<T> record(const char* op, TensorT value, std::vector<int> parents, BackwardFn fn) {
        check_open();
        if (!value.all_finite()) throw NumericalError(std::string("non-finite output from op '") + op + "'");
        const int self = static_cast<int>(nodes_.size());
        Node n;
        n.op = op;
        n.value = std::move(value);
        for (int p : parents) {
            if (p < 0 || p >= self) throw ValidationError("tape edge does not point to an earlier node (cycle)");
            n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(p)].requires_grad;
        }
        n.parents = std::move(parents);
        if (n.requires_grad) n.backward = std::move(fn);
        nodes_.push_back(std::move(n));
        return {this, self};
    }

    const TensorT& value(int id) const { return node(id).value; }
    bool requires_grad(int id) const { return node(id).requires_grad; }
    const std::string& op_name(int id) const { return node(id).op; }
    std::size_t size() const { return nodes_.size(); }
    bool closed() const { return closed_; }
    void close() { closed_ = true; }

    // Gradient slot of `id` during backward; allocated on first touch.
    TensorT& grad_slot(int id) {
        Node& n = node(id);
        if (!n.has_grad) {
            n.grad = TensorT(n.value.dims());
            n.has_grad = true;
        }
        return n.grad;
    }
    const TensorT& grad_of_node(int id) const { return node(id).grad; }

    // Reverse pass from a scalar loss. Returns one gradient per
    // requires_grad leaf; leaves the loss does not reach get zeros.
    Gradients<T> backward(Var<T> loss) {
        if (loss.tape != this) throw ValidationError("loss does not belong to this tape");
        if (node(loss.id).value.size() != 1) throw ValidationError("backward needs a scalar loss");
        closed_ = true;
        for (Node& n : nodes_) {
            n.has_grad = false;
            n.grad = TensorT();
        }
        grad_slot(loss.id)[0] = T(1);
        for (int i = loss.id; i >= 0; --i) {
            Node& n = node(i);
            for (int p : n.parents)
                if (p >= i) throw ValidationError("cyclic tape");
            if (n.has_grad && n.backward) n.backward(*this, i);
        }
        Gradients<T> out;
        for (int i = 0; i < static_cast<int>(nodes_.size()); ++i) {
            Node& n = node(i);
            if (!n.is_leaf || !n.requires_grad) continue;
            out.emplace(i, n.has_grad ? n.grad : TensorT(n.value.dims()));
        }
        return out;
    }

private:
    struct Node {
        std::string op;
        TensorT value;
        TensorT grad;
        bool has_grad = false;
        bool requires_grad = false;
        bool is_leaf = false;
        std::vector<int> parents;
        BackwardFn backward;
    };

    Node& node(int id) {
        if (id < 0 || id >= static_cast<int>(nodes_.size())) throw ValidationError("bad node id");
        return nodes_[static_cast<std::size_t>(id)];
    }
    const Node& node(int id) const {
        if (id < 0 || id >= static_cast<int>(nodes_.size())) throw ValidationError("bad node id");
        return nodes_[static_cast<std::size_t>(id)];
    }
    void check_open() const {
        if (closed_) throw ValidationError("tape is closed");
    }

    std::vector<Node> nodes_;
    bool closed_ = false;
};

}  // namespace lpq::diff
