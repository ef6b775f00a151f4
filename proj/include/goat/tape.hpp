#pragma once

#include "goat/tensor.hpp"

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace goat {

class Tape;

/// Handle to a tensor recorded on a Tape. Cheap to copy; only valid while
/// its tape is alive.
class Var {
public:
    Var() = default;

    bool valid() const { return tape_ != nullptr; }
    Tape& tape() const { return *tape_; }
    int id() const { return id_; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

/// Gradients produced by Tape::backward, keyed by tape node id.
class GradMap {
public:
    bool contains(Var v) const { return grads_.count(v.id()) != 0; }
    bool contains(int id) const { return grads_.count(id) != 0; }
    const Tensor& at(Var v) const;
    const Tensor& at(int id) const;
    std::size_t size() const { return grads_.size(); }
    const std::map<int, Tensor>& entries() const { return grads_; }

private:
    friend class Tape;
    std::map<int, Tensor> grads_;
};

/// Define-by-run record of tensor operations.
///
/// Nodes are appended in execution order, so ids are already a topological
/// order and backward() is a single reverse sweep. A tape is rebuilt for every
/// forward pass and must stay on one thread.
class Tape {
public:
    // Called once per node during backward with the node's accumulated output
    // gradient; pushes contributions into inputs through grad_slot().
    using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // Appends an op result. Throws NumericError if `value` holds NaN/Inf.
    Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

    const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const Tensor& value(Var v) const { return value(v.id()); }
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    // Reverse sweep from a scalar seed. Gradients sum across fan-out; only
    // requires_grad nodes reachable from the seed get an entry.
    GradMap backward(Var seed);

    // Accumulation buffer for node `id` during backward, zero-initialised on
    // first use. nullptr when the node does not require a gradient.
    Tensor* grad_slot(int id);

private:
    struct Node {
        Tensor value;
        std::vector<int> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        std::string_view op;
    };

    std::deque<Node> nodes_; // stable addresses: value() references survive later records
    std::vector<Tensor> grads_;
    std::vector<char> has_grad_;
};

} // namespace goat
