#include "goat/tape.hpp"

#include "goat/error.hpp"

namespace goat {

const Tensor& Var::value() const
{
    if (!tape_)
        throw ContractError("use of an unbound Var");
    return tape_->value(id_);
}

bool Var::requires_grad() const
{
    return tape_ && tape_->requires_grad(id_);
}

const Tensor& GradMap::at(Var v) const
{
    return at(v.id());
}

const Tensor& GradMap::at(int id) const
{
    auto it = grads_.find(id);
    if (it == grads_.end())
        throw ContractError("no gradient recorded for tape node " + std::to_string(id));
    return it->second;
}

Var Tape::leaf(Tensor value, bool requires_grad)
{
    value.set_requires_grad(requires_grad);
    Node n;
    n.requires_grad = requires_grad;
    n.value = std::move(value);
    n.op = requires_grad ? "leaf" : "constant";
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward)
{
    if (!value.all_finite())
        throw NumericError(std::string(op) + " produced a non-finite value");
    Node n;
    n.op = op;
    for (const Var& in : inputs) {
        if (&in.tape() != this)
            throw ContractError(std::string(op) + ": input recorded on a different tape");
        n.inputs.push_back(in.id());
        n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(in.id())].requires_grad;
    }
    if (n.requires_grad)
        n.backward = std::move(backward);
    value.set_requires_grad(n.requires_grad);
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Tensor* Tape::grad_slot(int id)
{
    const auto i = static_cast<std::size_t>(id);
    if (!nodes_[i].requires_grad)
        return nullptr;
    if (!has_grad_[i]) {
        grads_[i] = Tensor::zeros_like(nodes_[i].value);
        has_grad_[i] = 1;
    }
    return &grads_[i];
}

GradMap Tape::backward(Var seed)
{
    if (!seed.valid() || &seed.tape() != this)
        throw ContractError("backward seed was not produced on this tape");
    if (seed.value().numel() != 1)
        throw ContractError("backward seed must be scalar, got shape " + shape_str(seed.shape()));

    const auto top = static_cast<std::size_t>(seed.id());
    std::vector<char> reachable(top + 1, 0);
    reachable[top] = 1;
    for (std::size_t i = top + 1; i-- > 0;) {
        if (!reachable[i])
            continue;
        for (int in : nodes_[i].inputs)
            reachable[static_cast<std::size_t>(in)] = 1;
    }

    grads_.assign(nodes_.size(), Tensor{});
    has_grad_.assign(nodes_.size(), 0);
    if (nodes_[top].requires_grad) {
        grads_[top] = Tensor(nodes_[top].value.shape(), 1.0);
        has_grad_[top] = 1;
    }

    for (std::size_t i = top + 1; i-- > 0;) {
        if (!reachable[i] || !has_grad_[i] || !nodes_[i].backward)
            continue;
        nodes_[i].backward(*this, grads_[i]);
    }

    GradMap out;
    for (std::size_t i = 0; i <= top; ++i) {
        if (!reachable[i] || !nodes_[i].requires_grad)
            continue;
        Tensor g = has_grad_[i] ? std::move(grads_[i]) : Tensor::zeros_like(nodes_[i].value);
        if (!g.all_finite())
            throw NumericError("non-finite gradient at tape node " + std::to_string(i) + " (" +
                               std::string(nodes_[i].op) + ")");
        out.grads_.emplace(static_cast<int>(i), std::move(g));
    }
    grads_.clear();
    has_grad_.clear();
    return out;
}

} // namespace goat
