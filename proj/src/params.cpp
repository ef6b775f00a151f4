#include "goat/params.hpp"

#include "goat/error.hpp"

namespace goat {

void ParamStore::add(std::string name, Tensor value)
{
    if (contains(name))
        throw ContractError("duplicate parameter '" + name + "'");
    if (!value.all_finite())
        throw NumericError("parameter '" + name + "' is not finite");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
}

Tensor& ParamStore::at(const std::string& name)
{
    auto it = index_.find(name);
    if (it == index_.end())
        throw ContractError("unknown parameter '" + name + "'");
    return entries_[it->second].second;
}

const Tensor& ParamStore::at(const std::string& name) const
{
    auto it = index_.find(name);
    if (it == index_.end())
        throw ContractError("unknown parameter '" + name + "'");
    return entries_[it->second].second;
}

std::size_t ParamStore::count() const
{
    std::size_t n = 0;
    for (const auto& [name, t] : entries_)
        n += t.numel();
    return n;
}

Bindings::Bindings(Tape& tape, const ParamStore& params, bool requires_grad) : tape_(&tape)
{
    for (const auto& [name, t] : params.entries())
        vars_.emplace(name, tape.leaf(t, requires_grad));
}

Var Bindings::operator[](const std::string& name) const
{
    auto it = vars_.find(name);
    if (it == vars_.end())
        throw ContractError("parameter '" + name + "' is not bound");
    return it->second;
}

std::map<std::string, Tensor> Bindings::gradients(const GradMap& grads) const
{
    std::map<std::string, Tensor> out;
    for (const auto& [name, v] : vars_)
        out.emplace(name, grads.contains(v) ? grads.at(v) : Tensor::zeros_like(v.value()));
    return out;
}

} // namespace goat
