#pragma once

#include "goat/tape.hpp"

#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace goat {

/// Named trainable tensors in insertion order.
class ParamStore {
public:
    void add(std::string name, Tensor value);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;

    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
    std::size_t size() const { return entries_.size(); }
    // Total number of scalar parameters.
    std::size_t count() const;

    friend bool operator==(const ParamStore& a, const ParamStore& b) { return a.entries_ == b.entries_; }

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Parameters recorded as leaves on one tape.
class Bindings {
public:
    Bindings(Tape& tape, const ParamStore& params, bool requires_grad = true);

    Var operator[](const std::string& name) const;
    bool contains(const std::string& name) const { return vars_.count(name) != 0; }
    Tape& tape() const { return *tape_; }

    // Gradient per parameter name; parameters the loss did not reach get zeros.
    std::map<std::string, Tensor> gradients(const GradMap& grads) const;

private:
    Tape* tape_;
    std::map<std::string, Var> vars_;
};

} // namespace goat
