#pragma once

#include "goat/graph.hpp"
#include "goat/ops.hpp"

#include <vector>

namespace goat {

/// One topology-adaptive graph convolution: a polynomial filter of degree P
/// in the normalised adjacency, one [d_model x d_model] weight per hop
/// (hops[0] acts on the node itself) and a shared bias.
struct TagcnLayerWeights {
    std::vector<Var> hops; // P + 1 weights
    Var bias;              // [d_model]
};

// relu(sum_p A^p h W_p + bias) (+ h when residual). A^p h is built by repeated
// sparse products. `activate = false` drops the relu.
Var tagcn_layer(Var h, const NormAdj& adj, const TagcnLayerWeights& w, bool residual, bool activate = true);

// Layers applied in sequence; relu between layers, none after the last.
Var gcn_stack(Var h, const NormAdj& adj, const std::vector<TagcnLayerWeights>& layers, bool residual);

} // namespace goat
