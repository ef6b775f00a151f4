#include "goat/tagcn.hpp"

#include "goat/error.hpp"

namespace goat {

Var tagcn_layer(Var h, const NormAdj& adj, const TagcnLayerWeights& w, bool residual, bool activate)
{
    const Tensor& hv = h.value();
    if (adj.n_rows != hv.rows() || adj.n_cols != hv.rows())
        throw ContractError("tagcn_layer: adjacency over " + std::to_string(adj.n_rows) + " nodes for " +
                            std::to_string(hv.rows()) + " feature rows");
    if (w.hops.size() < 2)
        throw ContractError("tagcn_layer: need weights for at least one hop beyond the node itself");
    for (const Var& wp : w.hops)
        if (wp.value().rows() != hv.cols())
            throw ContractError("tagcn_layer: hop weight " + shape_str(wp.shape()) + " against features " +
                                shape_str(hv.shape()));
    if (residual && w.hops.front().value().cols() != hv.cols())
        throw ContractError("tagcn_layer: residual needs equal input and output widths");

    Var acc = matmul(h, w.hops[0]);
    Var propagated = h;
    for (std::size_t p = 1; p < w.hops.size(); ++p) {
        propagated = spmm(adj, propagated);
        acc = add(acc, matmul(propagated, w.hops[p]));
    }
    Var y = add(acc, w.bias);
    if (activate)
        y = relu(y);
    return residual ? add(y, h) : y;
}

Var gcn_stack(Var h, const NormAdj& adj, const std::vector<TagcnLayerWeights>& layers, bool residual)
{
    if (layers.empty())
        throw ContractError("gcn_stack: no layers");
    for (std::size_t f = 0; f < layers.size(); ++f)
        h = tagcn_layer(h, adj, layers[f], residual, f + 1 < layers.size());
    return h;
}

} // namespace goat
