#include "goat/pooling.hpp"

#include "goat/error.hpp"

#include <cmath>

namespace goat {

Var gated_attention_scores(Var h, const PoolingWeights& p)
{
    const Tensor& hv = h.value();
    if (hv.rank() != 2)
        throw ContractError("gated_attention_scores: node features must be [N x d_model]");
    if (p.v.value().cols() != hv.cols() || p.u.value().cols() != hv.cols())
        throw ContractError("gated_attention_scores: pooling width " + shape_str(p.v.shape()) + " against features " +
                            shape_str(hv.shape()));
    Var gated = mul(tanh(matmul_nt(h, p.v)), sigmoid(matmul_nt(h, p.u))); // [N x d_attn]
    Var scores = matmul_nt(p.w, gated);                                     // [1 x N]
    return reshape(softmax_lastdim(scores), Shape{hv.rows()});
}

Var pool(Var h, Var alpha)
{
    const Tensor& a = alpha.value();
    const Tensor& hv = h.value();
    if (a.numel() != hv.rows())
        throw ContractError("pool: " + std::to_string(a.numel()) + " weights for " + std::to_string(hv.rows()) +
                            " nodes");
    double total = 0.0;
    for (double v : a.data())
        total += v;
    if (std::abs(total - 1.0) > 1e-8)
        throw ContractError("pool: attention weights sum to " + std::to_string(total) + ", expected 1");
    Var row = reshape(alpha, Shape{1, a.numel()});
    return reshape(matmul(row, h), Shape{hv.cols()});
}

Var classify(Var h_gap, const HeadWeights& p)
{
    Var x = reshape(h_gap, Shape{1, h_gap.value().numel()});
    Var hidden = relu(add(matmul(x, p.ffn1_w), p.ffn1_b));
    Var ffn = add(matmul(hidden, p.ffn2_w), p.ffn2_b);
    Var logits = add(matmul(ffn, p.out_w), p.out_b);
    return reshape(logits, Shape{logits.value().numel()});
}

std::string to_string(BaselinePool m)
{
    switch (m) {
    case BaselinePool::max:
        return "max";
    case BaselinePool::mean:
        return "mean";
    default:
        return "abmil";
    }
}

BaselinePool parse_baseline_pool(const std::string& s)
{
    if (s == "max")
        return BaselinePool::max;
    if (s == "mean")
        return BaselinePool::mean;
    if (s == "abmil")
        return BaselinePool::abmil;
    throw ContractError("unknown baseline pooling '" + s + "'");
}

Var baseline_pool(Var h, BaselinePool mode, const PoolingWeights* p)
{
    const std::size_t width = h.value().cols();
    switch (mode) {
    case BaselinePool::max:
        return reshape(max_rows(h), Shape{width});
    case BaselinePool::mean:
        return reshape(mean_rows(h), Shape{width});
    case BaselinePool::abmil:
        if (!p)
            throw ContractError("baseline_pool: abmil needs pooling weights");
        return pool(h, gated_attention_scores(h, *p));
    }
    throw ContractError("baseline_pool: unknown mode");
}

} // namespace goat
