#pragma once

#include "goat/ops.hpp"

#include <string>

namespace goat {

/// Gated attention pooling weights: score_i = w . (tanh(V h_i) * sigm(U h_i)).
struct PoolingWeights {
    Var w; // [1 x d_attn]
    Var v; // [d_attn x d_model]
    Var u; // [d_attn x d_model]
};

/// Slide-level head: two-layer FFN (relu) followed by a linear classifier.
struct HeadWeights {
    Var ffn1_w; // [d_model x d_ffn]
    Var ffn1_b; // [d_ffn]
    Var ffn2_w; // [d_ffn x d_model]
    Var ffn2_b; // [d_model]
    Var out_w;  // [d_model x n_classes]
    Var out_b;  // [n_classes]
};

// Attention weight per node, softmax over nodes: [N].
Var gated_attention_scores(Var h, const PoolingWeights& p);

// sum_i alpha_i h_i: [d_model]. alpha must sum to 1 within 1e-8.
Var pool(Var h, Var alpha);

// Class logits [n_classes]; no softmax.
Var classify(Var h_gap, const HeadWeights& p);

enum class BaselinePool { max, mean, abmil };

std::string to_string(BaselinePool m);
BaselinePool parse_baseline_pool(const std::string& s);

// Trunk-free poolers: coordinatewise max, mean, or gated attention (needs p).
Var baseline_pool(Var h, BaselinePool mode, const PoolingWeights* p = nullptr);

} // namespace goat
