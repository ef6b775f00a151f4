#pragma once

#include "goat/graph.hpp"
#include "goat/ops.hpp"

#include <optional>

namespace goat {

/// Weights of the graph embedding layer. The edge projection is optional:
/// models without geometry attention never embed edges.
struct EmbeddingWeights {
    Var node_w; // [d x d_model]
    Var node_b; // [d_model]
    Var edge_w; // [(d + 3) x d_edge]
    Var edge_b; // [d_edge]
};

struct GraphEmbedding {
    Var node_emb; // [N x d_model]
    Var edge_emb; // [E x d_edge], unbound when no edge weights were given
};

// Raw per-edge descriptor [x_dst - x_src | dx | dy | spatial distance], [E x (d + 3)].
Tensor edge_input_features(const SlideGraph& g);

GraphEmbedding embed_graph(Tape& tape, const SlideGraph& g, const EmbeddingWeights& w);
// Same, with edge_input_features(g) precomputed.
GraphEmbedding embed_graph(Tape& tape, const SlideGraph& g, const Tensor& edge_features, const EmbeddingWeights& w);

/// Per-layer weights of multi-head geometry attention.
struct MhgaWeights {
    Var wq, wk, wv; // [d_model x d_model], head h owns columns [h*d_head, (h+1)*d_head)
    Var wo;         // [d_model x d_model]
    Var theta_w;    // [d_edge x d_edge], edge encoder
    Var bias_w;     // [d_edge x H]
    Var bias_b;     // [H]
    Var ln_gamma;   // [d_model]
    Var ln_beta;    // [d_model]
    std::size_t heads = 1;
};

struct MhgaOptions {
    bool gated = true;      // false: plain masked attention, edge bias only enters the logits
    bool residual = true;   // add the layer input to its output
    bool pre_norm = true;   // layer-normalise the input before projecting
    bool theta_tanh = true; // tanh after the edge encoder
};

// E_theta = act(E * theta_w) * bias_w + bias_b, one scalar per (edge, head): [E x H].
Var edge_bias(Var edge_emb, Var theta_w, Var bias_w, Var bias_b, bool theta_tanh = true);

// Per (edge, head): q_h[src] . k_h[dst] / sqrt(d_head) + bias. Only graph edges get a logit.
Var attention_logits(Var q, Var k, Var bias, const SlideGraph& g, std::size_t heads);

/// Everything one MHGA layer computes per (edge, head), all [E x H].
struct AttentionState {
    Var logits;          // A
    Var weights;         // softmax of A over each node's out-edges
    Var gate;            // softmax of E_theta over each node's out-edges
    Var combined;        // renormalised weights * gate (equals weights in plain mode)
    Var edge_logits_out; // A + softmax(A), fed to the next layer as extra logit bias
};

struct MhgaOutput {
    Var nodes; // [N x d_model]
    AttentionState state;
};

MhgaOutput mhga_layer(Var node_emb, Var edge_emb, const SlideGraph& g, const MhgaWeights& w,
                      const MhgaOptions& opt = {}, std::optional<Var> prev_edge_logits = std::nullopt);

} // namespace goat
