#include "goat/attention.hpp"

#include "goat/error.hpp"

#include <cmath>

namespace goat {

Tensor edge_input_features(const SlideGraph& g)
{
    const std::size_t d = g.node_features.cols();
    const std::size_t width = d + 3;
    Tensor out(Shape{g.n_edges(), width});
    for (std::size_t e = 0; e < g.n_edges(); ++e) {
        const auto [i, j] = g.edges[e];
        double* row = out.data().data() + e * width;
        for (std::size_t c = 0; c < d; ++c)
            row[c] = g.node_features[j * d + c] - g.node_features[i * d + c];
        const double dx = static_cast<double>(g.coords[j].x - g.coords[i].x);
        const double dy = static_cast<double>(g.coords[j].y - g.coords[i].y);
        row[d] = dx;
        row[d + 1] = dy;
        row[d + 2] = std::sqrt(dx * dx + dy * dy);
    }
    return out;
}

GraphEmbedding embed_graph(Tape& tape, const SlideGraph& g, const EmbeddingWeights& w)
{
    return embed_graph(tape, g, w.edge_w.valid() ? edge_input_features(g) : Tensor{}, w);
}

GraphEmbedding embed_graph(Tape& tape, const SlideGraph& g, const Tensor& edge_features, const EmbeddingWeights& w)
{
    const std::size_t d = g.node_features.cols();
    if (w.node_w.value().rows() != d)
        throw ContractError("embed_graph: node projection expects " + std::to_string(w.node_w.value().rows()) +
                            " input features, graph has " + std::to_string(d));
    GraphEmbedding out;
    out.node_emb = add(matmul(tape.constant(g.node_features), w.node_w), w.node_b);
    if (w.edge_w.valid()) {
        if (w.edge_w.value().rows() != d + 3 || edge_features.cols() != d + 3)
            throw ContractError("embed_graph: edge projection expects " + std::to_string(w.edge_w.value().rows()) +
                                " inputs, edge descriptors have " + std::to_string(d + 3));
        out.edge_emb = add(matmul(tape.constant(edge_features), w.edge_w), w.edge_b);
    }
    return out;
}

Var edge_bias(Var edge_emb, Var theta_w, Var bias_w, Var bias_b, bool theta_tanh)
{
    Var encoded = matmul(edge_emb, theta_w);
    if (theta_tanh)
        encoded = tanh(encoded);
    return add(matmul(encoded, bias_w), bias_b);
}

Var attention_logits(Var q, Var k, Var bias, const SlideGraph& g, std::size_t heads)
{
    const std::size_t d_model = q.value().cols();
    if (heads == 0 || d_model % heads != 0)
        throw ContractError("attention_logits: width " + std::to_string(d_model) + " not divisible into " +
                            std::to_string(heads) + " heads");
    const std::size_t d_head = d_model / heads;
    Var qs = gather_rows(q, g.sources());
    Var kt = gather_rows(k, g.targets());
    Var dots = block_sum_cols(mul(qs, kt), d_head);
    return add(scale(dots, 1.0 / std::sqrt(static_cast<double>(d_head))), bias);
}

MhgaOutput mhga_layer(Var node_emb, Var edge_emb, const SlideGraph& g, const MhgaWeights& w, const MhgaOptions& opt,
                      std::optional<Var> prev_edge_logits)
{
    const std::size_t n = g.n_nodes();
    const std::size_t d_model = node_emb.value().cols();
    if (node_emb.value().rows() != n)
        throw ContractError("mhga_layer: " + std::to_string(node_emb.value().rows()) + " node rows for " +
                            std::to_string(n) + " graph nodes");
    if (w.heads == 0 || d_model % w.heads != 0)
        throw ContractError("mhga_layer: d_model " + std::to_string(d_model) + " not divisible by " +
                            std::to_string(w.heads) + " heads");
    for (std::size_t i = 0; i < n; ++i)
        if (g.offsets[i + 1] == g.offsets[i])
            throw ContractError("mhga_layer: node " + std::to_string(i) + " has no out-edges");
    if (prev_edge_logits) {
        const Tensor& p = prev_edge_logits->value();
        if (p.rows() != g.n_edges() || p.cols() != w.heads)
            throw ContractError("mhga_layer: previous edge logits " + shape_str(p.shape()) + " do not match " +
                                std::to_string(g.n_edges()) + " edges x " + std::to_string(w.heads) + " heads");
    }
    const std::size_t d_head = d_model / w.heads;

    Var x = opt.pre_norm ? layer_norm(node_emb, w.ln_gamma, w.ln_beta) : node_emb;
    Var q = matmul(x, w.wq);
    Var k = matmul(x, w.wk);
    Var v = matmul(x, w.wv);

    Var bias = edge_bias(edge_emb, w.theta_w, w.bias_w, w.bias_b, opt.theta_tanh);
    Var logit_bias = prev_edge_logits ? add(bias, *prev_edge_logits) : bias;

    AttentionState st;
    st.logits = attention_logits(q, k, logit_bias, g, w.heads);
    st.weights = segment_softmax(st.logits, g.offsets);
    if (opt.gated) {
        st.gate = segment_softmax(bias, g.offsets);
        Var raw = mul(st.weights, st.gate);
        Var totals = gather_rows(segment_sum(raw, g.offsets), g.sources());
        st.combined = div(raw, totals);
    } else {
        st.combined = st.weights;
    }
    st.edge_logits_out = add(st.logits, st.weights);

    Var messages = mul(gather_rows(v, g.targets()), repeat_cols(st.combined, d_head));
    Var out = matmul(segment_sum(messages, g.offsets), w.wo);
    if (opt.residual)
        out = add(out, node_emb);
    return {out, st};
}

} // namespace goat
