#include "goat/graph.hpp"

#include "goat/error.hpp"

#include <algorithm>
#include <cmath>

namespace goat {

std::string to_string(KnnMetric m)
{
    return m == KnnMetric::feature_euclidean ? "feature_euclidean" : "spatial_euclidean";
}

KnnMetric parse_knn_metric(const std::string& s)
{
    if (s == "feature_euclidean" || s == "feature")
        return KnnMetric::feature_euclidean;
    if (s == "spatial_euclidean" || s == "spatial")
        return KnnMetric::spatial_euclidean;
    throw ConfigError("unknown knn metric '" + s + "'");
}

std::vector<std::size_t> SlideGraph::sources() const
{
    std::vector<std::size_t> out(edges.size());
    std::transform(edges.begin(), edges.end(), out.begin(), [](const Edge& e) { return e.src; });
    return out;
}

std::vector<std::size_t> SlideGraph::targets() const
{
    std::vector<std::size_t> out(edges.size());
    std::transform(edges.begin(), edges.end(), out.begin(), [](const Edge& e) { return e.dst; });
    return out;
}

SlideGraph build_knn_graph(const SlideBag& bag, std::size_t k, KnnMetric metric)
{
    if (k < 1)
        throw ContractError("build_knn_graph: k must be at least 1");
    bag.validate();

    const std::size_t n = bag.n_patches();
    const std::size_t d = bag.dim();
    const std::size_t take = std::min(k, n - 1);
    const auto& emb = bag.embeddings;

    auto distance = [&](std::size_t i, std::size_t j) {
        if (metric == KnnMetric::spatial_euclidean) {
            const double dx = static_cast<double>(bag.coords[i].x - bag.coords[j].x);
            const double dy = static_cast<double>(bag.coords[i].y - bag.coords[j].y);
            return dx * dx + dy * dy;
        }
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double diff = emb[i * d + c] - emb[j * d + c];
            s += diff * diff;
        }
        return s;
    };

    SlideGraph g;
    g.node_features = bag.embeddings;
    g.coords = bag.coords;
    g.label = bag.label;
    g.edges.reserve(n * (take + 1));
    g.offsets.reserve(n + 1);
    g.offsets.push_back(0);

    std::vector<std::pair<double, std::size_t>> cand;
    cand.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        cand.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i)
                cand.emplace_back(distance(i, j), j);
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end());
        g.edges.push_back({i, i});
        for (std::size_t r = 0; r < take; ++r)
            g.edges.push_back({i, cand[r].second});
        g.offsets.push_back(g.edges.size());
    }
    return g;
}

NormAdj normalize_adjacency(const SlideGraph& g)
{
    const std::size_t n = g.n_nodes();
    std::vector<std::vector<std::size_t>> nb(n);
    for (std::size_t i = 0; i < n; ++i)
        nb[i].push_back(i);
    for (const Edge& e : g.edges) {
        if (e.src == e.dst)
            continue;
        nb[e.src].push_back(e.dst);
        nb[e.dst].push_back(e.src);
    }
    std::vector<double> inv_sqrt_deg(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::sort(nb[i].begin(), nb[i].end());
        nb[i].erase(std::unique(nb[i].begin(), nb[i].end()), nb[i].end());
        inv_sqrt_deg[i] = 1.0 / std::sqrt(static_cast<double>(nb[i].size()));
    }

    NormAdj adj;
    adj.n_rows = adj.n_cols = n;
    adj.row_ptr.push_back(0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j : nb[i]) {
            adj.col_idx.push_back(j);
            adj.values.push_back(inv_sqrt_deg[i] * inv_sqrt_deg[j]);
        }
        adj.row_ptr.push_back(adj.col_idx.size());
    }
    return adj;
}

} // namespace goat
