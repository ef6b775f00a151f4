#pragma once

#include "goat/ops.hpp"
#include "goat/slide.hpp"

#include <string>
#include <vector>

namespace goat {

enum class KnnMetric { feature_euclidean, spatial_euclidean };

std::string to_string(KnnMetric m);
KnnMetric parse_knn_metric(const std::string& s);

struct Edge {
    std::size_t src = 0;
    std::size_t dst = 0;

    friend bool operator==(const Edge&, const Edge&) = default;
    friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// k-NN slide graph. Edges are grouped by source node: node i owns
/// edges[offsets[i] .. offsets[i+1]), starting with its self-loop followed by
/// its neighbours in increasing distance.
struct SlideGraph {
    Tensor node_features; // [N x d]
    std::vector<Edge> edges;
    std::vector<std::size_t> offsets; // N + 1
    std::vector<GridCoord> coords;
    std::size_t label = 0;

    std::size_t n_nodes() const { return coords.size(); }
    std::size_t n_edges() const { return edges.size(); }
    std::vector<std::size_t> sources() const;
    std::vector<std::size_t> targets() const;
};

// Directed k-NN graph with self-loops. Ties are broken by lower node index;
// when N <= k every node links to all others.
SlideGraph build_knn_graph(const SlideBag& bag, std::size_t k, KnnMetric metric = KnnMetric::spatial_euclidean);

/// Symmetrically normalised adjacency D^-1/2 (A + I) D^-1/2 over the
/// symmetrised edge set. Rows are sorted by column.
using NormAdj = CsrMatrix;

NormAdj normalize_adjacency(const SlideGraph& g);

} // namespace goat
