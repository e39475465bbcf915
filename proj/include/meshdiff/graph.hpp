#pragma once

// Graph data model, validation, kNN construction and inverse-distance weights.

#include <algorithm>
#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "meshdiff/core.hpp"

namespace meshdiff {

struct Edge {
    std::size_t src;
    std::size_t dst;

    friend bool operator==(const Edge&, const Edge&) = default;
    friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// One irregular-mesh problem instance.
struct GraphSample {
    std::vector<Vec3> positions;
    std::vector<Edge> edges;
    std::vector<double> weights;
    std::vector<bool> boundary_mask;
    std::vector<double> diffusivity;
    std::vector<double> u0;
    std::map<std::string, std::string> metadata;

    std::size_t num_nodes() const { return positions.size(); }
    std::size_t num_edges() const { return edges.size(); }

    std::size_t num_interior() const {
        return static_cast<std::size_t>(std::count(boundary_mask.begin(), boundary_mask.end(), false));
    }
};

/// Edge endpoints in range, no self loops, no repeated undirected pair.
inline void validate_edges(std::span<const Edge> edges, std::size_t n_nodes) {
    std::vector<std::pair<std::size_t, std::size_t>> keys;
    keys.reserve(edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e) {
        const auto [s, d] = edges[e];
        require(s < n_nodes && d < n_nodes, "edge " + std::to_string(e) + " references a node out of range");
        require(s != d, "edge " + std::to_string(e) + " is a self loop");
        keys.emplace_back(std::min(s, d), std::max(s, d));
    }
    std::sort(keys.begin(), keys.end());
    require(std::adjacent_find(keys.begin(), keys.end()) == keys.end(), "duplicate undirected edge");
}

/// Checks every GraphSample invariant except the interior-node requirement,
/// which only the training loop depends on (see require_interior).
inline void validate(const GraphSample& g) {
    const std::size_t n = g.num_nodes();
    require(g.boundary_mask.size() == n, "boundary_mask length differs from node count");
    require(g.diffusivity.size() == n, "diffusivity length differs from node count");
    require(g.u0.size() == n, "u0 length differs from node count");
    require(g.weights.size() == g.edges.size(), "weights length differs from edge count");
    for (const auto& p : g.positions)
        require(std::isfinite(p[0]) && std::isfinite(p[1]) && std::isfinite(p[2]), "non-finite position");
    validate_edges(g.edges, n);
    for (double w : g.weights) require(std::isfinite(w) && w > 0.0, "edge weights must be positive and finite");
    for (double d : g.diffusivity) require(std::isfinite(d) && d > 0.0, "diffusivity must be positive and finite");
    require(all_finite(g.u0), "u0 must be finite");
}

inline void require_interior(const GraphSample& g) {
    if (g.num_nodes() >= 2) require(g.num_interior() >= 1, "graph has no interior nodes");
}

/// Symmetrized kNN graph: {i, j} is an edge iff j is among the k nearest
/// neighbours of i or vice versa. Ties are broken by the lower node index.
/// Edges come out sorted with src = min(i, j).
inline std::vector<Edge> build_knn_graph(std::span<const Vec3> positions, std::size_t k) {
    const std::size_t n = positions.size();
    require(k >= 1, "k must be positive");
    if (n <= k) throw ValidationError("insufficient nodes: need more than k = " + std::to_string(k));
    for (const auto& p : positions)
        require(std::isfinite(p[0]) && std::isfinite(p[1]) && std::isfinite(p[2]), "non-finite position");

    std::vector<Edge> edges;
    edges.reserve(n * k);
    std::vector<std::pair<double, std::size_t>> cand(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t c = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const Vec3 d = positions[i] - positions[j];
            cand[c++] = {dot(d, d), j};
        }
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
        for (std::size_t q = 0; q < k; ++q) {
            const std::size_t j = cand[q].second;
            edges.push_back({std::min(i, j), std::max(i, j)});
        }
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    return edges;
}

inline constexpr double kDistanceEpsilon = 1e-6;

/// w_e = 1 / (|x_src - x_dst| + epsilon)
inline std::vector<double> edge_weights_inverse_distance(std::span<const Vec3> positions, std::span<const Edge> edges,
                                                         double epsilon = kDistanceEpsilon) {
    require(epsilon > 0.0, "epsilon must be positive");
    validate_edges(edges, positions.size());
    std::vector<double> w(edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e)
        w[e] = 1.0 / (distance(positions[edges[e].src], positions[edges[e].dst]) + epsilon);
    return w;
}

/// Connected components via union-find; returns a component id per node.
inline std::vector<std::size_t> connected_components(std::size_t n_nodes, std::span<const Edge> edges) {
    std::vector<std::size_t> parent(n_nodes);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (const auto& e : edges) {
        const std::size_t a = find(e.src), b = find(e.dst);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
    std::vector<std::size_t> label(n_nodes);
    std::map<std::size_t, std::size_t> ids;
    for (std::size_t i = 0; i < n_nodes; ++i) {
        const auto root = find(i);
        label[i] = ids.try_emplace(root, ids.size()).first->second;
    }
    return label;
}

inline std::size_t count_components(std::size_t n_nodes, std::span<const Edge> edges) {
    const auto label = connected_components(n_nodes, edges);
    return label.empty() ? 0 : *std::max_element(label.begin(), label.end()) + 1;
}

}  // namespace meshdiff
