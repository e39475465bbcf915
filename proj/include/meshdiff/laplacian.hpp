#pragma once

// Laplacian variants on weighted graphs.
//
// Two sign conventions coexist here:
//  * generator convention  L = D^-1 (A - D): rows sum to zero, diagonal -1,
//    non-positive spectrum; du/dt = L u is diffusion.
//  * combinatorial convention  L = D - A: symmetric positive semidefinite.
// DiffusionOperator factors every diffusion operator as diag(s) * K with K
// symmetric negative semidefinite, which keeps implicit solves symmetric.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "meshdiff/graph.hpp"
#include "meshdiff/sparse.hpp"

namespace meshdiff {

/// Edge-weight law for the Crank-Nicolson reference operators.
enum class CnVariant {
    irregular,  // w = 1 / d
    pde,        // w = 1 / d^2
};

inline std::string to_string(CnVariant v) { return v == CnVariant::irregular ? "irregular" : "pde"; }

inline CnVariant parse_cn_variant(const std::string& s) {
    if (s == "irregular") return CnVariant::irregular;
    if (s == "pde") return CnVariant::pde;
    throw ValidationError("unknown CN variant '" + s + "' (expected irregular or pde)");
}

/// Symmetric weighted adjacency assembled from an undirected edge list.
inline SparseMatrix weighted_adjacency(std::size_t n_nodes, std::span<const Edge> edges, std::span<const double> weights) {
    require(weights.size() == edges.size(), "weights length differs from edge count");
    validate_edges(edges, n_nodes);
    std::vector<Triplet> t;
    t.reserve(2 * edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e) {
        t.push_back({edges[e].src, edges[e].dst, weights[e]});
        t.push_back({edges[e].dst, edges[e].src, weights[e]});
    }
    return SparseMatrix::from_triplets(n_nodes, n_nodes, std::move(t));
}

/// A - D for symmetric A (negative semidefinite, zero row sums).
inline SparseMatrix adjacency_minus_degree(std::size_t n_nodes, std::span<const Edge> edges,
                                           std::span<const double> weights) {
    validate_edges(edges, n_nodes);
    std::vector<Triplet> t;
    t.reserve(4 * edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e) {
        const auto [s, d] = edges[e];
        t.push_back({s, d, weights[e]});
        t.push_back({d, s, weights[e]});
        t.push_back({s, s, -weights[e]});
        t.push_back({d, d, -weights[e]});
    }
    return SparseMatrix::from_triplets(n_nodes, n_nodes, std::move(t));
}

inline std::vector<double> weighted_degree(std::size_t n_nodes, std::span<const Edge> edges,
                                           std::span<const double> weights) {
    std::vector<double> deg(n_nodes, 0.0);
    for (std::size_t e = 0; e < edges.size(); ++e) {
        deg[edges[e].src] += weights[e];
        deg[edges[e].dst] += weights[e];
    }
    return deg;
}

/// Weights recomputed from geometry under the given law (epsilon-guarded).
inline std::vector<double> variant_weights(std::span<const Vec3> positions, std::span<const Edge> edges,
                                           CnVariant variant, double epsilon = kDistanceEpsilon) {
    auto w = edge_weights_inverse_distance(positions, edges, epsilon);
    if (variant == CnVariant::pde)
        for (double& x : w) x *= x;
    return w;
}

namespace detail {
inline SparseMatrix generator_from(std::size_t n, std::span<const Edge> edges, std::span<const double> weights) {
    const auto deg = weighted_degree(n, edges, weights);
    std::vector<double> inv(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(deg[i] > 0.0)) throw ValidationError("zero degree at node " + std::to_string(i));
        inv[i] = 1.0 / deg[i];
    }
    return adjacency_minus_degree(n, edges, weights).scale_rows(inv);
}
}  // namespace detail

/// L = D^-1 (A - D) with the graph's own (weighted) adjacency.
inline SparseMatrix laplacian_generator(const GraphSample& g) {
    return detail::generator_from(g.num_nodes(), g.edges, g.weights);
}

/// L = D_w - A_w with 1/d (irregular) or 1/d^2 (pde) weights.
inline SparseMatrix laplacian_cn(const GraphSample& g, CnVariant variant) {
    const auto w = variant_weights(g.positions, g.edges, variant);
    std::vector<double> minus_one(g.num_nodes(), -1.0);
    return adjacency_minus_degree(g.num_nodes(), g.edges, w).scale_rows(minus_one);
}

/// L_diff = diag(row_scale) * stiffness, with stiffness symmetric NSD.
struct DiffusionOperator {
    SparseMatrix stiffness;
    std::vector<double> row_scale;

    std::size_t size() const { return row_scale.size(); }
    SparseMatrix matrix() const { return stiffness.scale_rows(row_scale); }

    std::vector<double> apply(std::span<const double> u) const {
        auto y = stiffness.multiply(u);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] *= row_scale[i];
        return y;
    }
};

/// Diffusivity-scaled operator D_i * L. With `normalized` the generator
/// convention D_w^-1 (A_w - D_w) is used; otherwise the unnormalized
/// A_w - D_w. Weights follow the chosen law.
inline DiffusionOperator diffusion_operator(const GraphSample& g, CnVariant variant, bool normalized = true) {
    const std::size_t n = g.num_nodes();
    require(g.diffusivity.size() == n, "diffusivity length differs from node count");
    const auto w = variant_weights(g.positions, g.edges, variant);
    DiffusionOperator op{adjacency_minus_degree(n, g.edges, w), g.diffusivity};
    if (normalized) {
        const auto deg = weighted_degree(n, g.edges, w);
        for (std::size_t i = 0; i < n; ++i) {
            if (!(deg[i] > 0.0)) throw ValidationError("zero degree at node " + std::to_string(i));
            op.row_scale[i] /= deg[i];
        }
    }
    return op;
}

/// D_i * L_gen built from the graph's stored weights: the operator the
/// physics loss and the anchor correction use.
inline DiffusionOperator generator_diffusion_operator(const GraphSample& g) {
    const std::size_t n = g.num_nodes();
    DiffusionOperator op{adjacency_minus_degree(n, g.edges, g.weights), g.diffusivity};
    const auto deg = weighted_degree(n, g.edges, g.weights);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(deg[i] > 0.0)) throw ValidationError("zero degree at node " + std::to_string(i));
        op.row_scale[i] /= deg[i];
    }
    return op;
}

}  // namespace meshdiff
