#pragma once

// Signed edge-by-node incidence, the node/edge Laplacians it factors, and
// node relabelings / signed edge permutations acting on fields and graphs.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "meshdiff/graph.hpp"
#include "meshdiff/sparse.hpp"

namespace meshdiff {

/// E x N matrix with +1 at src(e) and -1 at dst(e) in row e.
struct IncidenceMatrix {
    SparseMatrix matrix;
    std::vector<Edge> orientation;

    std::size_t num_edges() const { return matrix.rows(); }
    std::size_t num_nodes() const { return matrix.cols(); }

    /// (Bf)[e] = f(src) - f(dst)
    std::vector<double> gradient(std::span<const double> f) const { return matrix.multiply(f); }

    /// (B^T g)[v] = outflow - inflow
    std::vector<double> divergence(std::span<const double> g) const { return matrix.multiply_transpose(g); }
};

inline IncidenceMatrix build_incidence(std::span<const Edge> edges, std::size_t n_nodes) {
    validate_edges(edges, n_nodes);
    std::vector<Triplet> t;
    t.reserve(2 * edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e) {
        t.push_back({e, edges[e].src, 1.0});
        t.push_back({e, edges[e].dst, -1.0});
    }
    return {SparseMatrix::from_triplets(edges.size(), n_nodes, std::move(t)), {edges.begin(), edges.end()}};
}

/// L_V = B^T B
inline SparseMatrix node_laplacian_from_incidence(const IncidenceMatrix& b) { return b.matrix.transpose() * b.matrix; }

/// L_E = B B^T
inline SparseMatrix edge_laplacian_from_incidence(const IncidenceMatrix& b) { return b.matrix * b.matrix.transpose(); }

/// Edge-to-node divergence by explicit summation, "inflow minus outflow".
inline std::vector<double> inflow_minus_outflow(std::span<const Edge> edges, std::span<const double> g,
                                                std::size_t n_nodes) {
    require(g.size() == edges.size(), "edge field length differs from edge count");
    std::vector<double> inflow(n_nodes, 0.0), outflow(n_nodes, 0.0);
    for (std::size_t e = 0; e < edges.size(); ++e) {
        outflow[edges[e].src] += g[e];
        inflow[edges[e].dst] += g[e];
    }
    std::vector<double> div(n_nodes);
    for (std::size_t v = 0; v < n_nodes; ++v) div[v] = inflow[v] - outflow[v];
    return div;
}

// ---------------------------------------------------------------------------
// Relabelings

/// Node relabeling: old index i becomes new index map[i]. (P_V f)[map[i]] = f[i].
struct NodePermutation {
    std::vector<std::size_t> map;

    static NodePermutation identity(std::size_t n) {
        NodePermutation p;
        p.map.resize(n);
        std::iota(p.map.begin(), p.map.end(), std::size_t{0});
        return p;
    }

    static NodePermutation from(std::vector<std::size_t> map) {
        std::vector<char> seen(map.size(), 0);
        for (std::size_t v : map) {
            if (v >= map.size() || seen[v]) throw ValidationError("permutation is not a bijection");
            seen[v] = 1;
        }
        return NodePermutation{std::move(map)};
    }

    std::size_t size() const { return map.size(); }
};

/// Signed edge permutation Q_E: (Q_E g)[map[e]] = sign[e] * g[e].
struct SignedEdgePermutation {
    std::vector<std::size_t> map;
    std::vector<int> sign;

    static SignedEdgePermutation from(std::vector<std::size_t> map, std::vector<int> sign) {
        require(map.size() == sign.size(), "edge permutation and sign lengths differ");
        for (int s : sign) require(s == 1 || s == -1, "edge flips must be +1 or -1");
        NodePermutation::from(map);  // bijection check
        return SignedEdgePermutation{std::move(map), std::move(sign)};
    }

    /// Pure orientation flip S_E (identity map).
    static SignedEdgePermutation flips(std::vector<int> sign) {
        std::vector<std::size_t> map(sign.size());
        std::iota(map.begin(), map.end(), std::size_t{0});
        return from(std::move(map), std::move(sign));
    }

    std::size_t size() const { return map.size(); }
};

template <class T>
std::vector<T> apply_node_permutation(std::span<const T> f, const NodePermutation& p) {
    require(f.size() == p.size(), "node field length differs from permutation size");
    std::vector<T> out(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) out[p.map[i]] = f[i];
    return out;
}

inline std::vector<double> apply_node_permutation(const std::vector<double>& f, const NodePermutation& p) {
    return apply_node_permutation<double>(std::span<const double>(f), p);
}

inline std::vector<double> apply_edge_signed_permutation(std::span<const double> g, const SignedEdgePermutation& q) {
    require(g.size() == q.size(), "edge field length differs from permutation size");
    std::vector<double> out(g.size());
    for (std::size_t e = 0; e < g.size(); ++e) out[q.map[e]] = q.sign[e] * g[e];
    return out;
}

/// B' = Q_E B P_V^T
inline IncidenceMatrix transform_incidence(const IncidenceMatrix& b, const NodePermutation& p,
                                           const SignedEdgePermutation& q) {
    require(p.size() == b.num_nodes() && q.size() == b.num_edges(), "permutation sizes do not match incidence");
    std::vector<Edge> oriented(b.num_edges());
    for (std::size_t e = 0; e < b.num_edges(); ++e) {
        const Edge old = b.orientation[e];
        const Edge relabeled{p.map[old.src], p.map[old.dst]};
        oriented[q.map[e]] = q.sign[e] > 0 ? relabeled : Edge{relabeled.dst, relabeled.src};
    }
    return build_incidence(oriented, b.num_nodes());
}

struct RelabeledGraph {
    GraphSample graph;
    SignedEdgePermutation edge_map;  // old edge fields -> new edge fields
};

/// Relabels nodes and re-canonicalizes edges (src = min, sorted). The induced
/// signed edge permutation records where each old edge went and whether its
/// orientation flipped.
inline RelabeledGraph relabel_graph(const GraphSample& g, const NodePermutation& p) {
    require(p.size() == g.num_nodes(), "permutation size differs from node count");
    RelabeledGraph out;
    GraphSample& h = out.graph;
    h.positions = apply_node_permutation<Vec3>(std::span<const Vec3>(g.positions), p);
    h.diffusivity = apply_node_permutation(g.diffusivity, p);
    h.u0 = apply_node_permutation(g.u0, p);
    h.boundary_mask.assign(g.num_nodes(), false);
    for (std::size_t i = 0; i < g.num_nodes(); ++i) h.boundary_mask[p.map[i]] = g.boundary_mask[i];
    h.metadata = g.metadata;

    const std::size_t m = g.num_edges();
    std::vector<Edge> relabeled(m);
    std::vector<int> sign(m);
    for (std::size_t e = 0; e < m; ++e) {
        const std::size_t a = p.map[g.edges[e].src], b = p.map[g.edges[e].dst];
        relabeled[e] = {std::min(a, b), std::max(a, b)};
        sign[e] = a < b ? 1 : -1;
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return relabeled[x] < relabeled[y]; });
    std::vector<std::size_t> map(m);
    h.edges.resize(m);
    h.weights.resize(m);
    for (std::size_t k = 0; k < m; ++k) {
        map[order[k]] = k;
        h.edges[k] = relabeled[order[k]];
        h.weights[k] = g.weights[order[k]];
    }
    out.edge_map = SignedEdgePermutation::from(std::move(map), std::move(sign));
    return out;
}

/// Reverses the orientation of every edge with flip -1 (S_E applied to B).
inline GraphSample flip_orientations(const GraphSample& g, std::span<const int> flips) {
    require(flips.size() == g.num_edges(), "flip vector length differs from edge count");
    GraphSample h = g;
    for (std::size_t e = 0; e < g.num_edges(); ++e)
        if (flips[e] < 0) std::swap(h.edges[e].src, h.edges[e].dst);
    return h;
}

}  // namespace meshdiff
