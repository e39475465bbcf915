#pragma once

// Physically driven irregular meshes: points on an ellipsoid evolve under a
// coupled healing / damage / stress system on a kNN graph, the stress field
// pushes nodes along the surface normal, and the final cloud is re-meshed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "meshdiff/core.hpp"
#include "meshdiff/graph.hpp"
#include "meshdiff/laplacian.hpp"
#include "meshdiff/sparse.hpp"

namespace meshdiff {

struct HealingParams {
    double D_h = 0.1;
    double eta = 1.0;
    double lambda = 0.5;
    double beta = 1.0;
    double k1 = 1.0;
    double k2 = 1.0;
    double k3 = 0.5;
    double dt = 0.01;
    std::size_t n_steps = 500;
    double displacement_scale = 0.02;

    void check() const {
        for (double r : {D_h, eta, lambda, beta, k1, k2, k3, displacement_scale})
            require(r >= 0.0 && std::isfinite(r), "healing rates must be non-negative");
        require(dt > 0.0 && std::isfinite(dt), "healing dt must be positive");
    }
};

struct Ellipsoid {
    Vec3 center{0.5, 0.5, 0.5};
    Vec3 axes{0.6, 0.4, 0.3};

    /// ((x-cx)/a)^2 + ((y-cy)/b)^2 + ((z-cz)/c)^2
    double level(const Vec3& x) const {
        double s = 0.0;
        for (int d = 0; d < 3; ++d) {
            const double q = (x[d] - center[d]) / axes[d];
            s += q * q;
        }
        return s;
    }

    /// Outward unit normal of the level set through x.
    Vec3 normal(const Vec3& x) const {
        Vec3 g;
        for (int d = 0; d < 3; ++d) g[d] = (x[d] - center[d]) / (axes[d] * axes[d]);
        const double n = norm(g);
        require(n > 0.0, "normal undefined at the ellipsoid center");
        return (1.0 / n) * g;
    }

    /// Point for angular parameters theta = 2 pi u1, phi = acos(2 u2 - 1).
    Vec3 point(double u1, double u2) const {
        const double theta = 2.0 * std::numbers::pi * u1;
        const double phi = std::acos(std::clamp(2.0 * u2 - 1.0, -1.0, 1.0));
        return {center[0] + axes[0] * std::sin(phi) * std::cos(theta),
                center[1] + axes[1] * std::sin(phi) * std::sin(theta), center[2] + axes[2] * std::cos(phi)};
    }
};

struct SurfaceState {
    std::vector<Vec3> positions;
    std::vector<double> h;
    std::vector<double> D;
    std::vector<double> sigma;
    double t = 0.0;

    std::size_t size() const { return positions.size(); }
};

inline std::vector<Vec3> sample_ellipsoid(std::size_t n, const Ellipsoid& shape, std::uint64_t seed) {
    require(n >= 1, "sample count must be at least 1");
    for (double a : shape.axes) require(a > 0.0, "semi-axes must be positive");
    Rng rng(seed);
    std::vector<Vec3> p(n);
    for (auto& x : p) {
        const double u1 = rng.uniform(), u2 = rng.uniform();
        x = shape.point(u1, u2);
    }
    return p;
}

/// One explicit Euler step of the healing system with clamping.
inline SurfaceState step_healing_damage_stress(const SurfaceState& s, const HealingParams& p, const SparseMatrix& L) {
    const std::size_t n = s.size();
    require(s.h.size() == n && s.D.size() == n && s.sigma.size() == n, "surface fields have inconsistent lengths");
    require(L.rows() == n && L.cols() == n, "Laplacian size differs from node count");
    const auto lh = L.multiply(s.h);
    SurfaceState out = s;
    for (std::size_t i = 0; i < n; ++i) {
        const double h = s.h[i] + p.dt * (p.D_h * lh[i] + p.eta * (1.0 - s.h[i]) - p.lambda * s.D[i]);
        if (!(h >= -1.0 && h <= 2.0)) throw NumericalError("unstable healing step at node " + std::to_string(i));
        out.h[i] = std::clamp(h, 0.0, 1.0);
        out.D[i] = std::max(s.D[i] - p.dt * p.beta * s.D[i] * (1.0 - s.h[i]), 0.0);
        out.sigma[i] = s.sigma[i] + p.dt * (p.k1 * s.h[i] - p.k2 * s.D[i] - p.k3 * s.sigma[i]);
    }
    out.t = s.t + p.dt;
    return out;
}

/// Moves each reference point along its outward normal by scale * sigma_i.
/// Displacement is measured from the reference points, so it does not accumulate.
inline std::vector<Vec3> displace_by_stress(const std::vector<Vec3>& reference, const std::vector<double>& sigma,
                                            const Ellipsoid& shape, double scale) {
    require(reference.size() == sigma.size(), "stress length differs from node count");
    std::vector<Vec3> out(reference.size());
    for (std::size_t i = 0; i < reference.size(); ++i)
        out[i] = reference[i] + (scale * sigma[i]) * shape.normal(reference[i]);
    return out;
}

struct MeshGenConfig {
    std::size_t n = 800;
    std::size_t k = 10;
    std::uint64_t seed = 42;
    Ellipsoid shape;
    double boundary_tolerance = 0.05;
    double wound_radius = 0.7;       // angular radius (rad) on the normalized sphere
    std::size_t rebuild_every = 50;  // kNN refresh cadence during evolution
    double diffusivity = 0.05;
};

struct WoundSample {
    std::size_t step;
    double time;
    double sum_damage;
};

struct MeshGenResult {
    GraphSample sample;
    SurfaceState final_state;
    std::vector<WoundSample> wound;
};

/// Nodes whose normalized radius sqrt(level) lies within tolerance of 1.
inline std::vector<bool> ellipsoid_boundary_mask(const std::vector<Vec3>& positions, const Ellipsoid& shape,
                                                 double tolerance) {
    std::vector<bool> mask(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) mask[i] = std::abs(std::sqrt(shape.level(positions[i])) - 1.0) <= tolerance;
    return mask;
}

namespace detail {
inline SparseMatrix knn_generator(const std::vector<Vec3>& positions, std::size_t k) {
    const auto edges = build_knn_graph(positions, k);
    const auto w = edge_weights_inverse_distance(positions, edges);
    return generator_from(positions.size(), edges, w);
}

inline Vec3 normalized_direction(const Vec3& x, const Ellipsoid& shape) {
    Vec3 q;
    for (int d = 0; d < 3; ++d) q[d] = (x[d] - shape.center[d]) / shape.axes[d];
    return (1.0 / norm(q)) * q;
}
}  // namespace detail

/// Initial fields: damage 1 inside a spherical cap around a random surface
/// point, h = 1 - D, sigma = 0.
inline SurfaceState initial_wound(const std::vector<Vec3>& positions, const Ellipsoid& shape, double radius,
                                  Rng& rng) {
    const Vec3 centre_pt = shape.point(rng.uniform(), rng.uniform());
    const Vec3 c = detail::normalized_direction(centre_pt, shape);
    SurfaceState s;
    s.positions = positions;
    const std::size_t n = positions.size();
    s.h.assign(n, 1.0);
    s.D.assign(n, 0.0);
    s.sigma.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double cosang = std::clamp(dot(detail::normalized_direction(positions[i], shape), c), -1.0, 1.0);
        if (std::acos(cosang) <= radius) {
            s.D[i] = 1.0;
            s.h[i] = 0.0;
        }
    }
    return s;
}

inline double total_damage(const SurfaceState& s) {
    double t = 0.0;
    for (double d : s.D) t += d;
    return t;
}

inline MeshGenResult generate_physical_mesh(const HealingParams& params, const MeshGenConfig& cfg) {
    params.check();
    require(cfg.k >= 1, "k must be at least 1");
    require(cfg.rebuild_every >= 1, "rebuild cadence must be at least 1");
    require(cfg.boundary_tolerance >= 0.0, "boundary tolerance must be non-negative");
    require(cfg.diffusivity > 0.0, "diffusivity must be positive");

    const auto reference = sample_ellipsoid(cfg.n, cfg.shape, cfg.seed);
    Rng wound_rng(cfg.seed + 1);
    SurfaceState state = initial_wound(reference, cfg.shape, cfg.wound_radius, wound_rng);

    MeshGenResult out;
    out.wound.push_back({0, 0.0, total_damage(state)});
    SparseMatrix L;
    for (std::size_t step = 0; step < params.n_steps; ++step) {
        if (step % cfg.rebuild_every == 0) L = detail::knn_generator(state.positions, cfg.k);
        state = step_healing_damage_stress(state, params, L);
        state.positions = displace_by_stress(reference, state.sigma, cfg.shape, params.displacement_scale);
        out.wound.push_back({step + 1, state.t, total_damage(state)});
    }

    GraphSample& g = out.sample;
    g.positions = state.positions;
    g.edges = build_knn_graph(g.positions, cfg.k);
    g.weights = edge_weights_inverse_distance(g.positions, g.edges);
    g.boundary_mask = ellipsoid_boundary_mask(g.positions, cfg.shape, cfg.boundary_tolerance);
    g.diffusivity.assign(cfg.n, cfg.diffusivity);
    g.u0 = state.h;
    g.metadata = {{"source", "meshgen"},
                  {"n", std::to_string(cfg.n)},
                  {"k", std::to_string(cfg.k)},
                  {"seed", std::to_string(cfg.seed)}};
    validate(g);
    out.final_state = std::move(state);
    return out;
}

}  // namespace meshdiff
