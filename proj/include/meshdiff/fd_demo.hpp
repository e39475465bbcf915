#pragma once

// Explicit five-point diffusion on a 2D grid, uniform or with randomly
// jittered nodes. On the jittered grid the stencil keeps the grid topology but
// uses the true neighbour distances, which is enough to break stability.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "meshdiff/core.hpp"

namespace meshdiff {

/// Largest stable explicit step: dx^2 dy^2 / (2 D (dx^2 + dy^2)).
inline double cfl_timestep(double dx, double dy, double D) {
    require(dx > 0.0 && dy > 0.0 && D > 0.0, "cfl_timestep: spacings and diffusivity must be positive");
    return dx * dx * dy * dy / (2.0 * D * (dx * dx + dy * dy));
}

struct Grid2D {
    std::size_t nx = 0, ny = 0;
    std::vector<std::array<double, 2>> coords;  // row-major, index j * nx + i
    double dx_mean = 0.0, dy_mean = 0.0;
    double perturbation_fraction = 0.0;

    std::size_t index(std::size_t i, std::size_t j) const { return j * nx + i; }
    bool on_boundary(std::size_t i, std::size_t j) const { return i == 0 || j == 0 || i + 1 == nx || j + 1 == ny; }
};

/// Regular nx x ny grid on [0, lx] x [0, ly]; interior nodes are shifted by up
/// to `perturb` times the local spacing in each direction, then clipped to the box.
inline Grid2D make_grid(std::size_t nx, std::size_t ny, double perturb, std::uint64_t seed, double lx = 1.0,
                        double ly = 1.0) {
    require(nx >= 3 && ny >= 3, "grid needs at least 3 nodes per direction");
    require(perturb >= 0.0 && perturb < 1.0, "perturbation fraction must be in [0, 1)");
    require(lx > 0.0 && ly > 0.0, "domain extents must be positive");
    Grid2D g;
    g.nx = nx;
    g.ny = ny;
    g.dx_mean = lx / static_cast<double>(nx - 1);
    g.dy_mean = ly / static_cast<double>(ny - 1);
    g.perturbation_fraction = perturb;
    g.coords.resize(nx * ny);
    Rng rng(seed);
    for (std::size_t j = 0; j < ny; ++j)
        for (std::size_t i = 0; i < nx; ++i) {
            double x = static_cast<double>(i) * g.dx_mean, y = static_cast<double>(j) * g.dy_mean;
            if (!g.on_boundary(i, j) && perturb > 0.0) {
                x += rng.uniform(-perturb, perturb) * g.dx_mean;
                y += rng.uniform(-perturb, perturb) * g.dy_mean;
            }
            g.coords[g.index(i, j)] = {std::clamp(x, 0.0, lx), std::clamp(y, 0.0, ly)};
        }
    return g;
}

struct FdConfig {
    double D = 4.0;
    std::optional<double> dt;  // unset: CFL step of the mean spacings
    std::size_t n_steps = 1000;
    double disc_radius = 0.2;
    std::array<double, 2> disc_center{0.5, 0.5};
    double boundary_value = 0.0;
    double divergence_factor = 10.0;
    bool record_states = false;
    bool stop_on_divergence = true;
};

struct FdStepRecord {
    std::size_t step;
    double max_u;
    bool diverged;
    double heat;           // sum of interior u times mean cell area
    double boundary_flux;  // heat entering through the boundary during this step
};

struct FdResult {
    std::vector<FdStepRecord> records;  // records[0] is the initial state
    std::vector<std::vector<double>> states;
    std::vector<double> final_state;
    bool diverged = false;
    double dt = 0.0;
};

inline std::vector<double> hot_disc(const Grid2D& g, const FdConfig& cfg) {
    std::vector<double> u(g.coords.size(), cfg.boundary_value);
    for (std::size_t j = 0; j < g.ny; ++j)
        for (std::size_t i = 0; i < g.nx; ++i) {
            if (g.on_boundary(i, j)) continue;
            const auto& p = g.coords[g.index(i, j)];
            const double r = std::hypot(p[0] - cfg.disc_center[0], p[1] - cfg.disc_center[1]);
            u[g.index(i, j)] = r <= cfg.disc_radius ? 1.0 : 0.0;
        }
    return u;
}

inline FdResult run_fd_diffusion(const Grid2D& g, const FdConfig& cfg, std::vector<double> u) {
    require(u.size() == g.coords.size(), "initial condition length differs from grid size");
    require(cfg.D > 0.0, "diffusivity must be positive");
    const double dt = cfg.dt.value_or(cfl_timestep(g.dx_mean, g.dy_mean, cfg.D));
    require(dt >= 0.0 && std::isfinite(dt), "dt must be non-negative");
    require(all_finite(u), "initial condition must be finite");
    FdResult res;
    res.dt = dt;

    const std::size_t nx = g.nx, ny = g.ny;
    auto dist = [&](std::size_t a, std::size_t b) {
        return std::hypot(g.coords[a][0] - g.coords[b][0], g.coords[a][1] - g.coords[b][1]);
    };
    const double area = g.dx_mean * g.dy_mean;
    auto heat_of = [&](const std::vector<double>& v) {
        double s = 0.0;
        for (std::size_t j = 1; j + 1 < ny; ++j)
            for (std::size_t i = 1; i + 1 < nx; ++i) s += v[g.index(i, j)];
        return s * area;
    };
    auto max_abs = [](const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m = std::isfinite(x) ? std::max(m, std::abs(x)) : INFINITY;
        return m;
    };

    for (std::size_t j = 0; j < ny; ++j)
        for (std::size_t i = 0; i < nx; ++i)
            if (g.on_boundary(i, j)) u[g.index(i, j)] = cfg.boundary_value;
    const double initial_max = max_abs(u);
    const double limit = cfg.divergence_factor * std::max(initial_max, std::abs(cfg.boundary_value));
    res.records.push_back({0, initial_max, false, heat_of(u), 0.0});
    if (cfg.record_states) res.states.push_back(u);

    std::vector<double> next = u;
    for (std::size_t step = 1; step <= cfg.n_steps && !(res.diverged && cfg.stop_on_divergence); ++step) {
        double flux = 0.0;
        for (std::size_t j = 1; j + 1 < ny; ++j)
            for (std::size_t i = 1; i + 1 < nx; ++i) {
                const std::size_t p = g.index(i, j);
                const std::size_t e = g.index(i + 1, j), w = g.index(i - 1, j), n = g.index(i, j + 1), s = g.index(i, j - 1);
                const double de = dist(p, e), dw = dist(p, w), dn = dist(p, n), ds = dist(p, s);
                const double uxx = 2.0 / (de + dw) * ((u[e] - u[p]) / de - (u[p] - u[w]) / dw);
                const double uyy = 2.0 / (dn + ds) * ((u[n] - u[p]) / dn - (u[p] - u[s]) / ds);
                next[p] = u[p] + dt * cfg.D * (uxx + uyy);
                // exchange with boundary neighbours (exact heat balance on the uniform grid)
                if (i == 1) flux += 2.0 / (de + dw) * (u[w] - u[p]) / dw;
                if (i + 2 == nx) flux += 2.0 / (de + dw) * (u[e] - u[p]) / de;
                if (j == 1) flux += 2.0 / (dn + ds) * (u[s] - u[p]) / ds;
                if (j + 2 == ny) flux += 2.0 / (dn + ds) * (u[n] - u[p]) / dn;
            }
        u.swap(next);
        const double m = max_abs(u);
        res.diverged = res.diverged || !(m <= limit);
        res.records.push_back({step, m, res.diverged, heat_of(u), dt * cfg.D * flux * area});
        if (cfg.record_states) res.states.push_back(u);
    }
    res.final_state = std::move(u);
    return res;
}

inline FdResult run_fd_demo(const Grid2D& g, const FdConfig& cfg) {
    return run_fd_diffusion(g, cfg, hot_disc(g, cfg));
}

inline std::string fd_csv(const FdResult& r) {
    std::ostringstream os;
    os << "step,max_u,diverged\n";
    char buf[64];
    for (const auto& rec : r.records) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%d\n", rec.step, rec.max_u, rec.diverged ? 1 : 0);
        os << buf;
    }
    return os.str();
}

}  // namespace meshdiff
