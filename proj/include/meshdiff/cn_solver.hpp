#pragma once

// Crank-Nicolson reference solver for graph diffusion du/dt = diag(s) K u
// with Dirichlet nodes, plus the conjugate-gradient kernel it relies on.
//
// The CN system (I - dt/2 diag(s) K) u+ = (I + dt/2 diag(s) K) u is not
// symmetric when s varies, but left-multiplying free rows by 1/s_i gives
// diag(1/s) - dt/2 K, which is SPD on the free nodes. Boundary nodes and nodes
// with s_i = 0 are pinned (identity rows) and moved to the right-hand side.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "meshdiff/graph.hpp"
#include "meshdiff/laplacian.hpp"
#include "meshdiff/sparse.hpp"
#include "meshdiff/trajectory.hpp"

namespace meshdiff {

struct CgResult {
    std::vector<double> x;
    std::size_t iterations = 0;
    double relative_residual = 0.0;
};

/// Jacobi-preconditioned conjugate gradient. Converged when
/// |b - A x| <= tol |b|; throws NumericalError otherwise.
inline CgResult solve_sparse_spd(const SparseMatrix& a, std::span<const double> b, double tol = 1e-10,
                                 std::size_t max_iter = 0, std::span<const double> x0 = {}) {
    const std::size_t n = a.rows();
    require(a.cols() == n && b.size() == n, "solve_sparse_spd: dimension mismatch");
    require(tol > 0.0, "solve_sparse_spd: tolerance must be positive");
    if (max_iter == 0) max_iter = 10 * n + 100;

    auto dotp = [](std::span<const double> x, std::span<const double> y) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
        return s;
    };

    CgResult out;
    out.x = x0.empty() ? std::vector<double>(n, 0.0) : std::vector<double>(x0.begin(), x0.end());
    const double bnorm = std::sqrt(dotp(b, b));
    if (bnorm == 0.0) {
        out.x.assign(n, 0.0);
        return out;
    }

    const auto diag = a.diagonal_values();
    std::vector<double> inv_diag(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(diag[i] > 0.0)) throw NumericalError("solve_sparse_spd: matrix is not positive definite (diagonal)");
        inv_diag[i] = 1.0 / diag[i];
    }

    std::vector<double> r = a.multiply(out.x);
    for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - r[i];
    std::vector<double> z(n), p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] = inv_diag[i] * r[i];
    double rz = dotp(r, z);
    double rnorm = std::sqrt(dotp(r, r));

    while (rnorm > tol * bnorm) {
        if (out.iterations >= max_iter) {
            throw NumericalError("CG did not converge in " + std::to_string(max_iter) +
                                 " iterations (relative residual " + std::to_string(rnorm / bnorm) + ")");
        }
        const auto ap = a.multiply(p);
        const double pap = dotp(p, ap);
        if (!(pap > 0.0)) throw NumericalError("solve_sparse_spd: matrix is not positive definite");
        const double alpha = rz / pap;
        for (std::size_t i = 0; i < n; ++i) {
            out.x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for (std::size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
        const double rz_next = dotp(r, z);
        const double beta = rz_next / rz;
        rz = rz_next;
        for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
        rnorm = std::sqrt(dotp(r, r));
        ++out.iterations;
    }
    out.relative_residual = rnorm / bnorm;
    return out;
}

/// Pre-assembled CN stepper for a fixed operator, step size and boundary set.
class CnStepper {
public:
    CnStepper(DiffusionOperator op, double dt, std::vector<bool> boundary_mask, double boundary_value = 0.0,
              double tol = 1e-12)
        : op_(std::move(op)), dt_(dt), boundary_(std::move(boundary_mask)), boundary_value_(boundary_value), tol_(tol) {
        const std::size_t n = op_.size();
        require(dt_ > 0.0 && std::isfinite(dt_), "CN step size must be positive");
        require(boundary_.size() == n, "boundary mask length differs from operator size");
        require(op_.stiffness.rows() == n && op_.stiffness.cols() == n, "operator shape mismatch");
        for (double s : op_.row_scale) require(std::isfinite(s) && s >= 0.0, "diffusivity scale must be >= 0");

        free_index_.assign(n, kPinned);
        for (std::size_t i = 0; i < n; ++i)
            if (!boundary_[i] && op_.row_scale[i] > 0.0) {
                free_index_[i] = free_.size();
                free_.push_back(i);
            }
        std::vector<Triplet> t;
        for (std::size_t a = 0; a < free_.size(); ++a) {
            const std::size_t i = free_[a];
            t.push_back({a, a, 1.0 / op_.row_scale[i]});
            op_.stiffness.for_each_in_row(i, [&](std::size_t j, double k) {
                if (free_index_[j] != kPinned) t.push_back({a, free_index_[j], -0.5 * dt_ * k});
            });
        }
        system_ = SparseMatrix::from_triplets(free_.size(), free_.size(), std::move(t));
    }

    std::vector<double> step(std::span<const double> u) const {
        const std::size_t n = op_.size();
        require(u.size() == n, "state length differs from operator size");
        std::vector<double> next(u.begin(), u.end());
        for (std::size_t i = 0; i < n; ++i)
            if (boundary_[i]) next[i] = boundary_value_;
        if (free_.empty()) return next;

        const auto ku = op_.stiffness.multiply(u);
        std::vector<double> rhs(free_.size()), guess(free_.size());
        for (std::size_t a = 0; a < free_.size(); ++a) {
            const std::size_t i = free_[a];
            // (u_i + dt/2 s_i (K u)_i) / s_i, plus pinned couplings of the implicit side
            double b = u[i] / op_.row_scale[i] + 0.5 * dt_ * ku[i];
            op_.stiffness.for_each_in_row(i, [&](std::size_t j, double k) {
                if (free_index_[j] == kPinned) b += 0.5 * dt_ * k * next[j];
            });
            rhs[a] = b;
            guess[a] = u[i];
        }
        CgResult sol;
        try {
            sol = solve_sparse_spd(system_, rhs, tol_, 0, guess);
        } catch (const NumericalError& e) {
            throw NumericalError(std::string("CN linear solve failed: ") + e.what());
        }
        for (std::size_t a = 0; a < free_.size(); ++a) next[free_[a]] = sol.x[a];
        return next;
    }

    double dt() const { return dt_; }

private:
    static constexpr std::size_t kPinned = static_cast<std::size_t>(-1);

    DiffusionOperator op_;
    double dt_;
    std::vector<bool> boundary_;
    double boundary_value_;
    double tol_;
    std::vector<std::size_t> free_;
    std::vector<std::size_t> free_index_;
    SparseMatrix system_;
};

/// One CN step: solve (I - dt/2 L) u+ = (I + dt/2 L) u, then pin boundary nodes.
inline std::vector<double> cn_step(std::span<const double> u, const DiffusionOperator& op, double dt,
                                   const std::vector<bool>& boundary_mask, double boundary_value = 0.0) {
    return CnStepper(op, dt, boundary_mask, boundary_value).step(u);
}

/// Initial state with the Dirichlet value imposed on boundary nodes.
inline std::vector<double> initial_state(const GraphSample& g, double boundary_value = 0.0) {
    std::vector<double> u = g.u0;
    for (std::size_t i = 0; i < u.size(); ++i)
        if (g.boundary_mask[i]) u[i] = boundary_value;
    return u;
}

/// Repeated CN steps from u0 over [0, T] with n_t uniform steps. `normalized`
/// selects the degree-normalized (generator) operator; otherwise the
/// unnormalized weight-law Laplacian is used.
inline Trajectory cn_rollout(const GraphSample& g, CnVariant variant, double T, std::size_t n_t,
                             bool normalized = true, double boundary_value = 0.0) {
    require(T > 0.0 && std::isfinite(T), "T must be positive");
    require(n_t >= 1, "n_t must be at least 1");
    require(g.boundary_mask.size() == g.num_nodes() && g.u0.size() == g.num_nodes(), "graph field lengths differ");
    validate_edges(g.edges, g.num_nodes());
    const double dt = T / static_cast<double>(n_t);
    const CnStepper stepper(diffusion_operator(g, variant, normalized), dt, g.boundary_mask, boundary_value);

    Trajectory traj;
    traj.times.reserve(n_t + 1);
    traj.states.reserve(n_t + 1);
    traj.times.push_back(0.0);
    traj.states.push_back(initial_state(g, boundary_value));
    for (std::size_t k = 1; k <= n_t; ++k) {
        traj.states.push_back(stepper.step(traj.states.back()));
        traj.times.push_back(static_cast<double>(k) * dt);
    }
    return traj;
}

}  // namespace meshdiff
