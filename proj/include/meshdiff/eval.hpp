#pragma once

// Error metrics against a reference trajectory, the time-averaged PDE
// residual, Hamiltonian diagnostics and the closed-form solution of the
// skew-coupled node/edge system.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "meshdiff/graph.hpp"
#include "meshdiff/incidence.hpp"
#include "meshdiff/laplacian.hpp"
#include "meshdiff/trajectory.hpp"

namespace meshdiff {

namespace eval_detail {
inline void same_length(std::span<const double> a, std::span<const double> b, const char* what) {
    require(a.size() == b.size(), std::string(what) + ": lengths differ (" + std::to_string(a.size()) + " vs " +
                                      std::to_string(b.size()) + ")");
    require(!a.empty(), std::string(what) + ": empty input");
}
}  // namespace eval_detail

inline double mae(std::span<const double> pred, std::span<const double> ref) {
    eval_detail::same_length(pred, ref, "mae");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - ref[i]);
    return s / static_cast<double>(pred.size());
}

inline double mse(std::span<const double> pred, std::span<const double> ref) {
    eval_detail::same_length(pred, ref, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - ref[i]) * (pred[i] - ref[i]);
    return s / static_cast<double>(pred.size());
}

/// ||pred - ref||_2 / sqrt(N)
inline double l2_norm_error(std::span<const double> pred, std::span<const double> ref) {
    return std::sqrt(mse(pred, ref));
}

/// Normalized L2 error at every stored time.
inline std::vector<double> temporal_l2_error(const Trajectory& pred, const Trajectory& ref) {
    require(pred.states.size() == ref.states.size(), "trajectories have different numbers of states");
    std::vector<double> out;
    out.reserve(pred.states.size());
    for (std::size_t k = 0; k < pred.states.size(); ++k) out.push_back(l2_norm_error(pred.states[k], ref.states[k]));
    return out;
}

inline double uniform_step(const Trajectory& traj) {
    require(traj.states.size() >= 2 && traj.times.size() == traj.states.size(), "trajectory needs at least 2 states");
    const double dt = traj.times[1] - traj.times[0];
    require(dt > 0.0, "trajectory times must increase");
    for (std::size_t k = 1; k + 1 < traj.times.size(); ++k)
        require(std::abs((traj.times[k + 1] - traj.times[k]) - dt) <= 1e-9 * std::max(1.0, dt) * static_cast<double>(k + 1),
                "trajectory time step is not uniform");
    return dt;
}

/// sqrt(sum_k ||R_k||^2 / (n_t N)) with R_k = (u_{k+1} - u_k) / dt - op u_k.
/// Boundary rows, which are pinned rather than evolved, are excluded from R.
inline double pde_residual_time(const Trajectory& traj, const DiffusionOperator& op, const std::vector<bool>& boundary_mask) {
    const double dt = uniform_step(traj);
    const std::size_t n = op.size();
    require(boundary_mask.size() == n, "boundary mask length differs from operator size");
    double s = 0.0;
    for (std::size_t k = 0; k + 1 < traj.states.size(); ++k) {
        require(traj.states[k].size() == n && traj.states[k + 1].size() == n, "state length differs from operator size");
        const auto lu = op.apply(traj.states[k]);
        for (std::size_t i = 0; i < n; ++i) {
            if (boundary_mask[i]) continue;
            const double r = (traj.states[k + 1][i] - traj.states[k][i]) / dt - lu[i];
            s += r * r;
        }
    }
    const double n_t = static_cast<double>(traj.states.size() - 1);
    return std::sqrt(s / (n_t * static_cast<double>(n)));
}

inline double pde_residual_time(const Trajectory& traj, const GraphSample& g, CnVariant variant, bool normalized = true) {
    return pde_residual_time(traj, diffusion_operator(g, variant, normalized), g.boundary_mask);
}

// ---------------------------------------------------------------------------
// Hamiltonian

inline double hamiltonian(std::span<const double> f, std::span<const double> g) {
    double s = 0.0;
    for (double x : f) s += x * x;
    for (double x : g) s += x * x;
    return 0.5 * s;
}

/// H(t_k) - H(t_0) for paired node and edge trajectories.
inline std::vector<double> hamiltonian_drift(const std::vector<std::vector<double>>& f,
                                             const std::vector<std::vector<double>>& g) {
    require(f.size() == g.size() && !f.empty(), "node and edge trajectories must be non-empty and of equal length");
    const double h0 = hamiltonian(f[0], g[0]);
    std::vector<double> out;
    out.reserve(f.size());
    for (std::size_t k = 0; k < f.size(); ++k) out.push_back(hamiltonian(f[k], g[k]) - h0);
    return out;
}

/// Closed-form solution of f' = B^T g, g' = -B f (or g' = +B f with
/// `wrong_sign`), via the eigendecomposition of B^T B. Modes with zero
/// eigenvalue lie in the kernel of B and stay fixed.
class SkewIntegrator {
public:
    SkewIntegrator(const IncidenceMatrix& b, std::span<const double> f0, std::span<const double> g0, bool wrong_sign = false)
        : wrong_sign_(wrong_sign) {
        require(f0.size() == b.num_nodes() && g0.size() == b.num_edges(), "initial fields do not match the incidence matrix");
        const Eigen::Index n = static_cast<Eigen::Index>(b.num_nodes()), m = static_cast<Eigen::Index>(b.num_edges());
        bd_ = Eigen::MatrixXd::Zero(m, n);
        for (std::size_t e = 0; e < b.num_edges(); ++e)
            b.matrix.for_each_in_row(e, [&](std::size_t j, double v) { bd_(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(j)) += v; });
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(bd_.transpose() * bd_);
        if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition of B^T B failed");
        lambda_ = eig.eigenvalues();
        v_ = eig.eigenvectors();
        g0_ = Eigen::Map<const Eigen::VectorXd>(g0.data(), m);
        const Eigen::VectorXd f0v = Eigen::Map<const Eigen::VectorXd>(f0.data(), n);
        a_ = v_.transpose() * f0v;
        b_ = v_.transpose() * (bd_.transpose() * g0_);
        const double tol = 1e-12 * std::max(1.0, lambda_.cwiseAbs().maxCoeff());
        active_.resize(lambda_.size());
        for (Eigen::Index i = 0; i < lambda_.size(); ++i) active_[static_cast<std::size_t>(i)] = lambda_(i) > tol;
    }

    struct State {
        std::vector<double> f, g;
    };

    State at(double t) const {
        const Eigen::Index n = lambda_.size();
        Eigen::VectorXd cf(n), cg = Eigen::VectorXd::Zero(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!active_[static_cast<std::size_t>(i)]) {
                cf(i) = a_(i);
                continue;
            }
            const double w = std::sqrt(lambda_(i));
            if (!wrong_sign_) {
                const double c = std::cos(w * t), s = std::sin(w * t);
                cf(i) = c * a_(i) + s / w * b_(i);
                cg(i) = s / w * a_(i) + (1.0 - c) / lambda_(i) * b_(i);  // integral of cf
            } else {
                const double c = std::cosh(w * t), s = std::sinh(w * t);
                cf(i) = c * a_(i) + s / w * b_(i);
                cg(i) = s / w * a_(i) + (c - 1.0) / lambda_(i) * b_(i);
            }
        }
        const Eigen::VectorXd f = v_ * cf;
        const Eigen::VectorXd bint = bd_ * (v_ * cg);
        const Eigen::VectorXd g = wrong_sign_ ? Eigen::VectorXd(g0_ + bint) : Eigen::VectorXd(g0_ - bint);
        return {{f.data(), f.data() + f.size()}, {g.data(), g.data() + g.size()}};
    }

private:
    bool wrong_sign_;
    Eigen::MatrixXd bd_, v_;
    Eigen::VectorXd lambda_, a_, b_, g0_;
    std::vector<bool> active_;
};

}  // namespace meshdiff
