#pragma once

// Invariant suite run by `meshdiff verify`: structural identities of the
// incidence operators, energy conservation of the skew system, model
// equivariance, the energy-drift bound on training snapshots, loss gradients,
// CN against a dense matrix exponential and metric arithmetic.

#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "meshdiff/cn_solver.hpp"
#include "meshdiff/eval.hpp"
#include "meshdiff/training.hpp"

namespace meshdiff {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

struct VerifyOptions {
    std::uint64_t seed = 2024;
    std::size_t trials = 50;
};

namespace verify_detail {

inline std::string sci(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", x);
    return buf;
}

inline Eigen::MatrixXd to_dense(const SparseMatrix& m) {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
    for (std::size_t i = 0; i < m.rows(); ++i)
        m.for_each_in_row(i, [&](std::size_t j, double v) { d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += v; });
    return d;
}

inline std::vector<double> field(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

/// Connected random graph on n nodes with geometric weights and one boundary node.
inline GraphSample random_graph(Rng& rng, std::size_t n, std::size_t extra) {
    GraphSample g;
    for (std::size_t i = 0; i < n; ++i) g.positions.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
    for (std::size_t i = 1; i < n; ++i) g.edges.push_back({rng.below(i), i});
    for (std::size_t k = 0; k < extra; ++k) {
        const std::size_t a = rng.below(n), b = rng.below(n);
        if (a != b) g.edges.push_back({std::min(a, b), std::max(a, b)});
    }
    std::sort(g.edges.begin(), g.edges.end());
    g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
    g.weights = edge_weights_inverse_distance(g.positions, g.edges);
    g.boundary_mask.assign(n, false);
    if (n >= 3) g.boundary_mask[rng.below(n)] = true;
    g.diffusivity.resize(n);
    for (auto& d : g.diffusivity) d = rng.uniform(0.05, 1.0);
    g.u0.resize(n);
    for (auto& u : g.u0) u = rng.uniform();
    return g;
}

inline NodePermutation shuffle(Rng& rng, std::size_t n) {
    std::vector<std::size_t> map(n);
    std::iota(map.begin(), map.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(map[i - 1], map[rng.below(i)]);
    return NodePermutation::from(std::move(map));
}

inline double max_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return a.size() == b.size() ? m : std::numeric_limits<double>::infinity();
}

inline CheckResult timed(const std::string& name, const std::function<std::pair<bool, std::string>()>& fn) {
    CheckResult r;
    r.name = name;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        std::tie(r.passed, r.detail) = fn();
    } catch (const std::exception& e) {
        r.passed = false;
        r.detail = std::string("threw: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

}  // namespace verify_detail

inline CheckResult verify_incidence(const VerifyOptions& o) {
    using namespace verify_detail;
    return timed("incidence adjointness and B^T B = D - A", [&] {
        Rng rng(o.seed);
        double adj = 0.0, fact = 0.0;
        for (std::size_t t = 0; t < o.trials; ++t) {
            const std::size_t n = 2 + rng.below(19);
            const auto g = random_graph(rng, n, n);
            const auto b = build_incidence(g.edges, n);
            const auto f = field(rng, n), e = field(rng, g.num_edges());
            const auto bf = b.gradient(f), btg = b.divergence(e);
            double lhs = 0.0, rhs = 0.0;
            for (std::size_t k = 0; k < e.size(); ++k) lhs += bf[k] * e[k];
            for (std::size_t k = 0; k < n; ++k) rhs += f[k] * btg[k];
            adj = std::max(adj, std::abs(lhs - rhs));
            Eigen::MatrixXd comb = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
            for (const auto& ed : g.edges) {
                const auto s = static_cast<Eigen::Index>(ed.src), d = static_cast<Eigen::Index>(ed.dst);
                comb(s, s) += 1;
                comb(d, d) += 1;
                comb(s, d) -= 1;
                comb(d, s) -= 1;
            }
            fact = std::max(fact, (to_dense(node_laplacian_from_incidence(b)) - comb).cwiseAbs().maxCoeff());
        }
        return std::pair{adj < 1e-12 && fact == 0.0, "max |<Bf,g> - <f,B^T g>| " + sci(adj) + ", max factorization error " + sci(fact)};
    });
}

inline CheckResult verify_hamiltonian(const VerifyOptions& o) {
    using namespace verify_detail;
    return timed("skew system conserves H, wrong sign drifts", [&] {
        Rng rng(o.seed + 1);
        double worst = 0.0, weakest_wrong = std::numeric_limits<double>::infinity();
        for (int t = 0; t < 10; ++t) {
            const std::size_t n = 2 + rng.below(9);
            const auto g = random_graph(rng, n, n);
            const auto b = build_incidence(g.edges, n);
            const auto f0 = field(rng, n), g0 = field(rng, g.num_edges());
            const double h0 = hamiltonian(f0, g0);
            const SkewIntegrator right(b, f0, g0), wrong(b, f0, g0, true);
            double wrong_drift = 0.0;
            for (int k = 0; k <= 400; ++k) {
                const double time = 0.25 * k;
                const auto s = right.at(time);
                worst = std::max(worst, std::abs(hamiltonian(s.f, s.g) - h0));
                if (time <= 5.0) {
                    const auto w = wrong.at(time);
                    wrong_drift = std::max(wrong_drift, std::abs(hamiltonian(w.f, w.g) - h0));
                }
            }
            weakest_wrong = std::min(weakest_wrong, wrong_drift);
        }
        return std::pair{worst < 1e-10 && weakest_wrong > 1e-3,
                         "max |H(t) - H(0)| " + sci(worst) + ", smallest wrong-sign drift " + sci(weakest_wrong)};
    });
}

inline CheckResult verify_equivariance(const VerifyOptions& o) {
    using namespace verify_detail;
    return timed("permutation and orientation equivariance", [&] {
        Rng rng(o.seed + 2);
        double worst = 0.0;
        ModelArch oc{ModelKind::ocgnn, 8, 2, default_omegas()}, gc{ModelKind::gcn, 8, 2, default_omegas()};
        for (std::size_t t = 0; t < o.trials; ++t) {
            const std::size_t n = 3 + rng.below(10);
            const auto g = random_graph(rng, n, n);
            const auto po = init_params(oc, o.seed + t), pg = init_params(gc, o.seed + t);
            const auto f = field(rng, n);
            const double time = rng.uniform(0.0, 2.0);
            std::vector<int> flips(g.num_edges());
            for (auto& s : flips) s = rng.below(2) ? 1 : -1;
            const auto perm = shuffle(rng, n);
            const auto rel = relabel_graph(flip_orientations(g, flips), perm);
            const auto flip_map = SignedEdgePermutation::flips(flips);
            const auto fp = apply_node_permutation(f, perm);

            const auto a = ocgnn_forward(g, f, time, po), b = ocgnn_forward(rel.graph, fp, time, po);
            worst = std::max(worst, max_diff(b.f_dot, apply_node_permutation(a.f_dot, perm)));
            worst = std::max(worst, max_diff(b.g_dot, apply_edge_signed_permutation(apply_edge_signed_permutation(a.g_dot, flip_map), rel.edge_map)));
            worst = std::max(worst, max_diff(gcn_forward(rel.graph, fp, time, pg), apply_node_permutation(gcn_forward(g, f, time, pg), perm)));

            const auto B = build_incidence(g.edges, n);
            const auto e = field(rng, g.num_edges()), ed = field(rng, g.num_edges()), fd = field(rng, n);
            const auto q = SignedEdgePermutation::from(shuffle(rng, g.num_edges()).map, flips);
            const double l0 = loss_ptensor(fd, ed, f, e, B);
            const double l1 = loss_ptensor(apply_node_permutation(fd, perm), apply_edge_signed_permutation(ed, q), fp,
                                           apply_edge_signed_permutation(e, q), transform_incidence(B, perm, q));
            worst = std::max(worst, std::abs(l1 - l0));
        }
        return std::pair{worst < 1e-10, "max deviation " + sci(worst)};
    });
}

inline CheckResult verify_energy_bound(const VerifyOptions& o) {
    using namespace verify_detail;
    return timed("energy-drift bound on training snapshots", [&] {
        Rng rng(o.seed + 3);
        const auto g = random_graph(rng, 10, 10);
        TrainConfig cfg;
        cfg.epochs = 25;
        cfg.arch.hidden = 8;
        cfg.arch.layers = 2;
        const auto r = train(g, ModelKind::ocgnn, cfg);
        bool bound = !r.snapshots.empty();
        double cross = 0.0;
        for (const auto& s : r.snapshots) {
            bound = bound && std::abs(s.residual_power) <= s.bound;
            cross = std::max(cross, std::abs(s.cross));
        }
        return std::pair{bound && cross < 1e-10, std::to_string(r.snapshots.size()) + " snapshots, Cauchy-Schwarz " +
                                                     (bound ? "holds" : "violated") + ", max cross term " + sci(cross)};
    });
}

inline CheckResult verify_gradients(const VerifyOptions& o) {
    using namespace verify_detail;
    return timed("full-loss gradient vs central differences", [&] {
        Rng rng(o.seed + 4);
        double worst = 0.0;
        bool ok = true;
        for (auto kind : {ModelKind::ocgnn, ModelKind::gcn, ModelKind::mlp}) {
            const auto g = random_graph(rng, 10, 8);
            const TrainingGraph tg(g);
            const auto params = init_params(ModelArch{kind, 6, 2, default_omegas()}, o.seed);
            const auto f = field(rng, 10), e = field(rng, g.num_edges());
            auto loss = [&](ad::Tape& tape, ad::Var flat) {
                const StepLoss sl = step_loss(tape, tg, bind_flat(flat, params), f, e, 0.3, 0.1, {});
                return ad::add(ad::add(sl.pde, sl.bc), sl.pt);
            };
            const auto r = ad::grad_check(loss, params.values, 1e-5, 1e-3);
            ok = ok && r.passed;
            worst = std::max(worst, r.max_relative_error);
        }
        return std::pair{ok, "max relative error " + sci(worst)};
    });
}

inline CheckResult verify_cn_oracle(const VerifyOptions& o) {
    using namespace verify_detail;
    return timed("Crank-Nicolson vs dense matrix exponential", [&] {
        Rng rng(o.seed + 5);
        double worst = 0.0;
        bool bounded = true;
        for (int t = 0; t < 6; ++t) {
            const std::size_t n = 3 + rng.below(8);
            const auto g = random_graph(rng, n, n / 2);
            const auto traj = cn_rollout(g, CnVariant::irregular, 1.0, 1000);
            const Eigen::MatrixXd M = to_dense(diffusion_operator(g, CnVariant::irregular).matrix());
            std::vector<Eigen::Index> free;
            for (std::size_t i = 0; i < n; ++i)
                if (!g.boundary_mask[i]) free.push_back(static_cast<Eigen::Index>(i));
            const auto nf = static_cast<Eigen::Index>(free.size());
            Eigen::MatrixXd Mf(nf, nf);
            Eigen::VectorXd uf(nf);
            for (Eigen::Index a = 0; a < nf; ++a) {
                uf(a) = g.u0[static_cast<std::size_t>(free[static_cast<std::size_t>(a)])];
                for (Eigen::Index b = 0; b < nf; ++b) Mf(a, b) = M(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
            }
            const Eigen::VectorXd exact = Mf.exp() * uf;
            for (Eigen::Index a = 0; a < nf; ++a)
                worst = std::max(worst, std::abs(exact(a) - traj.final_state()[static_cast<std::size_t>(free[static_cast<std::size_t>(a)])]));
            double prev = std::numeric_limits<double>::infinity();
            for (const auto& s : traj.states) {
                double m = 0.0;
                for (double x : s) m = std::max(m, std::abs(x));
                bounded = bounded && m <= prev + 1e-12;
                prev = m;
            }
        }
        return std::pair{worst < 1e-3 && bounded, "max final-state error " + sci(worst) + (bounded ? ", max norm non-increasing" : ", max norm grew")};
    });
}

inline CheckResult verify_metrics() {
    using namespace verify_detail;
    return timed("metric arithmetic", [&] {
        const std::vector<double> p{1, 0}, r{0, 0};
        const bool ok = mae(p, r) == 0.5 && mse(p, r) == 0.5 && std::abs(l2_norm_error(p, r) - 0.70711) < 5e-6 &&
                        mae(p, p) == 0.0 && mse(p, p) == 0.0 && l2_norm_error(p, p) == 0.0;
        return std::pair{ok, "MAE " + sci(mae(p, r)) + ", MSE " + sci(mse(p, r)) + ", L2 " + sci(l2_norm_error(p, r))};
    });
}

inline std::vector<CheckResult> run_verify(const VerifyOptions& o = {}) {
    return {verify_incidence(o), verify_hamiltonian(o), verify_equivariance(o), verify_energy_bound(o),
            verify_gradients(o), verify_cn_oracle(o), verify_metrics()};
}

}  // namespace meshdiff
