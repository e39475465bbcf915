#pragma once

// Physics-informed training: PDE, boundary, initial-condition and P-tensor
// losses, inverse-log loss weighting, Adam, and the rollout training loop.

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "meshdiff/model.hpp"

namespace meshdiff {

enum LossTerm : std::size_t { kPde = 0, kBc = 1, kIc = 2, kPt = 3 };
using Lambdas = std::array<double, 4>;

namespace train_detail {

inline std::vector<std::size_t> indices_where(const std::vector<bool>& mask, bool value) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i] == value) out.push_back(i);
    return out;
}

inline double mean_square(std::span<const double> v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x * x;
    return s / static_cast<double>(v.size());
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace train_detail

// ---------------------------------------------------------------------------
// Losses on plain fields

/// Mean over interior nodes of (f_dot - D L_gen f)^2, times `scale`. With no
/// boundary mask entries set every node counts.
inline double loss_pde(std::span<const double> f_dot, std::span<const double> f, const GraphSample& g, double scale = 1.0) {
    require(f_dot.size() == g.num_nodes() && f.size() == g.num_nodes(), "loss_pde: field length differs from node count");
    const auto lf = generator_diffusion_operator(g).apply(f);
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        if (g.boundary_mask[i]) continue;
        const double r = f_dot[i] - lf[i];
        s += r * r;
        ++n;
    }
    return n ? scale * s / static_cast<double>(n) : 0.0;
}

/// Mean squared boundary value over every state of the trajectory.
inline double loss_bc(const Trajectory& traj, const std::vector<bool>& boundary_mask) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& u : traj.states) {
        require(u.size() == boundary_mask.size(), "loss_bc: state length differs from mask");
        for (std::size_t i = 0; i < u.size(); ++i)
            if (boundary_mask[i]) {
                s += u[i] * u[i];
                ++n;
            }
    }
    return n ? s / static_cast<double>(n) : 0.0;
}

inline double loss_ic(std::span<const double> f0, std::span<const double> u0) {
    require(f0.size() == u0.size(), "loss_ic: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < f0.size(); ++i) s += (f0[i] - u0[i]) * (f0[i] - u0[i]);
    return f0.empty() ? 0.0 : s / static_cast<double>(f0.size());
}

struct PtensorResiduals {
    std::vector<double> r_f;  // f_dot - B^T g
    std::vector<double> r_g;  // g_dot + B f
};

inline PtensorResiduals ptensor_residuals(std::span<const double> f_dot, std::span<const double> g_dot,
                                          std::span<const double> f, std::span<const double> g, const IncidenceMatrix& b) {
    require(f.size() == b.num_nodes() && f_dot.size() == b.num_nodes(), "P-tensor: node field length differs from incidence");
    require(g.size() == b.num_edges() && g_dot.size() == b.num_edges(), "P-tensor: edge field length differs from incidence");
    PtensorResiduals r{b.divergence(g), b.gradient(f)};
    for (std::size_t i = 0; i < r.r_f.size(); ++i) r.r_f[i] = f_dot[i] - r.r_f[i];
    for (std::size_t e = 0; e < r.r_g.size(); ++e) r.r_g[e] = g_dot[e] + r.r_g[e];
    return r;
}

/// mean(R_f^2) + mean(R_g^2); with `normalize` each residual is divided by its
/// running magnitude estimate first.
inline double loss_ptensor(std::span<const double> f_dot, std::span<const double> g_dot, std::span<const double> f,
                           std::span<const double> g, const IncidenceMatrix& b, bool normalize = false,
                           double alpha_f = 1.0, double alpha_g = 1.0) {
    const auto r = ptensor_residuals(f_dot, g_dot, f, g, b);
    const double kf = normalize ? 1.0 / (alpha_f * alpha_f) : 1.0, kg = normalize ? 1.0 / (alpha_g * alpha_g) : 1.0;
    return kf * train_detail::mean_square(r.r_f) + kg * train_detail::mean_square(r.r_g);
}

// ---------------------------------------------------------------------------
// Loss weighting

struct LambdaSchedule {
    double total = 4.0;  // sum of weights when all four terms are active
    double min = 0.1;
    double max = 10.0;
    double smoothing = 0.0;  // weight of the previous lambdas
    std::array<bool, 4> active{true, true, true, true};
};

/// lambda_k proportional to 1 / log(e + l_k / mean(l)), rescaled to sum to
/// total * (active terms / 4), clipped to [min, max]. Inactive terms get 0.
inline Lambdas update_lambdas(const Lambdas& losses, const Lambdas& previous, const LambdaSchedule& s) {
    double mean = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < 4; ++k) {
        require(std::isfinite(losses[k]) && losses[k] >= 0.0, "update_lambdas: losses must be finite and non-negative");
        if (!s.active[k]) continue;
        mean += losses[k];
        ++n;
    }
    Lambdas out{0.0, 0.0, 0.0, 0.0};
    if (n == 0) return out;
    mean /= static_cast<double>(n);
    double sum = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
        if (!s.active[k]) continue;
        const double ratio = mean > 0.0 ? losses[k] / mean : 1.0;
        out[k] = 1.0 / std::log(std::exp(1.0) + ratio);
        sum += out[k];
    }
    const double target = s.total * static_cast<double>(n) / 4.0;
    for (std::size_t k = 0; k < 4; ++k) {
        if (!s.active[k]) continue;
        const double fresh = std::clamp(out[k] * target / sum, s.min, s.max);
        out[k] = s.smoothing * previous[k] + (1.0 - s.smoothing) * fresh;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Cosine decay from lr to lr * final_factor over the run; factor 1 keeps lr constant.
inline double scheduled_lr(double lr, double final_factor, std::size_t epoch, std::size_t epochs) {
    if (epochs <= 1) return lr;
    const double x = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
    return lr * (final_factor + (1.0 - final_factor) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * x)));
}

class Adam {
public:
    Adam(AdamConfig cfg, std::size_t n) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

    void step(std::vector<double>& x, std::span<const double> grad) { step(x, grad, cfg_.lr); }

    void step(std::vector<double>& x, std::span<const double> grad, double lr) {
        require(x.size() == m_.size() && grad.size() == m_.size(), "Adam: parameter length changed");
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < x.size(); ++i) {
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
            x[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.eps);
        }
    }

private:
    AdamConfig cfg_;
    std::vector<double> m_, v_;
    std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    std::size_t epochs = 500;
    AdamConfig adam;
    double lr_final_factor = 0.01;
    double T = 1.0;
    std::size_t n_t = 10;
    std::uint64_t seed = 0;
    ModelArch arch;
    LambdaSchedule schedule;
    Lambdas lambda_init{1.0, 1.0, 1.0, 1.0};
    bool normalize_pt = false;
    double running_momentum = 0.9;  // running RMS estimates, updated once per epoch
    double scale_epsilon = 1e-8;
    double boundary_value = 0.0;

    void check() const {
        require(adam.lr >= 0.0 && std::isfinite(adam.lr), "learning rate must be non-negative");
        require(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0, "Adam betas must be in [0, 1)");
        require(adam.eps > 0.0, "Adam epsilon must be positive");
        require(lr_final_factor >= 0.0 && lr_final_factor <= 1.0, "final learning-rate factor must be in [0, 1]");
        require(T > 0.0 && std::isfinite(T), "T must be positive");
        require(n_t >= 1, "n_t must be at least 1");
        require(running_momentum >= 0.0 && running_momentum < 1.0, "running momentum must be in [0, 1)");
        require(scale_epsilon > 0.0, "scale epsilon must be positive");
        require(schedule.min > 0.0 && schedule.min <= schedule.max && schedule.total > 0.0, "invalid lambda schedule");
        require(schedule.smoothing >= 0.0 && schedule.smoothing < 1.0, "lambda smoothing must be in [0, 1)");
    }
};

struct LossBreakdown {
    double l_pde = 0.0, l_bc = 0.0, l_ic = 0.0, l_pt = 0.0;
    Lambdas lambdas{};
    double total = 0.0;
    std::size_t epoch = 0;
    double scale_s = 0.0;
};

/// Energy bookkeeping at one rollout step.
struct EnergySnapshot {
    std::size_t epoch = 0, step = 0;
    double t = 0.0;
    double residual_power = 0.0;  // f.R_f + g.R_g
    double bound = 0.0;           // |f||R_f| + |g||R_g|
    double power = 0.0;           // f.f_dot + g.g_dot
    double cross = 0.0;           // f.B^T g - g.B f
};

inline EnergySnapshot energy_snapshot(std::span<const double> f, std::span<const double> g, std::span<const double> f_dot,
                                      std::span<const double> g_dot, const IncidenceMatrix& b) {
    using train_detail::dot;
    const auto r = ptensor_residuals(f_dot, g_dot, f, g, b);
    EnergySnapshot s;
    s.residual_power = dot(f, r.r_f) + dot(g, r.r_g);
    s.bound = std::sqrt(dot(f, f)) * std::sqrt(dot(r.r_f, r.r_f)) + std::sqrt(dot(g, g)) * std::sqrt(dot(r.r_g, r.r_g));
    s.power = dot(f, f_dot) + dot(g, g_dot);
    s.cross = dot(f, b.divergence(g)) - dot(g, b.gradient(f));
    return s;
}

struct TrainResult {
    ModelParams params;
    std::vector<LossBreakdown> history;
    std::vector<EnergySnapshot> snapshots;
};

/// The pieces of one rollout step's loss recorded on a tape.
struct StepLoss {
    ad::Var pde;  // unscaled mean squared PDE residual over interior nodes
    ad::Var bc;
    ad::Var pt;
    NodeEdgeRates rates;
    std::vector<double> lf;  // D L_gen f
};

/// Graph data the training loop needs besides the model context.
struct TrainingGraph {
    GraphContext context;
    std::vector<std::size_t> interior, boundary;
    std::vector<double> u0;

    explicit TrainingGraph(const GraphSample& g)
        : context(make_context(g)),
          interior(train_detail::indices_where(g.boundary_mask, false)),
          boundary(train_detail::indices_where(g.boundary_mask, true)),
          u0(g.u0),
          edges(g.edges),
          flux_coeff(flux_coefficients(g)) {
        require(!interior.empty(), "training needs at least one interior node");
    }

    std::vector<Edge> edges;
    std::vector<double> flux_coeff;

    std::vector<double> initial_flux(std::span<const double> f) const { return diffusive_flux(edges, flux_coeff, f); }
};

struct PtNormalization {
    bool enabled = false;
    double alpha_f = 1.0, alpha_g = 1.0;
};

inline StepLoss step_loss(ad::Tape& tape, const TrainingGraph& tg, const BoundParams& p, std::span<const double> f,
                          std::span<const double> g, double t, double dt, const PtNormalization& norm) {
    using namespace ad;
    const GraphContext& c = tg.context;
    StepLoss out;
    const Var fv = tape.constant(column(f));
    out.rates = model_rates(tape, c, p, fv, tg.u0, t);
    out.lf = c.diffusion.multiply(f);

    const Var res = gather_rows(sub(out.rates.f_dot, tape.constant(column(out.lf))), tg.interior);
    out.pde = scalar_mul(squared_norm(res), 1.0 / static_cast<double>(tg.interior.size()));

    if (tg.boundary.empty()) {
        out.bc = tape.constant_scalar(0.0);
    } else {
        Mat fb(static_cast<Index>(tg.boundary.size()), 1);
        for (std::size_t k = 0; k < tg.boundary.size(); ++k) fb(static_cast<Index>(k), 0) = f[tg.boundary[k]];
        const Var next = add(tape.constant(std::move(fb)), scalar_mul(gather_rows(out.rates.f_dot, tg.boundary), dt));
        out.bc = scalar_mul(squared_norm(next), 1.0 / static_cast<double>(tg.boundary.size()));
    }

    if (p.params->arch.kind == ModelKind::ocgnn && c.m > 0) {
        const double kf = norm.enabled ? 1.0 / (norm.alpha_f * norm.alpha_f) : 1.0;
        const double kg = norm.enabled ? 1.0 / (norm.alpha_g * norm.alpha_g) : 1.0;
        const Var rf = sub(out.rates.f_dot, tape.constant(column(c.incidence.divergence(g))));
        const Var rg = add(out.rates.g_dot, tape.constant(column(c.incidence.gradient(f))));
        out.pt = add(scalar_mul(squared_norm(rf), kf / static_cast<double>(c.n)),
                     scalar_mul(squared_norm(rg), kg / static_cast<double>(c.m)));
    } else {
        out.pt = tape.constant_scalar(0.0);
    }
    return out;
}

namespace train_detail {

struct EpochStats {
    double pde = 0.0, bc = 0.0, ic = 0.0, pt = 0.0;  // time averages; pde unscaled
    double rms_fdot = 0.0, rms_lf = 0.0;             // interior RMS over the epoch
    double rms_fdot_all = 0.0, rms_bf = 0.0;         // P-tensor normalization estimates
    std::vector<double> grad;
    std::vector<EnergySnapshot> snapshots;
};

inline double epoch_scale(double rms_fdot, double rms_lf, double eps) { return 1.0 / (rms_fdot * rms_lf + eps); }

/// One rollout over the epoch's time points. With `weights` set, each step's
/// weighted loss is back-propagated and the gradients averaged.
inline EpochStats run_epoch(const TrainingGraph& tg, const ModelParams& params, const TrainConfig& cfg,
                            const PtNormalization& norm, const std::optional<std::array<double, 3>>& weights,
                            std::size_t epoch) {
    const GraphContext& c = tg.context;
    const double dt = cfg.T / static_cast<double>(cfg.n_t);
    const bool has_edges = params.arch.kind == ModelKind::ocgnn;
    std::vector<double> f = tg.u0;
    for (std::size_t i : tg.boundary) f[i] = cfg.boundary_value;
    std::vector<double> g = tg.initial_flux(f);

    EpochStats st;
    st.ic = 0.0;
    for (std::size_t i : tg.interior) st.ic += (f[i] - tg.u0[i]) * (f[i] - tg.u0[i]);
    st.ic /= static_cast<double>(tg.interior.size());
    if (weights) st.grad.assign(params.size(), 0.0);
    double sq_fdot = 0.0, sq_lf = 0.0, sq_fdot_all = 0.0, sq_bf = 0.0;
    const double inv_steps = 1.0 / static_cast<double>(cfg.n_t);

    for (std::size_t k = 0; k < cfg.n_t; ++k) {
        const double t = static_cast<double>(k) * dt;
        ad::Tape tape;
        const BoundParams p = bind_params(tape, params, weights.has_value());
        const StepLoss sl = step_loss(tape, tg, p, f, g, t, dt, norm);
        const std::vector<double> f_dot = to_vector(sl.rates.f_dot.value());
        const std::vector<double> g_dot = has_edges ? to_vector(sl.rates.g_dot.value()) : std::vector<double>{};

        st.pde += sl.pde.scalar() * inv_steps;
        st.bc += sl.bc.scalar() * inv_steps;
        st.pt += sl.pt.scalar() * inv_steps;
        for (std::size_t i : tg.interior) {
            sq_fdot += f_dot[i] * f_dot[i];
            sq_lf += sl.lf[i] * sl.lf[i];
        }
        sq_fdot_all += mean_square(f_dot);
        if (has_edges) sq_bf += mean_square(c.incidence.gradient(f));

        if (weights) {
            const auto& w = *weights;
            const ad::Var total = ad::add(ad::add(ad::scalar_mul(sl.pde, w[0]), ad::scalar_mul(sl.bc, w[1])),
                                          ad::scalar_mul(sl.pt, w[2]));
            tape.backward(total);
            const auto gk = flat_gradient(tape, p);
            for (std::size_t i = 0; i < gk.size(); ++i) st.grad[i] += gk[i] * inv_steps;
            if (has_edges && (k == 0 || k + 1 == cfg.n_t)) {
                EnergySnapshot s = energy_snapshot(f, g, f_dot, g_dot, c.incidence);
                s.epoch = epoch;
                s.step = k;
                s.t = t;
                st.snapshots.push_back(s);
            }
        }

        f = euler_step(f, f_dot, dt, c.boundary, cfg.boundary_value);
        if (has_edges)
            for (std::size_t e = 0; e < g.size(); ++e) g[e] += dt * g_dot[e];
        if (!all_finite(f) || !all_finite(g))
            throw NumericalError("training rollout produced a non-finite state at epoch " + std::to_string(epoch) +
                                 ", step " + std::to_string(k + 1));
    }
    const double n_int = static_cast<double>(tg.interior.size() * cfg.n_t);
    st.rms_fdot = std::sqrt(sq_fdot / n_int);
    st.rms_lf = std::sqrt(sq_lf / n_int);
    st.rms_fdot_all = std::sqrt(sq_fdot_all * inv_steps);
    st.rms_bf = std::sqrt(sq_bf * inv_steps);
    return st;
}

}  // namespace train_detail

/// Trains from the given starting parameters. A forward-only pass before
/// the first epoch seeds the running scale estimates and the first lambdas,
/// so every epoch (the first included) uses weights derived from measured
/// losses.
inline TrainResult train_from(const GraphSample& graph, ModelParams params, const TrainConfig& cfg,
                              const std::function<void(const LossBreakdown&)>& on_epoch = {}) {
    cfg.check();
    validate(graph);
    const TrainingGraph tg(graph);
    TrainResult res;
    if (cfg.epochs == 0) {
        res.params = std::move(params);
        return res;
    }
    const bool has_edges = params.arch.kind == ModelKind::ocgnn;
    LambdaSchedule schedule = cfg.schedule;
    if (!has_edges) schedule.active[kPt] = false;

    PtNormalization norm{cfg.normalize_pt, 1.0, 1.0};
    auto probe = train_detail::run_epoch(tg, params, cfg, norm, std::nullopt, 0);
    double ema_fdot = probe.rms_fdot, ema_lf = probe.rms_lf;
    double ema_fall = probe.rms_fdot_all, ema_bf = probe.rms_bf;
    auto set_norm = [&] {
        norm.alpha_f = std::max(ema_fall, cfg.scale_epsilon);
        norm.alpha_g = std::max(ema_bf, cfg.scale_epsilon);
    };
    set_norm();
    if (cfg.normalize_pt) probe = train_detail::run_epoch(tg, params, cfg, norm, std::nullopt, 0);
    double s = train_detail::epoch_scale(ema_fdot, ema_lf, cfg.scale_epsilon);
    if (!std::isfinite(s * probe.pde) || !std::isfinite(probe.bc) || !std::isfinite(probe.pt))
        throw NumericalError("non-finite loss at epoch 0");
    Lambdas init = cfg.lambda_init;
    if (!has_edges) init[kPt] = 0.0;
    Lambdas lambdas = update_lambdas({s * probe.pde, probe.bc, probe.ic, probe.pt}, init, schedule);

    Adam adam(cfg.adam, params.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::array<double, 3> w{lambdas[kPde] * s, lambdas[kBc], lambdas[kPt]};
        auto st = train_detail::run_epoch(tg, params, cfg, norm, w, epoch);

        LossBreakdown b;
        b.epoch = epoch;
        b.scale_s = s;
        b.l_pde = s * st.pde;
        b.l_bc = st.bc;
        b.l_ic = st.ic;
        b.l_pt = st.pt;
        b.lambdas = lambdas;
        b.total = lambdas[kPde] * b.l_pde + lambdas[kBc] * b.l_bc + lambdas[kIc] * b.l_ic + lambdas[kPt] * b.l_pt;
        if (!std::isfinite(b.total) || !all_finite(st.grad))
            throw NumericalError("non-finite loss at epoch " + std::to_string(epoch));
        res.history.push_back(b);
        res.snapshots.insert(res.snapshots.end(), st.snapshots.begin(), st.snapshots.end());
        if (on_epoch) on_epoch(b);

        adam.step(params.values, st.grad, scheduled_lr(cfg.adam.lr, cfg.lr_final_factor, epoch, cfg.epochs));

        const double m = cfg.running_momentum;
        ema_fdot = m * ema_fdot + (1.0 - m) * st.rms_fdot;
        ema_lf = m * ema_lf + (1.0 - m) * st.rms_lf;
        ema_fall = m * ema_fall + (1.0 - m) * st.rms_fdot_all;
        ema_bf = m * ema_bf + (1.0 - m) * st.rms_bf;
        set_norm();
        s = train_detail::epoch_scale(ema_fdot, ema_lf, cfg.scale_epsilon);
        lambdas = update_lambdas({b.l_pde, b.l_bc, b.l_ic, b.l_pt}, lambdas, schedule);
    }
    res.params = std::move(params);
    return res;
}

/// Trains a freshly initialized model of the given kind (seeded by cfg.seed).
inline TrainResult train(const GraphSample& graph, ModelKind kind, const TrainConfig& cfg,
                         const std::function<void(const LossBreakdown&)>& on_epoch = {}) {
    ModelArch arch = cfg.arch;
    arch.kind = kind;
    return train_from(graph, init_params(arch, cfg.seed), cfg, on_epoch);
}

}  // namespace meshdiff
