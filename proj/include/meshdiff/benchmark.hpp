#pragma once

// Benchmark driver: trains or loads models, rolls them out, compares with a
// Crank-Nicolson reference and writes CSV tables and SVG line plots.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "meshdiff/cn_solver.hpp"
#include "meshdiff/eval.hpp"
#include "meshdiff/training.hpp"

namespace meshdiff {

struct MetricsReport {
    std::string mesh, model, reference;
    double mae = 0.0, mse = 0.0, l2_norm = 0.0, pde_residual_time = 0.0;
    double runtime_seconds = 0.0;
    std::vector<double> times, temporal_l2;
};

struct BenchmarkCase {
    std::string name;
    GraphSample graph;
};

/// Model specs: ocgnn, gcn, mlp (trained in-run), untrained-ocgnn,
/// untrained-gcn, untrained-mlp, cn-irregular, cn-pde, or params:<file.json>.
struct BenchmarkConfig {
    double T = 1.0;
    std::size_t n_t = 100;
    CnVariant reference = CnVariant::irregular;
    std::vector<std::string> models{"ocgnn", "gcn", "mlp"};
    TrainConfig train;

    void check() const {
        require(T > 0.0 && std::isfinite(T), "benchmark T must be positive");
        require(n_t >= 1, "benchmark n_t must be at least 1");
        require(!models.empty(), "benchmark needs at least one model");
        train.check();
    }
};

struct BenchmarkSink {
    std::function<void(const MetricsReport&)> on_report;
    std::function<void(const std::string& mesh, const std::string& model, const LossBreakdown&)> on_epoch;
};

inline MetricsReport compare_to_reference(const std::string& mesh, const std::string& model, const Trajectory& pred,
                                          const Trajectory& ref, const GraphSample& g, CnVariant reference) {
    require(pred.states.size() == ref.states.size(), "prediction and reference have different numbers of states");
    MetricsReport r;
    r.mesh = mesh;
    r.model = model;
    r.reference = "cn-" + to_string(reference);
    r.mae = mae(pred.final_state(), ref.final_state());
    r.mse = mse(pred.final_state(), ref.final_state());
    r.l2_norm = l2_norm_error(pred.final_state(), ref.final_state());
    r.pde_residual_time = pde_residual_time(pred, g, reference);
    r.times = ref.times;
    r.temporal_l2 = temporal_l2_error(pred, ref);
    return r;
}

namespace bench_detail {

inline bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

inline void check_model_spec(const std::string& m) {
    static const char* known[] = {"ocgnn", "gcn", "mlp", "untrained-ocgnn", "untrained-gcn", "untrained-mlp", "cn-irregular", "cn-pde"};
    if (starts_with(m, "params:") && m.size() > 7) return;
    for (const char* k : known)
        if (m == k) return;
    throw ValidationError("unknown benchmark model '" + m + "'");
}

}  // namespace bench_detail

/// Runs every (mesh, model) pair in order. Reports are passed to the sink as
/// soon as they exist so callers can flush partial tables.
inline std::vector<MetricsReport> run_benchmark(const std::vector<BenchmarkCase>& cases, const BenchmarkConfig& cfg,
                                                const BenchmarkSink& sink = {}) {
    cfg.check();
    for (const auto& m : cfg.models) bench_detail::check_model_spec(m);
    std::vector<MetricsReport> out;
    for (const auto& c : cases) {
        validate(c.graph);
        require_interior(c.graph);
        const Trajectory ref = cn_rollout(c.graph, cfg.reference, cfg.T, cfg.n_t, true, cfg.train.boundary_value);
        for (const auto& m : cfg.models) {
            using bench_detail::starts_with;
            const auto t0 = std::chrono::steady_clock::now();
            Trajectory pred;
            if (starts_with(m, "cn-")) {
                pred = cn_rollout(c.graph, parse_cn_variant(m.substr(3)), cfg.T, cfg.n_t, true, cfg.train.boundary_value);
            } else {
                ModelParams params;
                if (starts_with(m, "params:")) {
                    params = params_from_json(read_text_file(m.substr(7)));
                } else if (starts_with(m, "untrained-")) {
                    ModelArch arch = cfg.train.arch;
                    arch.kind = parse_model_kind(m.substr(10));
                    params = init_params(arch, cfg.train.seed);
                } else {
                    std::function<void(const LossBreakdown&)> cb;
                    if (sink.on_epoch) cb = [&](const LossBreakdown& b) { sink.on_epoch(c.name, m, b); };
                    params = train(c.graph, parse_model_kind(m), cfg.train, cb).params;
                }
                pred = euler_rollout(c.graph, params, cfg.T, cfg.n_t, cfg.train.boundary_value).nodes;
            }
            MetricsReport r = compare_to_reference(c.name, m, pred, ref, c.graph, cfg.reference);
            r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (sink.on_report) sink.on_report(r);
            out.push_back(std::move(r));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace bench_detail {
inline std::string num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}
}  // namespace bench_detail

inline std::string metrics_csv_header(bool with_runtime) {
    return std::string("mesh,model,reference,mae,mse,l2_norm,pde_residual_time") + (with_runtime ? ",runtime_s" : "") + "\n";
}

inline std::string metrics_csv_row(const MetricsReport& r, bool with_runtime) {
    using bench_detail::num;
    std::string s = r.mesh + "," + r.model + "," + r.reference + "," + num(r.mae) + "," + num(r.mse) + "," + num(r.l2_norm) +
                    "," + num(r.pde_residual_time);
    if (with_runtime) s += "," + num(r.runtime_seconds);
    return s + "\n";
}

inline std::string metrics_csv(const std::vector<MetricsReport>& reports, bool with_runtime = false) {
    std::string s = metrics_csv_header(with_runtime);
    for (const auto& r : reports) s += metrics_csv_row(r, with_runtime);
    return s;
}

inline std::string loss_csv_header() {
    return "mesh,model,epoch,total,l_pde,l_bc,l_ic,l_pt,lambda_pde,lambda_bc,lambda_ic,lambda_pt,scale_s\n";
}

inline std::string loss_csv_row(const std::string& mesh, const std::string& model, const LossBreakdown& b) {
    using bench_detail::num;
    return mesh + "," + model + "," + std::to_string(b.epoch) + "," + num(b.total) + "," + num(b.l_pde) + "," + num(b.l_bc) +
           "," + num(b.l_ic) + "," + num(b.l_pt) + "," + num(b.lambdas[0]) + "," + num(b.lambdas[1]) + "," +
           num(b.lambdas[2]) + "," + num(b.lambdas[3]) + "," + num(b.scale_s) + "\n";
}

inline std::string loss_history_csv(const std::string& mesh, const std::string& model, const std::vector<LossBreakdown>& h) {
    std::string s = loss_csv_header();
    for (const auto& b : h) s += loss_csv_row(mesh, model, b);
    return s;
}

/// One row per (mesh, model, step) with the normalized L2 error at that time.
inline std::string temporal_error_csv(const std::vector<MetricsReport>& reports) {
    using bench_detail::num;
    std::string s = "mesh,model,step,time,l2_norm\n";
    for (const auto& r : reports)
        for (std::size_t k = 0; k < r.temporal_l2.size(); ++k)
            s += r.mesh + "," + r.model + "," + std::to_string(k) + "," + num(r.times[k]) + "," + num(r.temporal_l2[k]) + "\n";
    return s;
}

// ---------------------------------------------------------------------------
// SVG

struct PlotSeries {
    std::string label;
    std::vector<double> x, y;
};

/// Line plot with axes, min/max tick labels and a legend. With log_y the
/// y axis is log10; non-positive values are skipped.
inline std::string svg_line_plot(const std::vector<PlotSeries>& series, const std::string& title, const std::string& x_label,
                                 const std::string& y_label, bool log_y = false) {
    const double W = 640, H = 420, left = 70, right = 150, top = 40, bottom = 50;
    auto ty = [&](double y) { return log_y ? std::log10(y) : y; };
    auto usable = [&](double y) { return std::isfinite(y) && (!log_y || y > 0.0); };
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series) {
        require(s.x.size() == s.y.size(), "plot series '" + s.label + "' has mismatched x and y");
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!usable(s.y[i]) || !std::isfinite(s.x[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, ty(s.y[i]));
            y1 = std::max(y1, ty(s.y[i]));
        }
    }
    if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y0 -= 0.5, y1 += 0.5;
    const double pw = W - left - right, ph = H - top - bottom;
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return top + (1.0 - (ty(y) - y0) / (y1 - y0)) * ph; };
    auto esc = [](const std::string& s) {
        std::string o;
        for (char c : s) {
            if (c == '<') o += "&lt;";
            else if (c == '>') o += "&gt;";
            else if (c == '&') o += "&amp;";
            else o += c;
        }
        return o;
    };
    auto f = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4g", v);
        return std::string(buf);
    };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(title) << "</text>\n";
    os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"black\"/>\n";
    os << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << esc(x_label) << "</text>\n";
    os << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
       << esc(log_y ? "log10 " + y_label : y_label) << "</text>\n";
    os << "<text x=\"" << left << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << f(x0) << "</text>\n";
    os << "<text x=\"" << left + pw << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << f(x1) << "</text>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << top + ph << "\" text-anchor=\"end\">" << f(y0) << "</text>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << top + 4 << "\" text-anchor=\"end\">" << f(y1) << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = colors[k % 8];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        bool first = true;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!usable(s.y[i]) || !std::isfinite(s.x[i])) continue;
            os << (first ? "" : " ") << f(px(s.x[i])) << "," << f(py(s.y[i]));
            first = false;
        }
        os << "\"/>\n";
        const double ly = top + 14 + 18 * static_cast<double>(k);
        os << "<line x1=\"" << W - right + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << W - right + 30 << "\" y2=\"" << ly - 4
           << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << W - right + 35 << "\" y=\"" << ly << "\">" << esc(s.label) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace meshdiff
