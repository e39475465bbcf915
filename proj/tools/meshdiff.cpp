// meshdiff command-line front end. Exit codes: 0 success, 1 validation
// error, 2 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>

#include <meshdiff/benchmark.hpp>
#include <meshdiff/cn_solver.hpp>
#include <meshdiff/fd_demo.hpp>
#include <meshdiff/json_io.hpp>
#include <meshdiff/meshgen.hpp>
#include <meshdiff/meshio.hpp>
#include <meshdiff/verify.hpp>

namespace fs = std::filesystem;
using namespace meshdiff;

namespace {

struct GenMeshArgs {
    MeshGenConfig mesh;
    HealingParams healing;
    std::string out, wound_csv;
};

struct IngestArgs {
    std::string in, out;
    std::size_t n = 2000, k = 10;
    std::uint64_t seed = 7;
};

struct SolveArgs {
    std::string sample, out, variant = "irregular";
    double T = 1.0, boundary_value = 0.0;
    std::size_t n_t = 100;
    bool unnormalized = false;
};

struct FdArgs {
    std::size_t nx = 100, ny = 100, steps = 1000;
    double perturb = 0.6, D = 4.0, dt = 0.0;
    std::uint64_t seed = 1;
    std::string out_csv;
};

struct TrainArgs {
    std::string sample, model = "ocgnn", out, loss_csv, loss_svg, rollout_out;
    std::size_t rollout_nt = 100;
    TrainConfig cfg;
};

struct BenchArgs {
    std::vector<std::string> samples;
    std::string reference = "irregular", out = "metrics.csv", loss_csv, temporal_csv, svg_dir;
    bool runtime = false;
    BenchmarkConfig cfg;
};

void need(const std::string& value, const char* flag) {
    if (value.empty()) throw ValidationError(std::string("missing required option ") + flag);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot open '" + path + "' for writing");
    return os;
}

void add_train_options(CLI::App* sub, TrainConfig& c) {
    sub->add_option("--epochs", c.epochs, "training epochs");
    sub->add_option("--lr", c.adam.lr, "Adam learning rate");
    sub->add_option("--lr-final-factor", c.lr_final_factor, "final learning rate as a fraction of --lr (cosine decay)");
    sub->add_option("--beta1", c.adam.beta1, "Adam first-moment decay");
    sub->add_option("--beta2", c.adam.beta2, "Adam second-moment decay");
    sub->add_option("--train-T", c.T, "training rollout horizon");
    sub->add_option("--train-nt", c.n_t, "training rollout steps per epoch");
    sub->add_option("--seed", c.seed, "parameter initialization seed");
    sub->add_option("--hidden", c.arch.hidden, "hidden width");
    sub->add_option("--layers", c.arch.layers, "message-passing or dense layers");
    sub->add_option("--lambda-min", c.schedule.min, "lower clip of the loss weights");
    sub->add_option("--lambda-max", c.schedule.max, "upper clip of the loss weights");
    sub->add_option("--lambda-smoothing", c.schedule.smoothing, "weight of the previous loss weights");
    sub->add_flag("--normalize-pt", c.normalize_pt, "divide P-tensor residuals by running magnitudes");
}

void run_gen_mesh(const GenMeshArgs& a) {
    need(a.out, "--out");
    const auto r = generate_physical_mesh(a.healing, a.mesh);
    write_text_file(a.out, to_json(r.sample));
    if (!a.wound_csv.empty()) {
        auto os = open_out(a.wound_csv);
        os << "step,time,sum_damage\n";
        char buf[96];
        for (const auto& w : r.wound) {
            std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", w.step, w.time, w.sum_damage);
            os << buf;
        }
    }
    std::printf("wrote %s: %zu nodes, %zu edges, %zu boundary\n", a.out.c_str(), r.sample.num_nodes(), r.sample.num_edges(),
                r.sample.num_nodes() - r.sample.num_interior());
}

void run_ingest(const IngestArgs& a) {
    need(a.in, "--in");
    need(a.out, "--out");
    const auto mesh = parse_mesh(read_text_file(a.in), mesh_format_from_path(a.in));
    const auto g = realmesh_to_graphsample(mesh, a.n, a.k, a.seed);
    write_text_file(a.out, to_json(g));
    std::printf("wrote %s: %zu nodes, %zu edges, %zu boundary\n", a.out.c_str(), g.num_nodes(), g.num_edges(),
                g.num_nodes() - g.num_interior());
}

void run_solve(const SolveArgs& a) {
    need(a.sample, "--sample");
    need(a.out, "--out");
    const auto g = graph_from_json(read_text_file(a.sample));
    validate(g);
    const auto traj = cn_rollout(g, parse_cn_variant(a.variant), a.T, a.n_t, !a.unnormalized, a.boundary_value);
    write_text_file(a.out, to_json(traj));
    std::printf("wrote %s: %zu states\n", a.out.c_str(), traj.states.size());
}

void run_fd(const FdArgs& a) {
    FdConfig cfg;
    cfg.D = a.D;
    cfg.n_steps = a.steps;
    if (a.dt > 0.0) cfg.dt = a.dt;
    const auto r = run_fd_demo(make_grid(a.nx, a.ny, a.perturb, a.seed), cfg);
    if (!a.out_csv.empty()) write_text_file(a.out_csv, fd_csv(r));
    std::printf("dt %.6g, %zu steps, %s\n", r.dt, r.records.size() - 1, r.diverged ? "diverged" : "bounded");
}

void run_train(TrainArgs& a) {
    need(a.sample, "--sample");
    need(a.out, "--out");
    const auto g = graph_from_json(read_text_file(a.sample));
    std::ofstream loss;
    if (!a.loss_csv.empty()) {
        loss = open_out(a.loss_csv);
        loss << loss_csv_header();
    }
    const std::string mesh = fs::path(a.sample).stem().string();
    const auto r = train(g, parse_model_kind(a.model), a.cfg, [&](const LossBreakdown& b) {
        if (loss.is_open()) loss << loss_csv_row(mesh, a.model, b) << std::flush;
    });
    write_text_file(a.out, to_json(r.params));
    if (!a.loss_svg.empty()) {
        PlotSeries s{"total", {}, {}}, p{"l_pde", {}, {}}, pt{"l_pt", {}, {}};
        for (const auto& b : r.history) {
            for (auto* q : {&s, &p, &pt}) q->x.push_back(static_cast<double>(b.epoch));
            s.y.push_back(b.total);
            p.y.push_back(b.l_pde);
            pt.y.push_back(b.l_pt);
        }
        std::vector<PlotSeries> series{s, p};
        if (r.params.arch.kind == ModelKind::ocgnn) series.push_back(pt);
        write_text_file(a.loss_svg, svg_line_plot(series, a.model + " on " + mesh, "epoch", "loss", true));
    }
    if (!a.rollout_out.empty()) write_text_file(a.rollout_out, to_json(euler_rollout(g, r.params, a.cfg.T, a.rollout_nt).nodes));
    std::printf("trained %s for %zu epochs: loss %.6g -> %.6g\n", a.model.c_str(), r.history.size(),
                r.history.empty() ? 0.0 : r.history.front().total, r.history.empty() ? 0.0 : r.history.back().total);
}

void run_bench(BenchArgs& a) {
    if (a.samples.empty()) throw ValidationError("missing required option --samples");
    a.cfg.reference = parse_cn_variant(a.reference);
    std::vector<BenchmarkCase> cases;
    for (const auto& path : a.samples) cases.push_back({fs::path(path).stem().string(), graph_from_json(read_text_file(path))});

    auto metrics = open_out(a.out);
    metrics << metrics_csv_header(a.runtime) << std::flush;
    std::ofstream loss;
    if (!a.loss_csv.empty()) {
        loss = open_out(a.loss_csv);
        loss << loss_csv_header();
    }
    std::map<std::pair<std::string, std::string>, PlotSeries> curves;
    BenchmarkSink sink;
    sink.on_report = [&](const MetricsReport& r) {
        metrics << metrics_csv_row(r, a.runtime) << std::flush;
        std::printf("%s / %s: L2 %.4g, residual %.4g\n", r.mesh.c_str(), r.model.c_str(), r.l2_norm, r.pde_residual_time);
    };
    sink.on_epoch = [&](const std::string& mesh, const std::string& model, const LossBreakdown& b) {
        if (loss.is_open()) loss << loss_csv_row(mesh, model, b) << std::flush;
        auto& c = curves[{mesh, model}];
        c.label = model;
        c.x.push_back(static_cast<double>(b.epoch));
        c.y.push_back(b.total);
    };
    const auto reports = run_benchmark(cases, a.cfg, sink);
    if (!a.temporal_csv.empty()) write_text_file(a.temporal_csv, temporal_error_csv(reports));
    if (!a.svg_dir.empty()) {
        fs::create_directories(a.svg_dir);
        for (const auto& c : cases) {
            std::vector<PlotSeries> loss_series, err_series;
            for (const auto& [key, s] : curves)
                if (key.first == c.name) loss_series.push_back(s);
            for (const auto& r : reports)
                if (r.mesh == c.name) err_series.push_back({r.model, r.times, r.temporal_l2});
            if (!loss_series.empty())
                write_text_file((fs::path(a.svg_dir) / (c.name + "_loss.svg")).string(),
                                svg_line_plot(loss_series, "training loss on " + c.name, "epoch", "total loss", true));
            write_text_file((fs::path(a.svg_dir) / (c.name + "_error.svg")).string(),
                            svg_line_plot(err_series, "error vs " + to_string(a.cfg.reference) + " CN on " + c.name, "t",
                                          "normalized L2 error", true));
        }
    }
}

// CLI11 only reads config files for the top-level app, so subcommand files are
// applied here. Keys may sit at top level or under a [subcommand] table.
void apply_config(CLI::App* sub, const std::string& path) {
    if (!fs::exists(path)) throw CLI::FileError::Missing(path);
    for (const auto& item : CLI::ConfigTOML().from_file(path)) {
        if (item.name == "++" || item.name == "--") continue;
        if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == sub->get_name()))
            throw CLI::ConversionError("unexpected table '" + item.parents.front() + "'");
        CLI::Option* opt = sub->get_option_no_throw("--" + item.name);
        if (opt == nullptr || !opt->get_configurable()) throw CLI::ConversionError("unknown key '" + item.name + "'");
        if (opt->count() > 0) continue;
        std::vector<std::string> inputs = item.inputs;
        if (opt->get_type_size() == 0) {
            if (inputs.size() != 1 || (inputs[0] != "true" && inputs[0] != "false"))
                throw CLI::ConversionError("flag '" + item.name + "' needs true or false");
            if (inputs[0] == "false") continue;
            inputs = {"true"};
        }
        opt->add_result(inputs);
        opt->run_callback();
    }
}

int run_verify_cmd(const VerifyOptions& o) {
    bool all = true;
    for (const auto& r : run_verify(o)) {
        std::printf("%s  %-45s %s (%.2fs)\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str(), r.seconds);
        all = all && r.passed;
    }
    return all ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
    // training frees and reallocates large tape buffers every step; keep them on the heap
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
#endif
    CLI::App app{"Diffusion on irregular meshes: mesh generation, reference solvers, physics-informed training"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    bool show = false;

    GenMeshArgs gm;
    auto* gen = app.add_subcommand("gen-mesh", "generate a physically driven ellipsoid mesh sample");
    gen->add_option("--n", gm.mesh.n, "number of nodes");
    gen->add_option("--k", gm.mesh.k, "kNN neighbours");
    gen->add_option("--seed", gm.mesh.seed, "sampling seed");
    gen->add_option("--boundary-tol", gm.mesh.boundary_tolerance, "radial band for boundary nodes");
    gen->add_option("--wound-radius", gm.mesh.wound_radius, "angular radius of the initial wound (rad)");
    gen->add_option("--rebuild-every", gm.mesh.rebuild_every, "kNN refresh cadence (steps)");
    gen->add_option("--diffusivity", gm.mesh.diffusivity, "diffusivity written to the sample");
    gen->add_option("--steps", gm.healing.n_steps, "healing steps");
    gen->add_option("--dt", gm.healing.dt, "healing time step");
    gen->add_option("--displacement-scale", gm.healing.displacement_scale, "stress displacement scale");
    gen->add_option("--out", gm.out, "output sample JSON");
    gen->add_option("--wound-csv", gm.wound_csv, "optional wound-size CSV");

    IngestArgs in;
    auto* ing = app.add_subcommand("ingest", "convert an OBJ/PLY mesh to a graph sample");
    ing->add_option("--in", in.in, "input mesh (.obj or .ply)");
    ing->add_option("--n", in.n, "number of sampled vertices");
    ing->add_option("--k", in.k, "kNN neighbours");
    ing->add_option("--seed", in.seed, "subsampling seed");
    ing->add_option("--out", in.out, "output sample JSON");

    SolveArgs sv;
    auto* sol = app.add_subcommand("solve-cn", "Crank-Nicolson reference trajectory");
    sol->add_option("--sample", sv.sample, "input sample JSON");
    sol->add_option("--variant", sv.variant, "irregular (1/d) or pde (1/d^2)");
    sol->add_option("--T", sv.T, "final time");
    sol->add_option("--nt", sv.n_t, "time steps");
    sol->add_option("--boundary-value", sv.boundary_value, "Dirichlet value");
    sol->add_flag("--unnormalized", sv.unnormalized, "use D_w - A_w instead of the degree-normalized operator");
    sol->add_option("--out", sv.out, "output trajectory JSON");

    FdArgs fd;
    auto* fdc = app.add_subcommand("fd-demo", "explicit finite differences on a uniform or perturbed grid");
    fdc->add_option("--nx", fd.nx, "grid points in x");
    fdc->add_option("--ny", fd.ny, "grid points in y");
    fdc->add_option("--perturb", fd.perturb, "jitter as a fraction of the spacing");
    fdc->add_option("--seed", fd.seed, "jitter seed");
    fdc->add_option("--steps", fd.steps, "time steps");
    fdc->add_option("--D", fd.D, "diffusivity");
    fdc->add_option("--dt", fd.dt, "time step (0 = CFL step of the mean spacing)");
    fdc->add_option("--out-csv", fd.out_csv, "CSV of step, max_u, diverged");

    TrainArgs tr;
    tr.cfg.T = 1.0;
    auto* trn = app.add_subcommand("train", "physics-informed training of one model on one sample");
    trn->add_option("--sample", tr.sample, "input sample JSON");
    trn->add_option("--model", tr.model, "ocgnn, gcn or mlp");
    add_train_options(trn, tr.cfg);
    trn->add_option("--out", tr.out, "output parameter JSON");
    trn->add_option("--loss-csv", tr.loss_csv, "per-epoch loss CSV");
    trn->add_option("--loss-svg", tr.loss_svg, "loss curve SVG");
    trn->add_option("--rollout-out", tr.rollout_out, "trajectory JSON of the trained model over [0, train-T]");
    trn->add_option("--rollout-nt", tr.rollout_nt, "steps of that rollout");

    BenchArgs bn;
    auto* ben = app.add_subcommand("benchmark", "train, roll out and compare models with a CN reference");
    ben->add_option("--samples", bn.samples, "sample JSON files");
    ben->add_option("--models", bn.cfg.models, "ocgnn gcn mlp untrained-<kind> cn-irregular cn-pde params:<file>");
    ben->add_option("--reference", bn.reference, "reference CN variant");
    ben->add_option("--T", bn.cfg.T, "evaluation horizon");
    ben->add_option("--nt", bn.cfg.n_t, "evaluation steps");
    add_train_options(ben, bn.cfg.train);
    ben->add_option("--out", bn.out, "metrics CSV");
    ben->add_option("--loss-csv", bn.loss_csv, "per-epoch loss CSV");
    ben->add_option("--temporal-csv", bn.temporal_csv, "per-step error CSV");
    ben->add_option("--svg-dir", bn.svg_dir, "directory for loss and error plots");
    ben->add_flag("--runtime", bn.runtime, "add a runtime column (breaks byte-identical output)");

    VerifyOptions vo;
    auto* ver = app.add_subcommand("verify", "run the invariant suite");
    ver->add_option("--seed", vo.seed, "seed of the random instances");
    ver->add_option("--trials", vo.trials, "random graphs per structural check");

    std::string config_file;
    for (auto* sub : {gen, ing, sol, fdc, trn, ben, ver}) {
        sub->add_option("--config", config_file, "TOML-style key = value file; command-line values win")->configurable(false);
        sub->add_flag("--show-config", show, "print every option with its current value and exit")->configurable(false);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    CLI::App* chosen = app.get_subcommands().front();
    try {
        if (!config_file.empty()) apply_config(chosen, config_file);
    } catch (const CLI::Error& e) {
        std::fprintf(stderr, "error in %s: %s\n", config_file.c_str(), e.what());
        return 1;
    }
    if (show) {
        std::cout << chosen->config_to_str(true, true);
        return 0;
    }
    try {
        if (chosen == gen) run_gen_mesh(gm);
        else if (chosen == ing) run_ingest(in);
        else if (chosen == sol) run_solve(sv);
        else if (chosen == fdc) run_fd(fd);
        else if (chosen == trn) run_train(tr);
        else if (chosen == ben) run_bench(bn);
        else if (chosen == ver) return run_verify_cmd(vo);
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
