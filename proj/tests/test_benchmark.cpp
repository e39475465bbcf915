#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>

#include <meshdiff/benchmark.hpp>

#include "test_support.hpp"

using namespace meshdiff;
using namespace meshdiff::testing;

namespace {

BenchmarkCase small_case(std::uint64_t seed = 3) {
    Rng rng(seed);
    return {"rand" + std::to_string(seed), random_graph_sample(rng, 12, 10)};
}

BenchmarkConfig fast_config() {
    BenchmarkConfig cfg;
    cfg.T = 0.5;
    cfg.n_t = 20;
    cfg.train.epochs = 5;
    cfg.train.arch.hidden = 8;
    cfg.train.arch.layers = 2;
    return cfg;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Benchmark, ReferenceSelfComparisonIsZero) {
    auto cfg = fast_config();
    cfg.models = {"cn-irregular"};
    const auto r = run_benchmark({small_case()}, cfg);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].mae, 0.0);
    EXPECT_EQ(r[0].mse, 0.0);
    EXPECT_EQ(r[0].l2_norm, 0.0);
    for (double e : r[0].temporal_l2) EXPECT_EQ(e, 0.0);
    EXPECT_EQ(r[0].reference, "cn-irregular");
}

TEST(Benchmark, OtherVariantAndUntrainedModelDiffer) {
    auto cfg = fast_config();
    cfg.models = {"cn-pde", "untrained-ocgnn", "untrained-gcn", "untrained-mlp"};
    for (const auto& r : run_benchmark({small_case()}, cfg)) {
        EXPECT_GT(r.mae, 0.0) << r.model;
        EXPECT_GT(r.mse, 0.0) << r.model;
        EXPECT_GT(r.l2_norm, 0.0) << r.model;
        EXPECT_GT(r.pde_residual_time, 0.0) << r.model;
        EXPECT_DOUBLE_EQ(r.l2_norm, r.temporal_l2.back()) << r.model;
    }
}

TEST(Benchmark, MetricsMatchDirectComputation) {
    auto cfg = fast_config();
    cfg.models = {"cn-pde"};
    const auto c = small_case();
    const auto r = run_benchmark({c}, cfg).at(0);
    const auto pred = cn_rollout(c.graph, CnVariant::pde, cfg.T, cfg.n_t);
    const auto ref = cn_rollout(c.graph, CnVariant::irregular, cfg.T, cfg.n_t);
    EXPECT_EQ(r.mae, mae(pred.final_state(), ref.final_state()));
    EXPECT_EQ(r.pde_residual_time, pde_residual_time(pred, c.graph, CnVariant::irregular));
}

TEST(Benchmark, IdenticalCsvBytesAcrossRuns) {
    auto cfg = fast_config();
    cfg.models = {"ocgnn", "gcn", "mlp", "cn-pde"};
    std::string loss_a, loss_b;
    BenchmarkSink sa{nullptr, [&](const std::string& m, const std::string& k, const LossBreakdown& b) { loss_a += loss_csv_row(m, k, b); }};
    BenchmarkSink sb{nullptr, [&](const std::string& m, const std::string& k, const LossBreakdown& b) { loss_b += loss_csv_row(m, k, b); }};
    const auto a = run_benchmark({small_case(3), small_case(4)}, cfg, sa);
    const auto b = run_benchmark({small_case(3), small_case(4)}, cfg, sb);
    EXPECT_EQ(metrics_csv(a), metrics_csv(b));
    EXPECT_EQ(temporal_error_csv(a), temporal_error_csv(b));
    EXPECT_EQ(loss_a, loss_b);
    EXPECT_EQ(count_lines(loss_a), 2u * 3u * 5u);
}

TEST(Benchmark, CsvLayout) {
    auto cfg = fast_config();
    cfg.models = {"cn-irregular", "untrained-gcn"};
    const auto r = run_benchmark({small_case()}, cfg);
    const auto csv = metrics_csv(r);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "mesh,model,reference,mae,mse,l2_norm,pde_residual_time");
    EXPECT_EQ(count_lines(csv), 3u);
    EXPECT_EQ(csv.find("runtime"), std::string::npos);
    const auto timed = metrics_csv(r, true);
    EXPECT_NE(timed.find(",runtime_s\n"), std::string::npos);
    EXPECT_EQ(count_lines(temporal_error_csv(r)), 1u + 2u * 21u);
    EXPECT_EQ(loss_csv_header().substr(0, 22), "mesh,model,epoch,total");
}

TEST(Benchmark, ReportsStreamBeforeFailure) {
    auto cfg = fast_config();
    cfg.models = {"cn-irregular", "params:/nonexistent/model.json"};
    std::vector<std::string> seen;
    BenchmarkSink sink{[&](const MetricsReport& r) { seen.push_back(r.model); }, nullptr};
    EXPECT_ANY_THROW(run_benchmark({small_case()}, cfg, sink));
    EXPECT_EQ(seen, (std::vector<std::string>{"cn-irregular"}));
}

TEST(Benchmark, LoadsSavedParameters) {
    auto cfg = fast_config();
    ModelArch arch = cfg.train.arch;
    const auto params = init_params(arch, 77);
    const auto path = (std::filesystem::temp_directory_path() / "meshdiff_bench_params.json").string();
    write_text_file(path, to_json(params));
    cfg.models = {"params:" + path};
    const auto loaded = run_benchmark({small_case()}, cfg).at(0);
    const auto c = small_case();
    const auto direct = euler_rollout(c.graph, params, cfg.T, cfg.n_t).nodes;
    EXPECT_EQ(loaded.mae, mae(direct.final_state(), cn_rollout(c.graph, CnVariant::irregular, cfg.T, cfg.n_t).final_state()));
    std::remove(path.c_str());
}

TEST(Benchmark, RejectsUnknownModelAndEmptyGraph) {
    auto cfg = fast_config();
    cfg.models = {"transformer"};
    EXPECT_THROW(run_benchmark({small_case()}, cfg), ValidationError);
    cfg.models = {"cn-irregular"};
    auto c = small_case();
    c.graph.boundary_mask.assign(c.graph.num_nodes(), true);
    EXPECT_THROW(run_benchmark({c}, cfg), ValidationError);
}

TEST(Svg, ContainsOnePolylinePerSeries) {
    const std::vector<PlotSeries> s{{"a", {0, 1, 2}, {1, 0.1, 0.01}}, {"b<c", {0, 1, 2}, {2, 1, 0.5}}};
    const auto svg = svg_line_plot(s, "loss", "epoch", "total", true);
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
    std::size_t count = 0;
    for (std::size_t p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++count;
    EXPECT_EQ(count, 2u);
    EXPECT_NE(svg.find("b&lt;c"), std::string::npos);
    EXPECT_NE(svg.find("log10 total"), std::string::npos);
    EXPECT_EQ(svg, svg_line_plot(s, "loss", "epoch", "total", true));
}

TEST(Svg, SkipsNonPositiveOnLogAxis) {
    const std::vector<PlotSeries> s{{"z", {0, 1}, {0.0, 1.0}}};
    const auto svg = svg_line_plot(s, "t", "x", "y", true);
    const auto p = svg.find("points=\"");
    const auto q = svg.find('"', p + 8);
    EXPECT_EQ(svg.substr(p + 8, q - p - 8).find(' '), std::string::npos);
    EXPECT_THROW(svg_line_plot({{"bad", {0, 1}, {1}}}, "t", "x", "y"), ValidationError);
}
