#pragma once

// Learned node/edge dynamics on graphs: the OCGNN with its even/odd edge
// channels, a GCN baseline and a per-node MLP baseline, plus explicit Euler
// rollout of any of them.

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "meshdiff/autodiff.hpp"
#include "meshdiff/graph.hpp"
#include "meshdiff/incidence.hpp"
#include "meshdiff/json_io.hpp"
#include "meshdiff/laplacian.hpp"
#include "meshdiff/trajectory.hpp"

namespace meshdiff {

inline const std::vector<double>& default_omegas() {
    static const std::vector<double> w{1.0, 2.0, 4.0, 8.0, 16.0};
    return w;
}

/// Interleaved [sin a, cos a] with a = w t / (1 + w t) for each frequency w.
inline std::vector<double> encode_time(double t, std::span<const double> omegas) {
    require(std::isfinite(t) && t >= 0.0, "encode_time: t must be finite and non-negative");
    require(!omegas.empty(), "encode_time: no frequencies");
    std::vector<double> out(2 * omegas.size());
    for (std::size_t k = 0; k < omegas.size(); ++k) {
        const double w = omegas[k];
        require(std::isfinite(w) && w > 0.0, "encode_time: frequencies must be positive");
        const double a = w * t / (1.0 + w * t);
        out[2 * k] = std::sin(a);
        out[2 * k + 1] = std::cos(a);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parameters

enum class ModelKind { ocgnn, gcn, mlp };

inline std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::ocgnn: return "ocgnn";
        case ModelKind::gcn: return "gcn";
        case ModelKind::mlp: return "mlp";
    }
    return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "ocgnn") return ModelKind::ocgnn;
    if (s == "gcn") return ModelKind::gcn;
    if (s == "mlp") return ModelKind::mlp;
    throw ValidationError("unknown model '" + s + "' (expected ocgnn, gcn or mlp)");
}

struct ModelArch {
    ModelKind kind = ModelKind::ocgnn;
    std::size_t hidden = 32;
    std::size_t layers = 3;
    std::vector<double> omegas = default_omegas();
};

struct ParamBlock {
    std::string name;
    std::size_t rows = 0, cols = 0;
    std::size_t offset = 0;
    std::size_t fan_in = 1;
};

struct ModelParams {
    ModelArch arch;
    std::vector<ParamBlock> blocks;
    std::vector<double> values;

    std::size_t size() const { return values.size(); }

    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < blocks.size(); ++i)
            if (blocks[i].name == name) return i;
        throw ValidationError("no parameter block named '" + name + "'");
    }

    ad::Mat matrix(const std::string& name) const {
        const auto& b = blocks[index_of(name)];
        return Eigen::Map<const ad::Mat>(values.data() + b.offset, static_cast<ad::Index>(b.rows),
                                         static_cast<ad::Index>(b.cols));
    }

    void set(const std::string& name, const ad::Mat& m) {
        const auto& b = blocks[index_of(name)];
        require(static_cast<std::size_t>(m.rows()) == b.rows && static_cast<std::size_t>(m.cols()) == b.cols,
                "shape mismatch setting block '" + name + "'");
        std::copy(m.data(), m.data() + m.size(), values.begin() + static_cast<std::ptrdiff_t>(b.offset));
    }
};

namespace model_detail {

struct LayoutBuilder {
    std::vector<ParamBlock> blocks;
    std::size_t total = 0;
    void add(std::string name, std::size_t rows, std::size_t cols, std::size_t fan_in) {
        blocks.push_back({std::move(name), rows, cols, total, fan_in});
        total += rows * cols;
    }
};

inline std::string layer(std::size_t l, const char* part) { return "l" + std::to_string(l) + "." + part; }

}  // namespace model_detail

inline std::vector<ParamBlock> parameter_layout(const ModelArch& a) {
    require(a.hidden >= 1 && a.layers >= 1, "hidden width and layer count must be positive");
    for (double w : a.omegas) require(std::isfinite(w) && w > 0.0, "frequencies must be positive");
    require(!a.omegas.empty(), "at least one time frequency is required");
    using model_detail::layer;
    model_detail::LayoutBuilder b;
    const std::size_t H = a.hidden, T = 2 * a.omegas.size();
    switch (a.kind) {
        case ModelKind::ocgnn:
            for (std::size_t l = 0; l < a.layers; ++l) {
                const std::size_t d = l == 0 ? 1 : H;
                const std::size_t fan1 = 3 * d + 4 + T;
                b.add(layer(l, "n2e.src"), d, H, fan1);
                b.add(layer(l, "n2e.dst"), d, H, fan1);
                b.add(layer(l, "n2e.diff"), d, H, fan1);
                b.add(layer(l, "n2e.len"), 1, H, fan1);
                b.add(layer(l, "n2e.dir"), 3, H, fan1);
                b.add(layer(l, "n2e.time"), T, H, fan1);
                b.add(layer(l, "n2e.bias"), 1, H, fan1);
                b.add(layer(l, "e2e.self"), H, H, 2 * H);
                b.add(layer(l, "e2e.agg"), H, H, 2 * H);
                b.add(layer(l, "e2e.bias"), 1, H, 2 * H);
                b.add(layer(l, "e2n.node"), d, H, d + 2 * H);
                b.add(layer(l, "e2n.sum"), H, H, d + 2 * H);
                b.add(layer(l, "e2n.div"), H, H, d + 2 * H);
                b.add(layer(l, "e2n.bias"), 1, H, d + 2 * H);
            }
            b.add("head.f.w", H, 1, H);
            b.add("head.f.b", 1, 1, H);
            b.add("head.g.w", H, 1, H);
            b.add("anchor.alpha", 1, 1, 1);
            break;
        case ModelKind::gcn:
        case ModelKind::mlp: {
            const std::size_t d0 = (a.kind == ModelKind::gcn ? 1 : 4) + T;
            for (std::size_t l = 0; l < a.layers; ++l) {
                const std::size_t d = l == 0 ? d0 : H;
                b.add(layer(l, "w"), d, H, d);
                b.add(layer(l, "b"), 1, H, d);
            }
            b.add("head.f.w", H, 1, H);
            b.add("head.f.b", 1, 1, H);
            break;
        }
    }
    return b.blocks;
}

inline std::size_t layout_size(const std::vector<ParamBlock>& blocks) {
    return blocks.empty() ? 0 : blocks.back().offset + blocks.back().rows * blocks.back().cols;
}

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; the anchor gain starts at 1.
inline ModelParams init_params(const ModelArch& arch, std::uint64_t seed) {
    ModelParams p{arch, parameter_layout(arch), {}};
    p.values.resize(layout_size(p.blocks));
    Rng rng(seed);
    for (const auto& b : p.blocks) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(b.fan_in));
        for (std::size_t i = 0; i < b.rows * b.cols; ++i) p.values[b.offset + i] = rng.uniform(-bound, bound);
    }
    if (arch.kind == ModelKind::ocgnn) p.values[p.blocks[p.index_of("anchor.alpha")].offset] = 1.0;
    return p;
}

inline ModelParams zero_params(const ModelArch& arch) {
    ModelParams p{arch, parameter_layout(arch), {}};
    p.values.assign(layout_size(p.blocks), 0.0);
    return p;
}

inline std::vector<double> flatten(const ModelParams& p) { return p.values; }

inline ModelParams unflatten(const ModelParams& like, std::vector<double> flat) {
    require(flat.size() == like.size(), "flat parameter vector has length " + std::to_string(flat.size()) +
                                            ", expected " + std::to_string(like.size()));
    ModelParams p = like;
    p.values = std::move(flat);
    return p;
}

inline constexpr int kModelFormatVersion = 1;

inline std::string to_json(const ModelParams& p) {
    nlohmann::ordered_json j;
    j["format"] = "meshdiff-model";
    j["version"] = kModelFormatVersion;
    j["kind"] = to_string(p.arch.kind);
    j["hidden"] = p.arch.hidden;
    j["layers"] = p.arch.layers;
    j["omegas"] = p.arch.omegas;
    auto blocks = nlohmann::ordered_json::array();
    for (const auto& b : p.blocks) blocks.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
    j["blocks"] = std::move(blocks);
    j["values"] = p.values;
    return j.dump() + "\n";
}

inline ModelParams params_from_json(const std::string& text) {
    const auto j = json_detail::parse(text);
    try {
        require(j.value("format", "") == "meshdiff-model", "not a meshdiff model file");
        const int version = j.at("version").get<int>();
        require(version == kModelFormatVersion, "unsupported model format version " + std::to_string(version));
        ModelArch a;
        a.kind = parse_model_kind(j.at("kind").get<std::string>());
        a.hidden = j.at("hidden").get<std::size_t>();
        a.layers = j.at("layers").get<std::size_t>();
        a.omegas = j.at("omegas").get<std::vector<double>>();
        ModelParams p{a, parameter_layout(a), {}};
        const auto& blocks = j.at("blocks");
        require(blocks.size() == p.blocks.size(), "block list does not match the architecture");
        for (std::size_t i = 0; i < blocks.size(); ++i)
            require(blocks[i].at("name").get<std::string>() == p.blocks[i].name &&
                        blocks[i].at("rows").get<std::size_t>() == p.blocks[i].rows &&
                        blocks[i].at("cols").get<std::size_t>() == p.blocks[i].cols,
                    "block " + std::to_string(i) + " does not match the architecture");
        p.values = json_detail::read_doubles(j.at("values"), "values");
        require(p.values.size() == layout_size(p.blocks), "parameter count does not match the architecture");
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed model file: ") + e.what());
    }
}

/// Parameter blocks recorded on a tape, as trainable leaves or constants.
struct BoundParams {
    const ModelParams* params = nullptr;
    std::vector<ad::Var> vars;

    ad::Var operator[](const std::string& name) const { return vars[params->index_of(name)]; }
};

inline BoundParams bind_params(ad::Tape& tape, const ModelParams& p, bool trainable) {
    BoundParams b{&p, {}};
    b.vars.reserve(p.blocks.size());
    for (const auto& blk : p.blocks) {
        ad::Mat m = p.matrix(blk.name);
        b.vars.push_back(trainable ? tape.parameter(std::move(m)) : tape.constant(std::move(m)));
    }
    return b;
}

/// Blocks as slices of a single 1 x size() value, for checks over the flat vector.
inline BoundParams bind_flat(ad::Var flat, const ModelParams& p) {
    require(flat.rows() == 1 && static_cast<std::size_t>(flat.cols()) == p.size(), "flat parameter value has the wrong length");
    BoundParams b{&p, {}};
    for (const auto& blk : p.blocks) b.vars.push_back(ad::slice(flat, blk.offset, blk.rows, blk.cols));
    return b;
}

/// Gradient of a bound parameter set, flattened in layout order.
inline std::vector<double> flat_gradient(const ad::Tape& tape, const BoundParams& b) {
    std::vector<double> g(b.params->size());
    for (std::size_t i = 0; i < b.vars.size(); ++i) {
        const ad::Mat gi = tape.grad(b.vars[i]);
        std::copy(gi.data(), gi.data() + gi.size(), g.begin() + static_cast<std::ptrdiff_t>(b.params->blocks[i].offset));
    }
    return g;
}

// ---------------------------------------------------------------------------
// Graph context

/// Per-graph quantities shared by every forward pass.
/// Per-edge conductance k_e w_e with k_e the mean of D_i / deg_i over both
/// endpoints.
inline std::vector<double> flux_coefficients(const GraphSample& g) {
    const auto op = generator_diffusion_operator(g);
    std::vector<double> out(g.num_edges());
    for (std::size_t e = 0; e < out.size(); ++e)
        out[e] = 0.5 * (op.row_scale[g.edges[e].src] + op.row_scale[g.edges[e].dst]) * g.weights[e];
    return out;
}

/// Fick flux g_e = k_e w_e (f_dst - f_src); B^T g equals D L_gen f when
/// D_i / deg_i is uniform.
inline std::vector<double> diffusive_flux(std::span<const Edge> edges, std::span<const double> coeff, std::span<const double> f) {
    std::vector<double> out(edges.size());
    for (std::size_t e = 0; e < out.size(); ++e) out[e] = coeff[e] * (f[edges[e].dst] - f[edges[e].src]);
    return out;
}

inline std::vector<double> diffusive_flux(const GraphSample& g, std::span<const double> f) {
    require(f.size() == g.num_nodes(), "diffusive_flux: field length differs from node count");
    return diffusive_flux(g.edges, flux_coefficients(g), f);
}

struct GraphContext {
    std::size_t n = 0, m = 0;
    std::vector<std::size_t> src, dst;
    ad::Mat length;     // m x 1
    ad::Mat direction;  // m x 3, unit vector from dst to src
    std::vector<double> inv_incident;
    SparseMatrix diffusion;  // diag(D) L_gen
    SparseMatrix gcn_adjacency;
    IncidenceMatrix incidence;
    std::vector<bool> boundary;
    ad::Mat positions;  // n x 3
};

inline GraphContext make_context(const GraphSample& g) {
    const std::size_t n = g.num_nodes(), m = g.num_edges();
    require(g.diffusivity.size() == n && g.boundary_mask.size() == n, "graph field lengths differ from node count");
    validate_edges(g.edges, n);
    GraphContext c;
    c.n = n;
    c.m = m;
    c.src.resize(m);
    c.dst.resize(m);
    c.length.resize(static_cast<ad::Index>(m), 1);
    c.direction.resize(static_cast<ad::Index>(m), 3);
    std::vector<double> count(n, 0.0);
    for (std::size_t e = 0; e < m; ++e) {
        const auto [s, d] = g.edges[e];
        c.src[e] = s;
        c.dst[e] = d;
        const Vec3 v = g.positions[s] - g.positions[d];
        const double len = norm(v);
        c.length(static_cast<ad::Index>(e), 0) = len;
        for (int k = 0; k < 3; ++k) c.direction(static_cast<ad::Index>(e), k) = len > 0.0 ? v[static_cast<std::size_t>(k)] / len : 0.0;
        count[s] += 1.0;
        count[d] += 1.0;
    }
    c.inv_incident.resize(n);
    for (std::size_t i = 0; i < n; ++i) c.inv_incident[i] = count[i] > 0.0 ? 1.0 / count[i] : 0.0;
    c.diffusion = generator_diffusion_operator(g).matrix();

    // D~^-1/2 (A + I) D~^-1/2 on the unweighted connectivity
    std::vector<double> isq(n);
    for (std::size_t i = 0; i < n; ++i) isq[i] = 1.0 / std::sqrt(count[i] + 1.0);
    std::vector<Triplet> t;
    t.reserve(2 * m + n);
    for (std::size_t i = 0; i < n; ++i) t.push_back({i, i, isq[i] * isq[i]});
    for (std::size_t e = 0; e < m; ++e) {
        const double w = isq[c.src[e]] * isq[c.dst[e]];
        t.push_back({c.src[e], c.dst[e], w});
        t.push_back({c.dst[e], c.src[e], w});
    }
    c.gcn_adjacency = SparseMatrix::from_triplets(n, n, std::move(t));
    c.incidence = build_incidence(g.edges, n);
    c.boundary = g.boundary_mask;
    c.positions.resize(static_cast<ad::Index>(n), 3);
    for (std::size_t i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k) c.positions(static_cast<ad::Index>(i), k) = g.positions[i][static_cast<std::size_t>(k)];
    return c;
}

// ---------------------------------------------------------------------------
// Forward maps on a tape

inline ad::Mat column(std::span<const double> v) {
    ad::Mat m(static_cast<ad::Index>(v.size()), 1);
    for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<ad::Index>(i), 0) = v[i];
    return m;
}

inline std::vector<double> to_vector(const ad::Mat& m) { return {m.data(), m.data() + m.size()}; }

inline ad::Mat time_row(double t, std::span<const double> omegas) {
    const auto gamma = encode_time(t, omegas);
    ad::Mat r(1, static_cast<ad::Index>(gamma.size()));
    for (std::size_t k = 0; k < gamma.size(); ++k) r(0, static_cast<ad::Index>(k)) = gamma[k];
    return r;
}

struct NodeEdgeRates {
    ad::Var f_dot;  // n x 1
    ad::Var g_dot;  // m x 1
};

inline void check_field(const GraphContext& c, ad::Var f) {
    require(static_cast<std::size_t>(f.rows()) == c.n && f.cols() == 1,
            "node field has shape " + std::to_string(f.rows()) + "x" + std::to_string(f.cols()) + ", expected " +
                std::to_string(c.n) + "x1");
}

inline void check_kind(const BoundParams& p, ModelKind k) {
    require(p.params->arch.kind == k, "parameters belong to a " + to_string(p.params->arch.kind) + " model, not " + to_string(k));
}

/// Node -> edge -> edge -> node layers. Each edge is encoded in both
/// orientations; the symmetric part z and antisymmetric part o of the two
/// encodings carry orientation-free and orientation-carrying information, so
/// f_dot is invariant and g_dot flips sign when an edge is reversed.
inline NodeEdgeRates ocgnn_forward(ad::Tape& tape, const GraphContext& c, const BoundParams& p, ad::Var f, double t) {
    using namespace ad;
    using model_detail::layer;
    check_kind(p, ModelKind::ocgnn);
    check_field(c, f);
    const auto& arch = p.params->arch;
    const Var gamma = tape.constant(time_row(t, arch.omegas));
    const Var len = tape.constant(c.length);
    const Var dir = tape.constant(c.direction);

    Var x = f, o_last = f;
    for (std::size_t l = 0; l < arch.layers; ++l) {
        const Var P = matmul(x, p[layer(l, "n2e.src")]);
        const Var Q = matmul(x, p[layer(l, "n2e.dst")]);
        const Var C = matmul(x, p[layer(l, "n2e.diff")]);
        const Var even_geo = matmul(len, p[layer(l, "n2e.len")]);
        const Var odd = add(sub(gather_rows(C, c.src), gather_rows(C, c.dst)), matmul(dir, p[layer(l, "n2e.dir")]));
        const Var trow = add(matmul(gamma, p[layer(l, "n2e.time")]), p[layer(l, "n2e.bias")]);
        const Var base_f = add(add(gather_rows(P, c.src), gather_rows(Q, c.dst)), even_geo);
        const Var base_r = add(add(gather_rows(P, c.dst), gather_rows(Q, c.src)), even_geo);
        const Var a = tanh(add_row(add(base_f, odd), trow));
        const Var r = tanh(add_row(sub(base_r, odd), trow));
        const Var z = scalar_mul(add(a, r), 0.5);
        const Var o = scalar_mul(sub(a, r), 0.5);

        // edges meet through the mean of their shared endpoints
        const Var node_mean = scale_rows(add(scatter_add_rows(z, c.src, c.n), scatter_add_rows(z, c.dst, c.n)), c.inv_incident);
        const Var mixed = matmul(node_mean, p[layer(l, "e2e.agg")]);  // (m_src + m_dst) W = m_src W + m_dst W
        const Var agg = add(gather_rows(mixed, c.src), gather_rows(mixed, c.dst));
        const Var z2 = tanh(add_row(add(matmul(z, p[layer(l, "e2e.self")]), agg), p[layer(l, "e2e.bias")]));
        const Var o2 = mul(o, z2);

        const Var total = add(scatter_add_rows(z2, c.src, c.n), scatter_add_rows(z2, c.dst, c.n));
        const Var div = sub(scatter_add_rows(o2, c.src, c.n), scatter_add_rows(o2, c.dst, c.n));
        x = tanh(add_row(add(matmul(x, p[layer(l, "e2n.node")]),
                             add(matmul(total, p[layer(l, "e2n.sum")]), matmul(div, p[layer(l, "e2n.div")]))),
                         p[layer(l, "e2n.bias")]));
        o_last = o2;
    }
    const Var anchor = scale(sparse_matmul(c.diffusion, f), p["anchor.alpha"]);
    const Var f_dot = add(add_row(matmul(x, p["head.f.w"]), p["head.f.b"]), anchor);
    const Var g_dot = matmul(o_last, p["head.g.w"]);
    return {f_dot, g_dot};
}

inline ad::Var dense_stack_head(const BoundParams& p, ad::Var x, const SparseMatrix* propagate) {
    using namespace ad;
    using model_detail::layer;
    for (std::size_t l = 0; l < p.params->arch.layers; ++l) {
        Var lin = matmul(x, p[layer(l, "w")]);
        if (propagate) lin = sparse_matmul(*propagate, lin);
        x = tanh(add_row(lin, p[layer(l, "b")]));
    }
    return add_row(matmul(x, p["head.f.w"]), p["head.f.b"]);
}

inline ad::Mat broadcast_rows(const ad::Mat& row, std::size_t n) { return row.replicate(static_cast<ad::Index>(n), 1); }

/// h <- tanh(A_hat h W + b) from [f, gamma(t)], then a linear head.
inline ad::Var gcn_forward(ad::Tape& tape, const GraphContext& c, const BoundParams& p, ad::Var f, double t) {
    check_kind(p, ModelKind::gcn);
    check_field(c, f);
    const ad::Var gamma = tape.constant(broadcast_rows(time_row(t, p.params->arch.omegas), c.n));
    return dense_stack_head(p, ad::concat_cols({f, gamma}), &c.gcn_adjacency);
}

/// Independent per-node network on [position, u0, gamma(t)].
inline ad::Var mlp_forward(ad::Tape& tape, const ad::Mat& positions, std::span<const double> u0, const BoundParams& p,
                           double t) {
    check_kind(p, ModelKind::mlp);
    require(positions.cols() == 3 && static_cast<std::size_t>(positions.rows()) == u0.size(),
            "positions and u0 lengths differ");
    ad::Mat in(positions.rows(), 4);
    in.leftCols(3) = positions;
    in.col(3) = column(u0);
    const ad::Var x = ad::concat_cols({tape.constant(std::move(in)),
                                       tape.constant(broadcast_rows(time_row(t, p.params->arch.omegas), u0.size()))});
    return dense_stack_head(p, x, nullptr);
}

/// Rates of any model kind on a tape. g_dot is a 0-column placeholder for
/// models without an edge head.
inline NodeEdgeRates model_rates(ad::Tape& tape, const GraphContext& c, const BoundParams& p, ad::Var f,
                                 std::span<const double> u0, double t) {
    switch (p.params->arch.kind) {
        case ModelKind::ocgnn: return ocgnn_forward(tape, c, p, f, t);
        case ModelKind::gcn: return {gcn_forward(tape, c, p, f, t), tape.constant(ad::Mat(c.m, 0))};
        case ModelKind::mlp: return {mlp_forward(tape, c.positions, u0, p, t), tape.constant(ad::Mat(c.m, 0))};
    }
    throw ValidationError("unknown model kind");
}

// ---------------------------------------------------------------------------
// Value-level wrappers

struct Rates {
    std::vector<double> f_dot;
    std::vector<double> g_dot;  // empty without an edge head
};

inline Rates evaluate_rates(const GraphContext& c, const ModelParams& params, std::span<const double> f,
                            std::span<const double> u0, double t) {
    ad::Tape tape;
    const BoundParams p = bind_params(tape, params, false);
    const auto r = model_rates(tape, c, p, tape.constant(column(f)), u0, t);
    return {to_vector(r.f_dot.value()), to_vector(r.g_dot.value())};
}

inline Rates ocgnn_forward(const GraphSample& g, std::span<const double> f, double t, const ModelParams& params) {
    check_kind(BoundParams{&params, {}}, ModelKind::ocgnn);
    return evaluate_rates(make_context(g), params, f, g.u0, t);
}

inline std::vector<double> gcn_forward(const GraphSample& g, std::span<const double> f, double t, const ModelParams& params) {
    check_kind(BoundParams{&params, {}}, ModelKind::gcn);
    return evaluate_rates(make_context(g), params, f, g.u0, t).f_dot;
}

inline std::vector<double> mlp_forward(std::span<const Vec3> positions, std::span<const double> u0, double t,
                                       const ModelParams& params) {
    ad::Tape tape;
    const BoundParams p = bind_params(tape, params, false);
    ad::Mat pos(static_cast<ad::Index>(positions.size()), 3);
    for (std::size_t i = 0; i < positions.size(); ++i)
        for (int k = 0; k < 3; ++k) pos(static_cast<ad::Index>(i), k) = positions[i][static_cast<std::size_t>(k)];
    return to_vector(mlp_forward(tape, pos, u0, p, t).value());
}

// ---------------------------------------------------------------------------
// Rollout

/// f + dt * f_dot with boundary nodes reset to the Dirichlet value.
inline std::vector<double> euler_step(std::span<const double> f, std::span<const double> f_dot, double dt,
                                      const std::vector<bool>& boundary, double boundary_value = 0.0) {
    require(f.size() == f_dot.size() && f.size() == boundary.size(), "euler_step: length mismatch");
    std::vector<double> out(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = boundary[i] ? boundary_value : f[i] + dt * f_dot[i];
    return out;
}

struct Rollout {
    Trajectory nodes;
    std::vector<std::vector<double>> edges;  // empty without an edge head
};

using RateFn = std::function<Rates(std::span<const double> f, std::span<const double> g, double t)>;

/// Explicit Euler from f0 = u0 (boundary pinned) and g0 the diffusive flux of f0.
inline Rollout euler_rollout(const GraphSample& graph, const RateFn& rates, double T, std::size_t n_t,
                             double boundary_value = 0.0) {
    require(T > 0.0 && std::isfinite(T), "T must be positive");
    require(n_t >= 1, "n_t must be at least 1");
    require(graph.u0.size() == graph.num_nodes() && graph.boundary_mask.size() == graph.num_nodes(),
            "graph field lengths differ");
    const double dt = T / static_cast<double>(n_t);
    std::vector<double> f = graph.u0;
    for (std::size_t i = 0; i < f.size(); ++i)
        if (graph.boundary_mask[i]) f[i] = boundary_value;
    std::vector<double> g = diffusive_flux(graph, f);

    Rollout out;
    out.nodes.times.push_back(0.0);
    out.nodes.states.push_back(f);
    bool has_edges = true;
    for (std::size_t k = 1; k <= n_t; ++k) {
        const double t = static_cast<double>(k - 1) * dt;
        const Rates r = rates(f, g, t);
        require(r.f_dot.size() == f.size(), "rate function returned a node field of the wrong length");
        if (k == 1) {
            has_edges = !r.g_dot.empty();
            if (has_edges) out.edges.push_back(g);
        }
        f = euler_step(f, r.f_dot, dt, graph.boundary_mask, boundary_value);
        if (has_edges) {
            require(r.g_dot.size() == g.size(), "rate function returned an edge field of the wrong length");
            for (std::size_t e = 0; e < g.size(); ++e) g[e] += dt * r.g_dot[e];
        }
        if (!all_finite(f) || !all_finite(g)) throw NumericalError("rollout diverged at step " + std::to_string(k));
        out.nodes.times.push_back(static_cast<double>(k) * dt);
        out.nodes.states.push_back(f);
        if (has_edges) out.edges.push_back(g);
    }
    return out;
}

inline Rollout euler_rollout(const GraphSample& graph, const ModelParams& params, double T, std::size_t n_t,
                             double boundary_value = 0.0) {
    const GraphContext c = make_context(graph);
    return euler_rollout(
        graph, [&](std::span<const double> f, std::span<const double>, double t) { return evaluate_rates(c, params, f, graph.u0, t); },
        T, n_t, boundary_value);
}

}  // namespace meshdiff
