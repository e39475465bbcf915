#pragma once

// Triangle meshes from OBJ / ASCII PLY and the conversion of a scanned
// surface into a GraphSample.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "meshdiff/core.hpp"
#include "meshdiff/graph.hpp"

namespace meshdiff {

using Face = std::array<std::size_t, 3>;
using Rotation = std::array<std::array<double, 3>, 3>;

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<Face> faces;
};

enum class MeshFormat { obj, ply };

inline MeshFormat mesh_format_from_path(const std::string& path) {
    const auto dot_pos = path.find_last_of('.');
    std::string ext = dot_pos == std::string::npos ? "" : path.substr(dot_pos + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == "obj") return MeshFormat::obj;
    if (ext == "ply") return MeshFormat::ply;
    throw ValidationError("unknown mesh format for '" + path + "' (expected .obj or .ply)");
}

namespace meshio_detail {

[[noreturn]] inline void fail(const std::string& what, std::size_t line) {
    throw ValidationError(what + " at line " + std::to_string(line));
}

inline std::vector<std::string_view> split(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        const std::size_t j = i;
        while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        if (i > j) out.push_back(s.substr(j, i - j));
    }
    return out;
}

inline double to_double(std::string_view tok, std::size_t line) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size() || !std::isfinite(v))
        fail("non-numeric coordinate '" + std::string(tok) + "'", line);
    return v;
}

inline long long to_integer(std::string_view tok, std::size_t line) {
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size()) fail("invalid index '" + std::string(tok) + "'", line);
    return v;
}

inline void add_polygon(TriangleMesh& m, const std::vector<std::size_t>& poly, std::size_t line) {
    if (poly.size() < 3) fail("face with fewer than 3 vertices", line);
    for (std::size_t v : poly)
        if (v >= m.vertices.size()) fail("index out of range", line);
    for (std::size_t i = 1; i + 1 < poly.size(); ++i) {
        const Face f{poly[0], poly[i], poly[i + 1]};
        if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) fail("degenerate face", line);
        m.faces.push_back(f);
    }
}

inline std::vector<std::string_view> lines_of(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view l = text.substr(start, end - start);
        if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
        out.push_back(l);
        if (end == text.size()) break;
        start = end + 1;
    }
    return out;
}

// Faces are collected first and attached after all vertices are known, so
// OBJ files may list faces before the vertices they reference.
inline TriangleMesh parse_obj(std::string_view text) {
    TriangleMesh m;
    std::vector<std::pair<std::vector<long long>, std::size_t>> raw_faces;
    const auto lines = lines_of(text);
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        const auto tok = split(lines[ln]);
        if (tok.empty() || tok[0][0] == '#') continue;
        if (tok[0] == "v") {
            if (tok.size() < 4) fail("vertex needs 3 coordinates", ln + 1);
            m.vertices.push_back({to_double(tok[1], ln + 1), to_double(tok[2], ln + 1), to_double(tok[3], ln + 1)});
        } else if (tok[0] == "f") {
            std::vector<long long> idx;
            for (std::size_t i = 1; i < tok.size(); ++i) idx.push_back(to_integer(tok[i].substr(0, tok[i].find('/')), ln + 1));
            raw_faces.push_back({std::move(idx), ln + 1});
        }
    }
    const auto nv = static_cast<long long>(m.vertices.size());
    for (const auto& [idx, line] : raw_faces) {
        std::vector<std::size_t> poly;
        for (long long i : idx) {
            const long long z = i > 0 ? i - 1 : nv + i;  // negative = relative to the end
            if (i == 0 || z < 0 || z >= nv) fail("index out of range", line);
            poly.push_back(static_cast<std::size_t>(z));
        }
        add_polygon(m, poly, line);
    }
    return m;
}

inline TriangleMesh parse_ply(std::string_view text) {
    const auto lines = lines_of(text);
    std::size_t ln = 0;
    auto next_tokens = [&]() {
        while (ln < lines.size()) {
            auto t = split(lines[ln++]);
            if (!t.empty() && t[0] != "comment" && t[0] != "obj_info") return t;
        }
        fail("unexpected end of file", ln);
    };

    struct Element {
        std::string name;
        std::size_t count = 0;
        std::vector<std::string> properties;
        bool has_list = false;
    };
    auto t = next_tokens();
    if (t.size() != 1 || t[0] != "ply") fail("malformed header: missing 'ply'", ln);
    t = next_tokens();
    if (t.size() < 2 || t[0] != "format") fail("malformed header: missing format", ln);
    if (t[1] != "ascii") fail("malformed header: only ASCII PLY is supported", ln);

    std::vector<Element> elements;
    while (true) {
        t = next_tokens();
        if (t[0] == "end_header") break;
        if (t[0] == "element") {
            if (t.size() != 3) fail("malformed header: element", ln);
            const long long c = to_integer(t[2], ln);
            if (c < 0) fail("malformed header: negative element count", ln);
            elements.push_back({std::string(t[1]), static_cast<std::size_t>(c), {}, false});
        } else if (t[0] == "property") {
            if (elements.empty()) fail("malformed header: property before element", ln);
            if (t.size() >= 2 && t[1] == "list") {
                if (t.size() != 5) fail("malformed header: list property", ln);
                elements.back().has_list = true;
                elements.back().properties.emplace_back(t[4]);
            } else {
                if (t.size() != 3) fail("malformed header: property", ln);
                elements.back().properties.emplace_back(t[2]);
            }
        } else {
            fail("malformed header: unexpected '" + std::string(t[0]) + "'", ln);
        }
    }

    TriangleMesh m;
    for (const auto& el : elements) {
        if (el.name == "vertex") {
            std::array<std::size_t, 3> pos{};
            for (int d = 0; d < 3; ++d) {
                const char* axis[] = {"x", "y", "z"};
                const auto it = std::find(el.properties.begin(), el.properties.end(), axis[d]);
                if (it == el.properties.end()) fail(std::string("malformed header: vertex lacks ") + axis[d], ln);
                pos[static_cast<std::size_t>(d)] = static_cast<std::size_t>(it - el.properties.begin());
            }
            for (std::size_t i = 0; i < el.count; ++i) {
                t = next_tokens();
                if (t.size() < el.properties.size()) fail("vertex row too short", ln);
                m.vertices.push_back({to_double(t[pos[0]], ln), to_double(t[pos[1]], ln), to_double(t[pos[2]], ln)});
            }
        } else if (el.name == "face") {
            for (std::size_t i = 0; i < el.count; ++i) {
                t = next_tokens();
                const long long c = to_integer(t[0], ln);
                if (c < 0 || t.size() < static_cast<std::size_t>(c) + 1) fail("face row too short", ln);
                std::vector<std::size_t> poly;
                for (long long j = 1; j <= c; ++j) {
                    const long long v = to_integer(t[static_cast<std::size_t>(j)], ln);
                    if (v < 0) fail("index out of range", ln);
                    poly.push_back(static_cast<std::size_t>(v));
                }
                add_polygon(m, poly, ln);
            }
        } else {
            for (std::size_t i = 0; i < el.count; ++i) next_tokens();
        }
    }
    return m;
}

inline std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace meshio_detail

inline TriangleMesh parse_mesh(std::string_view text, MeshFormat format) {
    return format == MeshFormat::obj ? meshio_detail::parse_obj(text) : meshio_detail::parse_ply(text);
}

inline std::string write_obj(const TriangleMesh& m) {
    std::ostringstream os;
    for (const auto& v : m.vertices)
        os << "v " << meshio_detail::fmt(v[0]) << ' ' << meshio_detail::fmt(v[1]) << ' ' << meshio_detail::fmt(v[2]) << '\n';
    for (const auto& f : m.faces) os << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    return os.str();
}

inline std::string write_ply(const TriangleMesh& m) {
    std::ostringstream os;
    os << "ply\nformat ascii 1.0\nelement vertex " << m.vertices.size()
       << "\nproperty double x\nproperty double y\nproperty double z\nelement face " << m.faces.size()
       << "\nproperty list uchar int vertex_indices\nend_header\n";
    for (const auto& v : m.vertices)
        os << meshio_detail::fmt(v[0]) << ' ' << meshio_detail::fmt(v[1]) << ' ' << meshio_detail::fmt(v[2]) << '\n';
    for (const auto& f : m.faces) os << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
    return os.str();
}

inline Rotation identity_rotation() { return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}; }

/// Subtracts the vertex mean, then applies x -> R x.
inline TriangleMesh recenter_and_rotate(const TriangleMesh& mesh, const Rotation& R) {
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += R[k][i] * R[k][j];
            require(std::abs(s - (i == j ? 1.0 : 0.0)) <= 1e-8, "rotation is not orthogonal");
        }
    require(!mesh.vertices.empty(), "mesh has no vertices");
    Vec3 mean{0, 0, 0};
    for (const auto& v : mesh.vertices) mean = mean + v;
    mean = (1.0 / static_cast<double>(mesh.vertices.size())) * mean;
    TriangleMesh out = mesh;
    for (auto& v : out.vertices) {
        const Vec3 c = v - mean;
        for (int i = 0; i < 3; ++i) v[i] = R[i][0] * c[0] + R[i][1] * c[1] + R[i][2] * c[2];
    }
    return out;
}

/// n distinct vertex indices, uniform without replacement (partial Fisher-Yates).
inline std::vector<std::size_t> subsample_vertices(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed) {
    const std::size_t V = mesh.vertices.size();
    require(n <= V, "cannot select " + std::to_string(n) + " of " + std::to_string(V) + " vertices");
    std::vector<std::size_t> idx(V);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.below(V - i)]);
    idx.resize(n);
    return idx;
}

/// Vertices on an edge that belongs to exactly one face.
inline std::vector<bool> detect_boundary_vertices(const TriangleMesh& mesh) {
    std::map<std::pair<std::size_t, std::size_t>, int> count;
    for (const auto& f : mesh.faces)
        for (int k = 0; k < 3; ++k) {
            const std::size_t a = f[static_cast<std::size_t>(k)], b = f[static_cast<std::size_t>((k + 1) % 3)];
            ++count[{std::min(a, b), std::max(a, b)}];
        }
    std::vector<bool> mask(mesh.vertices.size(), false);
    for (const auto& [e, c] : count)
        if (c == 1) mask[e.first] = mask[e.second] = true;
    return mask;
}

/// u0_i = exp(-20 |x_i - mean|^2 / max_j |x_j - mean|^2)
inline std::vector<double> gaussian_initial_condition(const std::vector<Vec3>& positions) {
    require(!positions.empty(), "no positions");
    Vec3 mean{0, 0, 0};
    for (const auto& p : positions) mean = mean + p;
    mean = (1.0 / static_cast<double>(positions.size())) * mean;
    std::vector<double> r2(positions.size());
    double rmax = 0.0;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const Vec3 d = positions[i] - mean;
        r2[i] = dot(d, d);
        rmax = std::max(rmax, r2[i]);
    }
    if (!(rmax > 0.0)) throw ValidationError("degenerate geometry: all points coincide");
    std::vector<double> u(positions.size());
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = std::exp(-20.0 * r2[i] / rmax);
    return u;
}

inline constexpr double kRealMeshDiffusivity = 0.05;

inline GraphSample realmesh_to_graphsample(const TriangleMesh& mesh, std::size_t n, std::size_t k, std::uint64_t seed,
                                           const Rotation& rotation = identity_rotation()) {
    const auto centred = recenter_and_rotate(mesh, rotation);
    const auto boundary = detect_boundary_vertices(centred);
    const auto pick = subsample_vertices(centred, n, seed);

    GraphSample g;
    for (std::size_t v : pick) {
        g.positions.push_back(centred.vertices[v]);
        g.boundary_mask.push_back(boundary[v]);
    }
    g.edges = build_knn_graph(g.positions, k);
    g.weights = edge_weights_inverse_distance(g.positions, g.edges);
    g.u0 = gaussian_initial_condition(g.positions);
    g.diffusivity.assign(n, kRealMeshDiffusivity);
    g.metadata = {{"source", "mesh"}, {"n", std::to_string(n)}, {"k", std::to_string(k)}, {"seed", std::to_string(seed)}};
    validate(g);
    return g;
}

}  // namespace meshdiff
