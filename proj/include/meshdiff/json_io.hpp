#pragma once

// JSON documents for GraphSample and Trajectory. Floats are written with 17
// significant digits so every double round-trips exactly; parsing goes
// through nlohmann::json.

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "meshdiff/graph.hpp"
#include "meshdiff/trajectory.hpp"

namespace meshdiff {

namespace json_detail {

inline std::string number(double x) {
    if (!std::isfinite(x)) throw ValidationError("cannot serialize non-finite value to JSON");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline void write_array(std::ostream& os, const std::vector<double>& v) {
    os << '[';
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << number(v[i]);
    os << ']';
}

inline std::string quoted(const std::string& s) { return nlohmann::json(s).dump(); }

inline void write_string_map(std::ostream& os, const std::map<std::string, std::string>& m) {
    os << '{';
    bool first = true;
    for (const auto& [k, v] : m) {
        os << (first ? "" : ",") << quoted(k) << ':' << quoted(v);
        first = false;
    }
    os << '}';
}

inline std::vector<double> read_doubles(const nlohmann::json& j, const char* what) {
    if (!j.is_array()) throw ValidationError(std::string(what) + " must be an array");
    std::vector<double> v;
    v.reserve(j.size());
    for (const auto& x : j) {
        if (!x.is_number()) throw ValidationError(std::string(what) + " must contain numbers");
        v.push_back(x.get<double>());
    }
    return v;
}

inline const nlohmann::json& field(const nlohmann::json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) throw ValidationError(std::string("missing field '") + key + "'");
    return j.at(key);
}

inline nlohmann::json parse(const std::string& text) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("invalid JSON: ") + e.what());
    }
}

}  // namespace json_detail

inline std::string to_json(const GraphSample& g) {
    using namespace json_detail;
    std::ostringstream os;
    os << "{\n\"positions\":[";
    for (std::size_t i = 0; i < g.positions.size(); ++i) {
        const auto& p = g.positions[i];
        os << (i ? "," : "") << '[' << number(p[0]) << ',' << number(p[1]) << ',' << number(p[2]) << ']';
    }
    os << "],\n\"edges\":[";
    for (std::size_t e = 0; e < g.edges.size(); ++e)
        os << (e ? "," : "") << '[' << g.edges[e].src << ',' << g.edges[e].dst << ']';
    os << "],\n\"weights\":";
    write_array(os, g.weights);
    os << ",\n\"boundary_mask\":[";
    for (std::size_t i = 0; i < g.boundary_mask.size(); ++i) os << (i ? "," : "") << (g.boundary_mask[i] ? 1 : 0);
    os << "],\n\"diffusivity\":";
    write_array(os, g.diffusivity);
    os << ",\n\"u0\":";
    write_array(os, g.u0);
    os << ",\n\"metadata\":";
    write_string_map(os, g.metadata);
    os << "\n}\n";
    return os.str();
}

inline GraphSample graph_from_json(const std::string& text) {
    using namespace json_detail;
    const auto j = parse(text);
    GraphSample g;
    for (const auto& p : field(j, "positions")) {
        const auto xyz = read_doubles(p, "positions row");
        require(xyz.size() == 3, "positions rows must have 3 entries");
        g.positions.push_back({xyz[0], xyz[1], xyz[2]});
    }
    for (const auto& e : field(j, "edges")) {
        require(e.is_array() && e.size() == 2 && e[0].is_number_unsigned() && e[1].is_number_unsigned(),
                "edges rows must be pairs of non-negative integers");
        g.edges.push_back({e[0].get<std::size_t>(), e[1].get<std::size_t>()});
    }
    g.weights = read_doubles(field(j, "weights"), "weights");
    for (const auto& b : field(j, "boundary_mask")) {
        require(b.is_number_integer() || b.is_boolean(), "boundary_mask entries must be 0/1");
        g.boundary_mask.push_back(b.is_boolean() ? b.get<bool>() : b.get<int>() != 0);
    }
    g.diffusivity = read_doubles(field(j, "diffusivity"), "diffusivity");
    g.u0 = read_doubles(field(j, "u0"), "u0");
    if (j.contains("metadata")) {
        for (const auto& [k, v] : j.at("metadata").items()) g.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
    validate(g);
    return g;
}

inline std::string to_json(const Trajectory& t) {
    using namespace json_detail;
    std::ostringstream os;
    os << "{\n\"times\":";
    write_array(os, t.times);
    os << ",\n\"states\":[";
    for (std::size_t k = 0; k < t.states.size(); ++k) {
        os << (k ? ",\n" : "\n");
        write_array(os, t.states[k]);
    }
    os << "\n]\n}\n";
    return os.str();
}

inline Trajectory trajectory_from_json(const std::string& text) {
    using namespace json_detail;
    const auto j = parse(text);
    Trajectory t;
    t.times = read_doubles(field(j, "times"), "times");
    for (const auto& s : field(j, "states")) t.states.push_back(read_doubles(s, "states row"));
    require(t.times.size() == t.states.size(), "times and states lengths differ");
    return t;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write '" + path + "'");
    out << text;
}

}  // namespace meshdiff
