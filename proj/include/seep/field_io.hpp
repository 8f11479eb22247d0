#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "json.hpp"

#include "seep/common.hpp"
#include "seep/grid.hpp"

namespace seep {

// Canonical numeric text form: shortest decimal that round-trips the exact
// 64-bit value.
inline std::string format_double(double x) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

inline void write_field_csv(const ScalarField2D& f, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    std::string line;
    for (int i = 0; i < f.ny; ++i) {
        line.clear();
        for (int j = 0; j < f.nx; ++j) {
            if (j) line += ',';
            line += format_double(f.at(i, j));
        }
        line += '\n';
        out << line;
    }
    if (!out) throw IoError("write failed: " + path.string());
}

inline ScalarField2D read_field_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        const char* p = line.data();
        const char* end = line.data() + line.size();
        while (p < end) {
            double x;
            auto res = std::from_chars(p, end, x);
            if (res.ec != std::errc{}) throw IoError("bad number in " + path.string() + ": " + line);
            row.push_back(x);
            p = res.ptr;
            if (p < end && *p == ',') ++p;
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw IoError("ragged CSV in " + path.string());
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw IoError("empty CSV: " + path.string());
    ScalarField2D f(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
    for (int i = 0; i < f.ny; ++i)
        for (int j = 0; j < f.nx; ++j) f.at(i, j) = rows[i][j];
    return f;
}

// Rejects keys outside `allowed` so config typos fail loudly instead of
// silently falling back to defaults.
inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) { ok = true; break; }
        if (!ok) throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
    }
}

inline nlohmann::json to_json(const CaseSpec& s) {
    return nlohmann::json{
        {"nx", s.nx},     {"ny", s.ny},         {"dx", s.dx},           {"dy", s.dy},
        {"dt", s.dt},     {"nt", s.nt},         {"ss", s.ss},           {"h_left", s.h_left},
        {"h_right", s.h_right}, {"h_init", s.h_init},
    };
}

inline CaseSpec case_from_json(const nlohmann::json& j) {
    check_keys(j, {"nx", "ny", "dx", "dy", "dt", "nt", "ss", "h_left", "h_right", "h_init"}, "case");
    CaseSpec s;
    s.nx = j.value("nx", s.nx);
    s.ny = j.value("ny", s.ny);
    s.dx = j.value("dx", s.dx);
    s.dy = j.value("dy", s.dy);
    s.dt = j.value("dt", s.dt);
    s.nt = j.value("nt", s.nt);
    s.ss = j.value("ss", s.ss);
    s.h_left = j.value("h_left", s.h_left);
    s.h_right = j.value("h_right", s.h_right);
    s.h_init = j.value("h_init", s.h_init);
    s.validate();
    return s;
}

inline void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
    }
    return j;
}

} // namespace seep
