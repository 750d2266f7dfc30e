#include "devgraph/device_io.hpp"

#include "devgraph/error.hpp"
#include "devgraph/text.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace devgraph::io {

using text::format_double;
using text::LineReader;
using text::split_ws;

namespace {

// Reads the next record; end of input is reported one line past the last.
std::string_view expect_line(LineReader& reader, const std::string& what) {
    auto line = reader.next();
    if (!line) throw ParseError(reader.line_number() + 1, "unexpected end of input, expected " + what);
    return *line;
}

std::vector<std::string_view> expect_record(LineReader& reader, std::string_view keyword, std::size_t fields,
                                            const std::string& what) {
    auto line = expect_line(reader, what);
    auto tok = split_ws(line);
    if (tok.empty() || tok[0] != keyword)
        throw ParseError(reader.line_number(), "expected " + what + ", found '" + std::string(line) + "'");
    if (fields != 0 && tok.size() != fields + 1)
        throw ParseError(reader.line_number(), "malformed " + std::string(keyword) + " record: expected " +
                                                   std::to_string(fields) + " fields, found " +
                                                   std::to_string(tok.size() - 1));
    return tok;
}

double number(std::string_view tok, const LineReader& reader, const std::string& what) {
    auto v = text::parse_double(tok);
    if (!v) throw ParseError(reader.line_number(), "malformed number '" + std::string(tok) + "' in " + what);
    if (!std::isfinite(*v)) throw ParseError(reader.line_number(), "non-finite value in " + what);
    return *v;
}

long long integer(std::string_view tok, const LineReader& reader, const std::string& what) {
    auto v = text::parse_int(tok);
    if (!v) throw ParseError(reader.line_number(), "malformed integer '" + std::string(tok) + "' in " + what);
    return *v;
}

std::size_t index_in(std::string_view tok, std::size_t bound, const LineReader& reader, const std::string& what) {
    const long long v = integer(tok, reader, what);
    if (v < 0 || static_cast<unsigned long long>(v) >= bound)
        throw ParseError(reader.line_number(), what + " index " + std::string(tok) + " out of range [0, " +
                                                   std::to_string(bound) + ")");
    return static_cast<std::size_t>(v);
}

void expect_header(LineReader& reader, std::string_view magic) {
    auto tok = expect_record(reader, magic, 1, std::string(magic) + " header");
    const long long version = integer(tok[1], reader, "version");
    if (version != kFormatVersion)
        throw ParseError(reader.line_number(), "unsupported " + std::string(magic) + " version " + std::string(tok[1]));
}

void expect_end(LineReader& reader) {
    if (auto extra = reader.next())
        throw ParseError(reader.line_number(), "unexpected trailing record '" + std::string(*extra) + "'");
}

void check_name(const std::string& name, const char* what) {
    if (name.empty() || split_ws(name).size() != 1 || name.front() == '#')
        throw InvalidArgument(std::string(what) + " name '" + name + "' must be a single non-empty token");
}

} // namespace

std::string_view to_string(MaterialClass c) {
    switch (c) {
    case MaterialClass::metal: return "metal";
    case MaterialClass::insulator: return "insulator";
    case MaterialClass::semiconductor: return "semiconductor";
    }
    return "semiconductor";
}

// ---------------------------------------------------------------- grid

GridFile parse_grid(std::string_view src) {
    LineReader reader(src);
    expect_header(reader, "dgrid");
    auto counts = expect_record(reader, "counts", 4, "counts record");
    const long long nv = integer(counts[1], reader, "vertex count");
    const long long nt = integer(counts[2], reader, "triangle count");
    const long long nr = integer(counts[3], reader, "region count");
    const long long nc = integer(counts[4], reader, "contact count");
    if (nv < 0 || nt < 0 || nr < 0 || nc < 0) throw ParseError(reader.line_number(), "negative count");

    GridFile grid;
    for (long long r = 0; r < nr; ++r) {
        auto tok = expect_record(reader, "region", 2,
                                 "region record " + std::to_string(r + 1) + " of " + std::to_string(nr));
        grid.regions.push_back({std::string(tok[1]), std::string(tok[2])});
    }
    const auto region_bound = static_cast<std::size_t>(nr);
    for (long long v = 0; v < nv; ++v) {
        auto tok = expect_record(reader, "vertex", 3,
                                 "vertex record " + std::to_string(v + 1) + " of " + std::to_string(nv));
        grid.vertices.push_back({number(tok[1], reader, "vertex x"), number(tok[2], reader, "vertex y")});
        grid.vertex_region.push_back(static_cast<int>(index_in(tok[3], region_bound, reader, "region")));
    }
    const auto vertex_bound = static_cast<std::size_t>(nv);
    for (long long t = 0; t < nt; ++t) {
        auto tok = expect_record(reader, "triangle", 4,
                                 "triangle record " + std::to_string(t + 1) + " of " + std::to_string(nt));
        grid.triangles.push_back({index_in(tok[1], vertex_bound, reader, "vertex"),
                                  index_in(tok[2], vertex_bound, reader, "vertex"),
                                  index_in(tok[3], vertex_bound, reader, "vertex")});
        grid.triangle_region.push_back(static_cast<int>(index_in(tok[4], region_bound, reader, "region")));
    }
    for (long long c = 0; c < nc; ++c) {
        auto tok = expect_record(reader, "contact", 0,
                                 "contact record " + std::to_string(c + 1) + " of " + std::to_string(nc));
        if (tok.size() < 3) throw ParseError(reader.line_number(), "malformed contact record");
        const long long k = integer(tok[2], reader, "contact size");
        if (k < 0 || tok.size() != static_cast<std::size_t>(k) + 3)
            throw ParseError(reader.line_number(), "contact '" + std::string(tok[1]) + "' declares " +
                                                       std::string(tok[2]) + " vertices but lists " +
                                                       std::to_string(tok.size() - 3));
        std::string name(tok[1]);
        if (grid.contacts.count(name)) throw ParseError(reader.line_number(), "duplicate contact '" + name + "'");
        auto& members = grid.contacts[name];
        for (std::size_t i = 3; i < tok.size(); ++i) members.push_back(index_in(tok[i], vertex_bound, reader, "vertex"));
    }
    expect_end(reader);
    return grid;
}

std::string write_grid(const GridFile& grid) {
    if (grid.vertex_region.size() != grid.vertices.size() || grid.triangle_region.size() != grid.triangles.size())
        throw InvalidArgument("write_grid: region arrays do not match record counts");
    std::ostringstream out;
    out << "# devgraph grid: x y in meters\n";
    out << "dgrid " << kFormatVersion << "\n";
    out << "counts " << grid.vertices.size() << ' ' << grid.triangles.size() << ' ' << grid.regions.size() << ' '
        << grid.contacts.size() << "\n";
    for (const Region& r : grid.regions) {
        check_name(r.name, "region");
        check_name(r.material, "material");
        out << "region " << r.name << ' ' << r.material << "\n";
    }
    for (std::size_t v = 0; v < grid.vertices.size(); ++v)
        out << "vertex " << format_double(grid.vertices[v].x) << ' ' << format_double(grid.vertices[v].y) << ' '
            << grid.vertex_region[v] << "\n";
    for (std::size_t t = 0; t < grid.triangles.size(); ++t) {
        const Triangle& tri = grid.triangles[t];
        out << "triangle " << tri[0] << ' ' << tri[1] << ' ' << tri[2] << ' ' << grid.triangle_region[t] << "\n";
    }
    for (const auto& [name, members] : grid.contacts) {
        check_name(name, "contact");
        out << "contact " << name << ' ' << members.size();
        for (std::size_t v : members) out << ' ' << v;
        out << "\n";
    }
    return out.str();
}

GridFile grid_from_mesh(const DeviceMesh& mesh) {
    GridFile grid;
    grid.vertices = mesh.vertices;
    grid.vertex_region = mesh.region_of_vertex;
    grid.triangles = mesh.triangles;
    grid.triangle_region = mesh.region_of_triangle;
    grid.regions = mesh.regions;
    grid.contacts = mesh.contacts;
    return grid;
}

DeviceMesh mesh_from_grid(const GridFile& grid) {
    DeviceMesh mesh;
    mesh.vertices = grid.vertices;
    mesh.region_of_vertex = grid.vertex_region;
    mesh.triangles = grid.triangles;
    mesh.region_of_triangle = grid.triangle_region;
    mesh.regions = grid.regions;
    mesh.contacts = grid.contacts;
    control_volumes(mesh);
    return mesh;
}

// ---------------------------------------------------------------- field

FieldFile parse_field(std::string_view src) {
    LineReader reader(src);
    expect_header(reader, "dfield");
    FieldFile field;
    field.name = std::string(expect_record(reader, "name", 1, "name record")[1]);
    field.unit = std::string(expect_record(reader, "unit", 1, "unit record")[1]);
    const long long n = integer(expect_record(reader, "count", 1, "count record")[1], reader, "count");
    if (n < 0) throw ParseError(reader.line_number(), "negative count");
    field.values.reserve(static_cast<std::size_t>(n));
    for (long long i = 0; i < n; ++i) {
        const std::string what = "value row " + std::to_string(i + 1) + " of " + std::to_string(n);
        auto line = expect_line(reader, what);
        auto tok = split_ws(line);
        if (tok.size() != 1) throw ParseError(reader.line_number(), "expected a single value in " + what);
        auto v = text::parse_double(tok[0]);
        if (!v) throw ParseError(reader.line_number(), "malformed number '" + std::string(tok[0]) + "' in " + what);
        if (!std::isfinite(*v)) throw ParseError(reader.line_number(), "non-finite value in " + what);
        field.values.push_back(*v);
    }
    expect_end(reader);
    return field;
}

std::string write_field(const FieldFile& field) {
    check_name(field.name, "field");
    check_name(field.unit, "unit");
    std::ostringstream out;
    out << "dfield " << kFormatVersion << "\n";
    out << "name " << field.name << "\n";
    out << "unit " << field.unit << "\n";
    out << "count " << field.values.size() << "\n";
    for (double v : field.values) {
        if (!std::isfinite(v)) throw InvalidArgument("write_field: non-finite value in field '" + field.name + "'");
        out << format_double(v) << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------- parameters

ParameterFile parse_parameters(std::string_view src) {
    LineReader reader(src);
    std::map<std::string, std::pair<std::string, std::size_t>> kv;
    std::vector<std::string> order;
    while (auto line = reader.next()) {
        const auto eq = line->find('=');
        if (eq == std::string_view::npos) throw ParseError(reader.line_number(), "expected 'key = value'");
        std::string key(text::trim(line->substr(0, eq)));
        std::string value(text::trim(line->substr(eq + 1)));
        if (key.empty()) throw ParseError(reader.line_number(), "empty key");
        if (kv.count(key)) throw ParseError(reader.line_number(), "duplicate key '" + key + "'");
        kv[key] = {value, reader.line_number()};
        order.push_back(key);
    }
    auto take = [&](const std::string& key) -> std::optional<std::pair<std::string, std::size_t>> {
        auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        auto out = it->second;
        kv.erase(it);
        return out;
    };
    auto take_number = [&](const std::string& key, bool required, double fallback) {
        auto entry = take(key);
        if (!entry) {
            if (required) throw ParseError(reader.line_number() + 1, "missing required key '" + key + "'");
            return fallback;
        }
        auto v = text::parse_double(entry->first);
        if (!v || !std::isfinite(*v))
            throw ParseError(entry->second, "key '" + key + "' is not a finite number: '" + entry->first + "'");
        return *v;
    };

    ParameterFile p;
    auto material = take("material");
    if (!material) throw ParseError(reader.line_number() + 1, "missing required key 'material'");
    p.material = material->first;
    auto cls = take("class");
    if (!cls) throw ParseError(reader.line_number() + 1, "missing required key 'class'");
    if (cls->first == "metal") p.material_class = MaterialClass::metal;
    else if (cls->first == "insulator") p.material_class = MaterialClass::insulator;
    else if (cls->first == "semiconductor") p.material_class = MaterialClass::semiconductor;
    else throw ParseError(cls->second, "class must be metal, insulator or semiconductor, got '" + cls->first + "'");

    const bool semi = p.material_class == MaterialClass::semiconductor;
    p.permittivity = take_number("permittivity", true, 1.0);
    if (p.permittivity < 1.0) throw ParseError(reader.line_number() + 1, "permittivity ratio must be >= 1");
    p.bandgap = take_number("bandgap", semi, 0.0);
    p.intrinsic_density = take_number("intrinsic_density", semi, 0.0);
    p.mobility_n = take_number("mobility_n", semi, 0.0);
    p.mobility_p = take_number("mobility_p", semi, 0.0);
    if (semi && !(p.mobility_n > 0.0 && p.mobility_p > 0.0 && p.intrinsic_density > 0.0))
        throw ParseError(reader.line_number() + 1, "semiconductor requires positive mobilities and intrinsic density");
    for (int s = 0; s < 3; ++s)
        p.model_slots[static_cast<std::size_t>(s)] = take_number("model_slot_" + std::to_string(s + 1), false, 0.0);
    for (const std::string& key : order) {
        auto it = kv.find(key);
        if (it != kv.end()) p.extra.emplace_back(key, it->second.first);
    }
    return p;
}

std::string write_parameters(const ParameterFile& p) {
    std::ostringstream out;
    out << "# devgraph material parameters (SI units, bandgap in eV)\n";
    out << "material = " << p.material << "\n";
    out << "class = " << to_string(p.material_class) << "\n";
    out << "permittivity = " << format_double(p.permittivity) << "\n";
    if (p.material_class == MaterialClass::semiconductor || p.bandgap != 0.0)
        out << "bandgap = " << format_double(p.bandgap) << "\n";
    if (p.material_class == MaterialClass::semiconductor || p.intrinsic_density != 0.0)
        out << "intrinsic_density = " << format_double(p.intrinsic_density) << "\n";
    if (p.material_class == MaterialClass::semiconductor || p.mobility_n != 0.0)
        out << "mobility_n = " << format_double(p.mobility_n) << "\n";
    if (p.material_class == MaterialClass::semiconductor || p.mobility_p != 0.0)
        out << "mobility_p = " << format_double(p.mobility_p) << "\n";
    for (int s = 0; s < 3; ++s)
        if (p.model_slots[static_cast<std::size_t>(s)] != 0.0)
            out << "model_slot_" << s + 1 << " = " << format_double(p.model_slots[static_cast<std::size_t>(s)]) << "\n";
    for (const auto& [key, value] : p.extra) out << key << " = " << value << "\n";
    return out.str();
}

ParameterFile silicon_parameters() {
    ParameterFile p;
    p.material = "Silicon";
    p.material_class = MaterialClass::semiconductor;
    p.permittivity = 11.7;
    p.bandgap = 1.12;
    p.intrinsic_density = 1e16;
    p.mobility_n = 0.14;
    p.mobility_p = 0.045;
    return p;
}

ParameterFile oxide_parameters() {
    ParameterFile p;
    p.material = "SiO2";
    p.material_class = MaterialClass::insulator;
    p.permittivity = 3.9;
    p.bandgap = 9.0;
    return p;
}

// ---------------------------------------------------------------- sweep

std::size_t SweepTable::column_index(std::string_view name) const {
    for (std::size_t c = 0; c < columns.size(); ++c)
        if (columns[c] == name) return c;
    throw InvalidArgument("sweep table has no column '" + std::string(name) + "'");
}

double SweepTable::at(std::size_t row, std::string_view column) const {
    if (row >= rows.size()) throw InvalidArgument("sweep row " + std::to_string(row) + " out of range");
    return rows[row][column_index(column)];
}

SweepTable parse_sweep(std::string_view src) {
    LineReader reader(src);
    expect_header(reader, "dsweep");
    const long long nrows = integer(expect_record(reader, "rows", 1, "rows record")[1], reader, "rows");
    if (nrows < 0) throw ParseError(reader.line_number(), "negative row count");
    SweepTable table;
    auto cols = expect_record(reader, "columns", 0, "columns record");
    for (std::size_t i = 1; i < cols.size(); ++i) table.columns.emplace_back(cols[i]);
    if (table.columns.empty()) throw ParseError(reader.line_number(), "sweep table needs at least one column");
    std::set<std::string> seen;
    for (const auto& c : table.columns)
        if (!seen.insert(c).second) throw ParseError(reader.line_number(), "duplicate column '" + c + "'");
    auto units = expect_record(reader, "units", table.columns.size(), "units record");
    for (std::size_t i = 1; i < units.size(); ++i) table.units.emplace_back(units[i]);
    for (long long r = 0; r < nrows; ++r) {
        const std::string what = "row " + std::to_string(r + 1) + " of " + std::to_string(nrows);
        std::string line(expect_line(reader, what));
        for (char& ch : line)
            if (ch == ',') ch = ' ';
        auto tok = split_ws(line);
        if (tok.size() != table.columns.size())
            throw ParseError(reader.line_number(), "ragged " + what + ": expected " +
                                                       std::to_string(table.columns.size()) + " values, found " +
                                                       std::to_string(tok.size()));
        std::vector<double> row;
        for (auto t : tok) row.push_back(number(t, reader, what));
        table.rows.push_back(std::move(row));
    }
    expect_end(reader);
    return table;
}

std::string write_sweep(const SweepTable& table) {
    if (table.units.size() != table.columns.size())
        throw InvalidArgument("write_sweep: one unit per column required");
    std::set<std::string> seen;
    for (const auto& c : table.columns) {
        check_name(c, "column");
        if (!seen.insert(c).second) throw InvalidArgument("write_sweep: duplicate column '" + c + "'");
    }
    std::ostringstream out;
    out << "dsweep " << kFormatVersion << "\n";
    out << "rows " << table.rows.size() << "\n";
    out << "columns";
    for (const auto& c : table.columns) out << ' ' << c;
    out << "\nunits";
    for (const auto& u : table.units) {
        check_name(u, "unit");
        out << ' ' << u;
    }
    out << "\n";
    for (const auto& row : table.rows) {
        if (row.size() != table.columns.size()) throw InvalidArgument("write_sweep: ragged row");
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (!std::isfinite(row[c])) throw InvalidArgument("write_sweep: non-finite value");
            out << (c ? " " : "") << format_double(row[c]);
        }
        out << "\n";
    }
    return out.str();
}

} // namespace devgraph::io
