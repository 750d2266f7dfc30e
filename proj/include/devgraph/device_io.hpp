#pragma once

#include "devgraph/mesh.hpp"

#include <array>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace devgraph::io {

inline constexpr int kFormatVersion = 1;

/// Contents of a .dgrid file: geometry, regions and contacts, without the
/// derived control-volume data (recomputed on conversion to DeviceMesh).
struct GridFile {
    int version = kFormatVersion;
    std::vector<Point2D> vertices;
    std::vector<int> vertex_region;
    std::vector<Triangle> triangles;
    std::vector<int> triangle_region;
    std::vector<Region> regions;
    std::map<std::string, std::vector<std::size_t>> contacts;

    friend bool operator==(const GridFile&, const GridFile&) = default;
};

/// One named scalar per vertex (.dfield).
struct FieldFile {
    std::string name;
    std::string unit;
    std::vector<double> values;

    friend bool operator==(const FieldFile&, const FieldFile&) = default;
};

enum class MaterialClass { metal, insulator, semiconductor };

std::string_view to_string(MaterialClass c);

/// Material database entry (.dpar). Unknown keys are kept verbatim in `extra`.
struct ParameterFile {
    std::string material;
    MaterialClass material_class = MaterialClass::semiconductor;
    double permittivity = 1.0;     // relative
    double bandgap = 0.0;          // eV
    double intrinsic_density = 0.0; // 1/m^3
    double mobility_n = 0.0;       // m^2/Vs
    double mobility_p = 0.0;       // m^2/Vs
    std::array<double, 3> model_slots{0.0, 0.0, 0.0};
    std::vector<std::pair<std::string, std::string>> extra;

    friend bool operator==(const ParameterFile&, const ParameterFile&) = default;
};

/// Bias/current table (.dsweep). Row-major, rectangular.
struct SweepTable {
    std::vector<std::string> columns;
    std::vector<std::string> units;
    std::vector<std::vector<double>> rows;

    std::size_t column_index(std::string_view name) const;
    double at(std::size_t row, std::string_view column) const;

    friend bool operator==(const SweepTable&, const SweepTable&) = default;
};

GridFile parse_grid(std::string_view text);
std::string write_grid(const GridFile& grid);

FieldFile parse_field(std::string_view text);
std::string write_field(const FieldFile& field);

ParameterFile parse_parameters(std::string_view text);
std::string write_parameters(const ParameterFile& params);

SweepTable parse_sweep(std::string_view text);
std::string write_sweep(const SweepTable& table);

GridFile grid_from_mesh(const DeviceMesh& mesh);
/// Rebuilds the mesh including edges and control volumes.
DeviceMesh mesh_from_grid(const GridFile& grid);

/// Standard parameter sets used by the nMOSFET template.
ParameterFile silicon_parameters();
ParameterFile oxide_parameters();

} // namespace devgraph::io
