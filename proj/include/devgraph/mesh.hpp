#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace devgraph {

struct Point2D {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point2D&, const Point2D&) = default;
};

using Triangle = std::array<std::size_t, 3>;
using Edge = std::pair<std::size_t, std::size_t>;

/// A named material zone of the mesh.
struct Region {
    std::string name;
    std::string material;

    friend bool operator==(const Region&, const Region&) = default;
};

/// Geometry and doping of one planar nMOSFET instance. Lengths in meters,
/// densities in 1/m^3. The device occupies x in [0, 2*well_width + gate_length]
/// and y in [0, body_depth + oxide_thickness] with y pointing up; the oxide
/// band sits on top of the channel only.
struct DeviceSpec {
    std::string template_id = "planar-nmosfet";

    double gate_length = 60e-9;
    double oxide_thickness = 3e-9;
    double body_depth = 80e-9;
    double well_width = 40e-9;
    double well_depth = 25e-9;

    int nx = 22;
    int ny = 16;

    double well_donor = 1e26;
    double well_acceptor = 0.0;
    double body_donor = 0.0;
    double body_acceptor = 3e23;

    friend bool operator==(const DeviceSpec&, const DeviceSpec&) = default;
};

/// Unstructured 2D triangular mesh with box-method (control-volume) geometry.
///
/// Edge-level and vertex-level quantities are also kept per triangle so that
/// region-dependent coefficients (permittivity, carrier transport restricted to
/// semiconductor triangles) can be assembled without re-deriving geometry.
struct DeviceMesh {
    std::vector<Point2D> vertices;
    std::vector<Triangle> triangles;
    std::vector<Region> regions;
    std::vector<int> region_of_vertex;
    std::vector<int> region_of_triangle;
    std::map<std::string, std::vector<std::size_t>> contacts;

    std::vector<Edge> edges;
    std::vector<double> edge_length;
    /// Control-volume area per vertex (m^2).
    std::vector<double> cv_volume;
    /// Dual-face length over edge length, per edge.
    std::vector<double> cv_coeff;

    /// Edge index of each triangle side (v0v1, v1v2, v2v0).
    std::vector<std::array<std::size_t, 3>> tri_edge;
    /// That side's contribution to cv_coeff.
    std::vector<std::array<double, 3>> tri_edge_coeff;
    /// Each triangle vertex's share of the triangle area.
    std::vector<std::array<double, 3>> tri_vertex_volume;

    std::size_t vertex_count() const noexcept { return vertices.size(); }
    std::size_t edge_count() const noexcept { return edges.size(); }
    int region_index(const std::string& name) const;
    double total_area() const;

    friend bool operator==(const DeviceMesh&, const DeviceMesh&) = default;
};

/// Validates DeviceSpec invariants; throws InvalidArgument naming the field.
void validate_spec(const DeviceSpec& spec);

/// Builds the graded planar-nMOSFET mesh with regions oxide/source/drain/body
/// and contacts gate/source/drain/body.
DeviceMesh build_device_mesh(const DeviceSpec& spec);

/// Uniform single-region rectangle [0,width]x[0,height] with nx*ny vertices.
/// Contacts "left" and "right" cover the x=0 and x=width columns.
DeviceMesh build_uniform_mesh(int nx, int ny, double width, double height,
                              const std::string& material = "Silicon");

/// Unit-square mesh of near-equilateral triangles whose interior is warped by
/// a smooth map so that no stencil symmetry survives. Used for convergence
/// studies; contact "boundary" holds every boundary vertex.
DeviceMesh build_warped_mesh(int rows, double amplitude = 0.06);

/// Tensor-product mesh on the given grid lines. `region_at` maps a triangle
/// centroid to a region index or -1 to drop the triangle. Vertices take the
/// incident-triangle region with the lowest `vertex_priority` value.
template <typename RegionFn>
DeviceMesh build_tensor_mesh(std::span<const double> xs, std::span<const double> ys,
                             std::vector<Region> regions, std::span<const int> vertex_priority,
                             RegionFn&& region_at);

/// Graded 1D grid lines over [breaks.front(), breaks.back()] with `count`
/// lines in total; spacing shrinks geometrically (ratio `ratio`) toward every
/// breakpoint.
std::vector<double> graded_lines(std::span<const double> breaks, int count, double ratio,
                                 const std::string& what);

/// Sorted unique undirected edges of a triangle list.
std::vector<Edge> extract_edges(std::span<const Triangle> triangles, std::size_t vertex_count);

/// Recomputes edges and control-volume geometry of `mesh` in place.
void control_volumes(DeviceMesh& mesh);

/// Drops unreferenced vertices and fills edges/control volumes.
void finalize_mesh(DeviceMesh& mesh);

/// Index of edge (a,b) in `mesh.edges`, or npos.
std::size_t find_edge(const DeviceMesh& mesh, std::size_t a, std::size_t b);

/// Relabels vertices: new vertex k is old vertex perm[k].
DeviceMesh permute_vertices(const DeviceMesh& mesh, std::span<const std::size_t> perm);

// ---------------------------------------------------------------------------

template <typename RegionFn>
DeviceMesh build_tensor_mesh(std::span<const double> xs, std::span<const double> ys,
                             std::vector<Region> regions, std::span<const int> vertex_priority,
                             RegionFn&& region_at) {
    DeviceMesh mesh;
    mesh.regions = std::move(regions);
    const std::size_t nx = xs.size();
    const std::size_t ny = ys.size();
    mesh.vertices.reserve(nx * ny);
    for (std::size_t j = 0; j < ny; ++j)
        for (std::size_t i = 0; i < nx; ++i) mesh.vertices.push_back({xs[i], ys[j]});
    auto id = [nx](std::size_t i, std::size_t j) { return j * nx + i; };

    std::vector<int> vertex_region(nx * ny, -1);
    auto claim = [&](std::size_t v, int r) {
        if (vertex_region[v] < 0 || vertex_priority[r] < vertex_priority[vertex_region[v]])
            vertex_region[v] = r;
    };
    for (std::size_t j = 0; j + 1 < ny; ++j) {
        for (std::size_t i = 0; i + 1 < nx; ++i) {
            const std::size_t v00 = id(i, j), v10 = id(i + 1, j);
            const std::size_t v11 = id(i + 1, j + 1), v01 = id(i, j + 1);
            for (const Triangle& t : {Triangle{v00, v10, v11}, Triangle{v00, v11, v01}}) {
                const Point2D c{(mesh.vertices[t[0]].x + mesh.vertices[t[1]].x + mesh.vertices[t[2]].x) / 3.0,
                                (mesh.vertices[t[0]].y + mesh.vertices[t[1]].y + mesh.vertices[t[2]].y) / 3.0};
                const int r = region_at(c);
                if (r < 0) continue;
                mesh.triangles.push_back(t);
                mesh.region_of_triangle.push_back(r);
                for (std::size_t v : t) claim(v, r);
            }
        }
    }
    mesh.region_of_vertex = std::move(vertex_region);
    return mesh;
}

} // namespace devgraph
