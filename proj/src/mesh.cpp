#include "devgraph/mesh.hpp"

#include "devgraph/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace devgraph {

namespace {

double signed_area(const Point2D& a, const Point2D& b, const Point2D& c) {
    return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
}

double distance(const Point2D& a, const Point2D& b) { return std::hypot(b.x - a.x, b.y - a.y); }

Point2D midpoint(const Point2D& a, const Point2D& b) { return {0.5 * (a.x + b.x), 0.5 * (a.y + b.y)}; }

double dot_at(const Point2D& apex, const Point2D& b, const Point2D& c) {
    return (b.x - apex.x) * (c.x - apex.x) + (b.y - apex.y) * (c.y - apex.y);
}

// Dual point of a triangle: circumcenter for non-obtuse triangles (exactly the
// hypotenuse midpoint for right triangles), barycenter otherwise.
Point2D dual_point(const Point2D& a, const Point2D& b, const Point2D& c) {
    const double da = dot_at(a, b, c), db = dot_at(b, c, a), dc = dot_at(c, a, b);
    if (da < 0.0 || db < 0.0 || dc < 0.0) return {(a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0};
    if (da == 0.0) return midpoint(b, c);
    if (db == 0.0) return midpoint(c, a);
    if (dc == 0.0) return midpoint(a, b);
    const double bx = b.x - a.x, by = b.y - a.y, cx = c.x - a.x, cy = c.y - a.y;
    const double d = 2.0 * (bx * cy - by * cx);
    const double b2 = bx * bx + by * by, c2 = cx * cx + cy * cy;
    return {a.x + (cy * b2 - by * c2) / d, a.y + (bx * c2 - cx * b2) / d};
}

std::vector<double> linspace(double lo, double hi, int n) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
    v.back() = hi;
    return v;
}

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

} // namespace

int DeviceMesh::region_index(const std::string& name) const {
    for (std::size_t r = 0; r < regions.size(); ++r)
        if (regions[r].name == name) return static_cast<int>(r);
    return -1;
}

double DeviceMesh::total_area() const {
    double area = 0.0;
    for (const Triangle& t : triangles)
        area += std::abs(signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]));
    return area;
}

std::vector<Edge> extract_edges(std::span<const Triangle> triangles, std::size_t vertex_count) {
    std::vector<Edge> edges;
    edges.reserve(triangles.size() * 3);
    for (const Triangle& t : triangles) {
        for (int k = 0; k < 3; ++k) {
            std::size_t a = t[k], b = t[(k + 1) % 3];
            if (a >= vertex_count || b >= vertex_count)
                throw InvalidArgument("extract_edges: vertex index " + std::to_string(std::max(a, b)) +
                                      " out of range (vertex count " + std::to_string(vertex_count) + ")");
            if (a == b) throw InvalidArgument("extract_edges: repeated vertex in triangle");
            if (a > b) std::swap(a, b);
            edges.emplace_back(a, b);
        }
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    return edges;
}

std::size_t find_edge(const DeviceMesh& mesh, std::size_t a, std::size_t b) {
    if (a > b) std::swap(a, b);
    auto it = std::lower_bound(mesh.edges.begin(), mesh.edges.end(), Edge{a, b});
    if (it == mesh.edges.end() || *it != Edge{a, b}) return static_cast<std::size_t>(-1);
    return static_cast<std::size_t>(it - mesh.edges.begin());
}

void control_volumes(DeviceMesh& mesh) {
    const std::size_t nv = mesh.vertices.size();
    mesh.edges = extract_edges(mesh.triangles, nv);
    const std::size_t ne = mesh.edges.size();
    mesh.edge_length.assign(ne, 0.0);
    for (std::size_t e = 0; e < ne; ++e)
        mesh.edge_length[e] = distance(mesh.vertices[mesh.edges[e].first], mesh.vertices[mesh.edges[e].second]);
    mesh.cv_volume.assign(nv, 0.0);
    mesh.cv_coeff.assign(ne, 0.0);
    mesh.tri_edge.resize(mesh.triangles.size());
    mesh.tri_edge_coeff.resize(mesh.triangles.size());
    mesh.tri_vertex_volume.resize(mesh.triangles.size());

    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        const Triangle& tri = mesh.triangles[t];
        const Point2D& a = mesh.vertices[tri[0]];
        const Point2D& b = mesh.vertices[tri[1]];
        const Point2D& c = mesh.vertices[tri[2]];
        const double area = std::abs(signed_area(a, b, c));
        const double scale = std::max({distance(a, b), distance(b, c), distance(c, a)});
        if (!(area > 1e-12 * scale * scale))
            throw InvalidArgument("control_volumes: degenerate triangle " + std::to_string(t));

        const Point2D dual = dual_point(a, b, c);
        const std::array<const Point2D*, 3> p{&a, &b, &c};
        std::array<Point2D, 3> mid;
        for (int k = 0; k < 3; ++k) mid[k] = midpoint(*p[k], *p[(k + 1) % 3]);
        for (int k = 0; k < 3; ++k) {
            const std::size_t e = find_edge(mesh, tri[k], tri[(k + 1) % 3]);
            const double coeff = distance(mid[k], dual) / mesh.edge_length[e];
            mesh.tri_edge[t][k] = e;
            mesh.tri_edge_coeff[t][k] = coeff;
            mesh.cv_coeff[e] += coeff;
        }
        for (int k = 0; k < 3; ++k) {
            // vertex k owns the quadrilateral (v_k, mid of its outgoing side, dual, mid of incoming side)
            const Point2D& v = *p[k];
            const double share = std::abs(signed_area(v, mid[k], dual)) +
                                 std::abs(signed_area(v, dual, mid[(k + 2) % 3]));
            mesh.tri_vertex_volume[t][k] = share;
            mesh.cv_volume[tri[k]] += share;
        }
    }
}

void finalize_mesh(DeviceMesh& mesh) {
    const std::size_t nv = mesh.vertices.size();
    std::vector<char> used(nv, 0);
    for (const Triangle& t : mesh.triangles)
        for (std::size_t v : t) {
            if (v >= nv) throw InvalidArgument("finalize_mesh: triangle index out of range");
            used[v] = 1;
        }
    std::vector<std::size_t> remap(nv, static_cast<std::size_t>(-1));
    std::size_t next = 0;
    for (std::size_t v = 0; v < nv; ++v)
        if (used[v]) remap[v] = next++;
    if (next != nv) {
        std::vector<Point2D> verts(next);
        std::vector<int> regs(next);
        for (std::size_t v = 0; v < nv; ++v) {
            if (!used[v]) continue;
            verts[remap[v]] = mesh.vertices[v];
            regs[remap[v]] = v < mesh.region_of_vertex.size() ? mesh.region_of_vertex[v] : 0;
        }
        for (Triangle& t : mesh.triangles)
            for (std::size_t& v : t) v = remap[v];
        for (auto& [name, members] : mesh.contacts) {
            std::vector<std::size_t> kept;
            for (std::size_t v : members)
                if (v < nv && used[v]) kept.push_back(remap[v]);
            members = std::move(kept);
        }
        mesh.vertices = std::move(verts);
        mesh.region_of_vertex = std::move(regs);
    }
    control_volumes(mesh);
}

DeviceMesh permute_vertices(const DeviceMesh& mesh, std::span<const std::size_t> perm) {
    const std::size_t nv = mesh.vertices.size();
    if (perm.size() != nv) throw InvalidArgument("permute_vertices: permutation length mismatch");
    std::vector<std::size_t> inverse(nv, static_cast<std::size_t>(-1));
    for (std::size_t k = 0; k < nv; ++k) {
        if (perm[k] >= nv || inverse[perm[k]] != static_cast<std::size_t>(-1))
            throw InvalidArgument("permute_vertices: not a permutation");
        inverse[perm[k]] = k;
    }
    DeviceMesh out;
    out.regions = mesh.regions;
    out.vertices.resize(nv);
    out.region_of_vertex.resize(nv);
    for (std::size_t k = 0; k < nv; ++k) {
        out.vertices[k] = mesh.vertices[perm[k]];
        out.region_of_vertex[k] = mesh.region_of_vertex[perm[k]];
    }
    out.triangles = mesh.triangles;
    for (Triangle& t : out.triangles)
        for (std::size_t& v : t) v = inverse[v];
    out.region_of_triangle = mesh.region_of_triangle;
    for (const auto& [name, members] : mesh.contacts) {
        std::vector<std::size_t> mapped;
        for (std::size_t v : members) mapped.push_back(inverse[v]);
        std::sort(mapped.begin(), mapped.end());
        out.contacts[name] = std::move(mapped);
    }
    control_volumes(out);
    return out;
}

std::vector<double> graded_lines(std::span<const double> breaks, int count, double ratio,
                                 const std::string& what) {
    if (breaks.size() < 2) throw InvalidArgument(what + ": need at least two breakpoints");
    const std::size_t segments = breaks.size() - 1;
    const int intervals = count - 1;
    if (intervals < static_cast<int>(segments))
        throw InvalidArgument(what + ": " + std::to_string(count) + " grid lines cannot resolve " +
                              std::to_string(segments) + " segments (need at least " +
                              std::to_string(segments + 1) + ")");
    const double total = breaks.back() - breaks.front();
    std::vector<int> n(segments);
    int assigned = 0;
    for (std::size_t s = 0; s < segments; ++s) {
        const double len = breaks[s + 1] - breaks[s];
        n[s] = std::max(1, static_cast<int>(std::floor(intervals * len / total)));
        assigned += n[s];
    }
    // hand out or reclaim intervals where spacing is coarsest / finest
    while (assigned < intervals) {
        std::size_t best = 0;
        double best_h = -1.0;
        for (std::size_t s = 0; s < segments; ++s) {
            const double h = (breaks[s + 1] - breaks[s]) / n[s];
            if (h > best_h) best_h = h, best = s;
        }
        ++n[best];
        ++assigned;
    }
    while (assigned > intervals) {
        std::size_t best = segments;
        double best_h = 0.0;
        for (std::size_t s = 0; s < segments; ++s) {
            if (n[s] <= 1) continue;
            const double h = (breaks[s + 1] - breaks[s]) / n[s];
            if (best == segments || h < best_h) best_h = h, best = s;
        }
        --n[best];
        --assigned;
    }

    std::vector<double> lines{breaks.front()};
    for (std::size_t s = 0; s < segments; ++s) {
        const int m = n[s];
        std::vector<double> w(static_cast<std::size_t>(m));
        for (int k = 0; k < m; ++k) w[static_cast<std::size_t>(k)] = std::pow(ratio, std::min(k, m - 1 - k));
        const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
        const double len = breaks[s + 1] - breaks[s];
        double pos = breaks[s];
        for (int k = 0; k + 1 < m; ++k) {
            pos += len * w[static_cast<std::size_t>(k)] / wsum;
            lines.push_back(pos);
        }
        lines.push_back(breaks[s + 1]);
    }
    return lines;
}

void validate_spec(const DeviceSpec& spec) {
    if (spec.template_id != "planar-nmosfet")
        throw InvalidArgument("template_id: unknown device template '" + spec.template_id + "'");
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument(std::string(name) + " must be > 0");
    };
    positive(spec.gate_length, "gate_length");
    positive(spec.oxide_thickness, "oxide_thickness");
    positive(spec.body_depth, "body_depth");
    positive(spec.well_width, "well_width");
    positive(spec.well_depth, "well_depth");
    if (spec.well_depth >= spec.body_depth)
        throw InvalidArgument("well_depth must be smaller than body_depth (wells would swallow the body)");
    if (spec.nx < 2) throw InvalidArgument("nx must be >= 2");
    if (spec.ny < 2) throw InvalidArgument("ny must be >= 2");
    auto nonneg = [](double v, const char* name) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument(std::string(name) + " must be >= 0");
    };
    nonneg(spec.well_donor, "well_donor");
    nonneg(spec.well_acceptor, "well_acceptor");
    nonneg(spec.body_donor, "body_donor");
    nonneg(spec.body_acceptor, "body_acceptor");
}

DeviceMesh build_device_mesh(const DeviceSpec& spec) {
    validate_spec(spec);
    constexpr double kGrading = 1.2;
    const double ww = spec.well_width, lg = spec.gate_length;
    const double width = 2.0 * ww + lg;
    const double bd = spec.body_depth, top = bd + spec.oxide_thickness;
    const double junction = bd - spec.well_depth;

    const std::array<double, 4> xb{0.0, ww, ww + lg, width};
    const std::array<double, 4> yb{0.0, junction, bd, top};
    const auto xs = graded_lines(xb, spec.nx, kGrading, "nx");
    const auto ys = graded_lines(yb, spec.ny, kGrading, "ny");

    enum : int { kOxide = 0, kSource = 1, kDrain = 2, kBody = 3 };
    std::vector<Region> regions{{"oxide", "SiO2"}, {"source", "Silicon"}, {"drain", "Silicon"}, {"body", "Silicon"}};
    const std::array<int, 4> priority{2, 0, 0, 1};
    DeviceMesh mesh = build_tensor_mesh(xs, ys, std::move(regions), priority, [&](const Point2D& c) -> int {
        if (c.y > bd) return (c.x > ww && c.x < ww + lg) ? kOxide : -1;
        if (c.y > junction) {
            if (c.x < ww) return kSource;
            if (c.x > ww + lg) return kDrain;
        }
        return kBody;
    });
    finalize_mesh(mesh);

    const double tol = 1e-9 * std::max(width, top);
    auto& gate = mesh.contacts["gate"];
    auto& source = mesh.contacts["source"];
    auto& drain = mesh.contacts["drain"];
    auto& body = mesh.contacts["body"];
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        const Point2D& p = mesh.vertices[v];
        if (near(p.y, top, tol)) gate.push_back(v);
        else if (near(p.y, bd, tol) && p.x < ww - tol) source.push_back(v);
        else if (near(p.y, bd, tol) && p.x > ww + lg + tol) drain.push_back(v);
        else if (near(p.y, 0.0, tol)) body.push_back(v);
    }
    for (const auto& [name, members] : mesh.contacts)
        if (members.empty()) throw InvalidArgument("build_device_mesh: contact '" + name + "' has no vertices");
    return mesh;
}

DeviceMesh build_uniform_mesh(int nx, int ny, double width, double height, const std::string& material) {
    if (nx < 2 || ny < 2) throw InvalidArgument("build_uniform_mesh: nx and ny must be >= 2");
    if (!(width > 0.0) || !(height > 0.0)) throw InvalidArgument("build_uniform_mesh: extents must be > 0");
    const auto xs = linspace(0.0, width, nx);
    const auto ys = linspace(0.0, height, ny);
    const std::array<int, 1> priority{0};
    DeviceMesh mesh = build_tensor_mesh(xs, ys, {{"bulk", material}}, priority, [](const Point2D&) { return 0; });
    finalize_mesh(mesh);
    const double tol = 1e-9 * std::max(width, height);
    auto& left = mesh.contacts["left"];
    auto& right = mesh.contacts["right"];
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        if (near(mesh.vertices[v].x, 0.0, tol)) left.push_back(v);
        else if (near(mesh.vertices[v].x, width, tol)) right.push_back(v);
    }
    return mesh;
}

DeviceMesh build_warped_mesh(int rows, double amplitude) {
    if (rows < 3) throw InvalidArgument("build_warped_mesh: rows must be >= 3");
    const double hy = 1.0 / (rows - 1);
    const int m = std::max(2, static_cast<int>(std::lround(1.0 / (hy * 2.0 / std::sqrt(3.0)))));
    const double hx = 1.0 / m;

    DeviceMesh mesh;
    mesh.regions = {{"bulk", "Silicon"}};
    std::vector<std::vector<std::size_t>> row_ids(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        const double y = r == rows - 1 ? 1.0 : r * hy;
        std::vector<double> xs;
        if (r % 2 == 0) {
            for (int i = 0; i <= m; ++i) xs.push_back(i == m ? 1.0 : i * hx);
        } else {
            xs.push_back(0.0);
            for (int i = 0; i < m; ++i) xs.push_back((i + 0.5) * hx);
            xs.push_back(1.0);
        }
        for (double x : xs) {
            const double warped = x + amplitude * std::sin(std::numbers::pi * x) * (0.5 + 0.5 * y);
            row_ids[static_cast<std::size_t>(r)].push_back(mesh.vertices.size());
            mesh.vertices.push_back({warped, y});
        }
    }
    for (int r = 0; r + 1 < rows; ++r) {
        const auto& lo = row_ids[static_cast<std::size_t>(r)];
        const auto& hi = row_ids[static_cast<std::size_t>(r + 1)];
        std::size_t i = 0, j = 0;
        while (i + 1 < lo.size() || j + 1 < hi.size()) {
            bool advance_low;
            if (i + 1 == lo.size()) advance_low = false;
            else if (j + 1 == hi.size()) advance_low = true;
            else
                advance_low = distance(mesh.vertices[lo[i + 1]], mesh.vertices[hi[j]]) <=
                              distance(mesh.vertices[lo[i]], mesh.vertices[hi[j + 1]]);
            if (advance_low) {
                mesh.triangles.push_back({lo[i], lo[i + 1], hi[j]});
                ++i;
            } else {
                mesh.triangles.push_back({lo[i], hi[j + 1], hi[j]});
                ++j;
            }
        }
    }
    mesh.region_of_vertex.assign(mesh.vertices.size(), 0);
    mesh.region_of_triangle.assign(mesh.triangles.size(), 0);
    finalize_mesh(mesh);
    auto& boundary = mesh.contacts["boundary"];
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        const Point2D& p = mesh.vertices[v];
        if (near(p.x, 0.0, 1e-12) || near(p.x, 1.0, 1e-12) || near(p.y, 0.0, 1e-12) || near(p.y, 1.0, 1e-12))
            boundary.push_back(v);
    }
    return mesh;
}

} // namespace devgraph
