#include "devgraph/physics.hpp"

#include "devgraph/error.hpp"

#include <Eigen/OrderingMethods>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <type_traits>

namespace devgraph::physics {

namespace {

// Boltzmann exponent argument clamp: keeps damped-but-wild Newton iterates finite.
constexpr double kMaxExponent = 200.0;

double clamped_exp(double x) { return std::exp(std::clamp(x, -kMaxExponent, kMaxExponent)); }

// Edge and vertex coefficients of the box-method discretization for one device.
struct Discretization {
    std::vector<double> poisson_coeff; // per edge: sum over incident triangles of eps * c
    std::vector<long double> dn_coeff; // per edge: D_n * c over semiconductor triangles
    std::vector<long double> dp_coeff;
    std::vector<double> semi_volume;   // per vertex: control volume inside semiconductor
    std::vector<char> semiconductor;   // per vertex
    std::vector<double> intrinsic;     // per vertex n_i (0 outside semiconductors)
};

Discretization discretize(const Device& device, double temperature) {
    const DeviceMesh& mesh = device.mesh;
    std::vector<MaterialParams> region_params;
    for (int r = 0; r < static_cast<int>(mesh.regions.size()); ++r)
        region_params.push_back(MaterialParams::from_file(device.material_of_region(r), temperature));

    Discretization d;
    d.poisson_coeff.assign(mesh.edge_count(), 0.0);
    d.dn_coeff.assign(mesh.edge_count(), 0.0L);
    d.dp_coeff.assign(mesh.edge_count(), 0.0L);
    d.semi_volume.assign(mesh.vertex_count(), 0.0);
    d.semiconductor.assign(mesh.vertex_count(), 0);
    d.intrinsic.assign(mesh.vertex_count(), 0.0);
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        const MaterialParams& m = region_params[static_cast<std::size_t>(mesh.region_of_triangle[t])];
        for (int k = 0; k < 3; ++k) {
            const std::size_t e = mesh.tri_edge[t][k];
            const double c = mesh.tri_edge_coeff[t][k];
            d.poisson_coeff[e] += m.permittivity * c;
            if (m.is_semiconductor()) {
                d.dn_coeff[e] += static_cast<long double>(m.diffusivity_n) * c;
                d.dp_coeff[e] += static_cast<long double>(m.diffusivity_p) * c;
                const std::size_t v = mesh.triangles[t][k];
                d.semi_volume[v] += mesh.tri_vertex_volume[t][k];
                d.semiconductor[v] = 1;
            }
        }
    }
    for (std::size_t v = 0; v < mesh.vertex_count(); ++v) {
        const MaterialParams& m = region_params[static_cast<std::size_t>(mesh.region_of_vertex[v])];
        if (d.semiconductor[v]) {
            if (!m.is_semiconductor())
                throw InvalidArgument("vertex " + std::to_string(v) +
                                      " touches a semiconductor triangle but its region is not a semiconductor");
            d.intrinsic[v] = m.intrinsic_density;
        }
    }
    return d;
}

template <typename Scalar>
using SparseMatrix = Eigen::SparseMatrix<Scalar>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
Vector<Scalar> sparse_solve(const SparseMatrix<Scalar>& a, const Vector<Scalar>& b, double tolerance,
                            const char* what) {
    Eigen::SparseLU<SparseMatrix<Scalar>, Eigen::COLAMDOrdering<int>> lu;
    lu.compute(a);
    if (lu.info() != Eigen::Success) throw ConvergenceError(std::string(what) + ": sparse factorization failed", {});
    Vector<Scalar> x = lu.solve(b);
    // one step of iterative refinement
    Vector<Scalar> r = b - a * x;
    x += lu.solve(r);
    r = b - a * x;
    using std::abs;
    Scalar scale = 0;
    for (int k = 0; k < a.outerSize(); ++k)
        for (typename SparseMatrix<Scalar>::InnerIterator it(a, k); it; ++it)
            scale = std::max<Scalar>(scale, abs(it.value()) * abs(x[it.col()]));
    scale = std::max<Scalar>(scale, b.cwiseAbs().maxCoeff());
    const Scalar rel = scale > 0 ? r.cwiseAbs().maxCoeff() / scale : Scalar(0);
    if (!(static_cast<double>(rel) <= tolerance))
        throw ConvergenceError(std::string(what) + ": linear residual " + std::to_string(static_cast<double>(rel)) +
                                   " above tolerance",
                               {static_cast<double>(rel)});
    return x;
}

// Newton solve of the nonlinear Poisson equation with frozen quasi-Fermi
// potentials; phi holds the initial guess and receives the solution.
void newton_poisson(const Device& device, const Discretization& disc, const DirichletValues& dirichlet,
                    std::span<const double> phi_n, std::span<const double> phi_p, double vt,
                    const SolverOptions& options, std::vector<double>& phi) {
    const DeviceMesh& mesh = device.mesh;
    const std::size_t nv = mesh.vertex_count();
    const auto& nd = device.doping.donors;
    const auto& na = device.doping.acceptors;
    for (std::size_t v = 0; v < nv; ++v)
        if (dirichlet[v]) phi[v] = *dirichlet[v];

    std::vector<double> history;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(nv + 4 * mesh.edge_count());
    for (int it = 0; it < options.newton_max_iterations; ++it) {
        Vector<double> f = Vector<double>::Zero(static_cast<Eigen::Index>(nv));
        std::vector<double> diag(nv, 0.0);
        trip.clear();
        for (std::size_t e = 0; e < mesh.edge_count(); ++e) {
            const auto [a, b] = mesh.edges[e];
            const double k = disc.poisson_coeff[e];
            if (k == 0.0) continue;
            const double flux = k * (phi[b] - phi[a]);
            if (!dirichlet[a]) {
                f[static_cast<Eigen::Index>(a)] += flux;
                diag[a] -= k;
                trip.emplace_back(a, b, k);
            }
            if (!dirichlet[b]) {
                f[static_cast<Eigen::Index>(b)] -= flux;
                diag[b] -= k;
                trip.emplace_back(b, a, k);
            }
        }
        for (std::size_t v = 0; v < nv; ++v) {
            if (dirichlet[v]) {
                diag[v] = 1.0;
                continue;
            }
            if (!disc.semiconductor[v]) continue;
            const double ni = disc.intrinsic[v];
            const double n = ni * clamped_exp((phi[v] - phi_n[v]) / vt);
            const double p = ni * clamped_exp((phi_p[v] - phi[v]) / vt);
            const double q_vol = kElementaryCharge * disc.semi_volume[v];
            f[static_cast<Eigen::Index>(v)] += q_vol * (p - n + nd[v] - na[v]);
            diag[v] -= q_vol * (p + n) / vt;
        }
        for (std::size_t v = 0; v < nv; ++v) trip.emplace_back(v, v, diag[v]);

        SparseMatrix<double> jac(static_cast<Eigen::Index>(nv), static_cast<Eigen::Index>(nv));
        jac.setFromTriplets(trip.begin(), trip.end());
        // Jacobi row scaling
        Vector<double> inv_diag(static_cast<Eigen::Index>(nv));
        for (std::size_t v = 0; v < nv; ++v) inv_diag[static_cast<Eigen::Index>(v)] = 1.0 / std::abs(diag[v]);
        jac = inv_diag.asDiagonal() * jac;
        Vector<double> rhs = -(inv_diag.asDiagonal() * f);
        const Vector<double> delta = sparse_solve<double>(jac, rhs, 1e-8, "Poisson Newton");

        double max_step = 0.0;
        for (std::size_t v = 0; v < nv; ++v) {
            const double dv = delta[static_cast<Eigen::Index>(v)];
            if (!std::isfinite(dv)) throw ConvergenceError("Poisson Newton: non-finite update", history);
            max_step = std::max(max_step, std::abs(dv));
            // logarithmic damping of large steps
            const double damped = std::abs(dv) > vt ? std::copysign(vt * (1.0 + std::log(std::abs(dv) / vt)), dv) : dv;
            phi[v] += damped;
        }
        history.push_back(max_step);
        if (max_step <= options.newton_tolerance) return;
    }
    throw ConvergenceError("Poisson Newton did not converge; last max|dphi| = " +
                               std::to_string(history.empty() ? 0.0 : history.back()),
                           history);
}

// Carrier continuity with Scharfetter-Gummel fluxes; returns densities in
// extended precision. `electrons` selects the carrier type.
// Row-scaled continuity system. Free rows are flux balances; contact and
// non-semiconductor rows pin the density.
struct ContinuitySystem {
    SparseMatrix<long double> a;
    Vector<long double> rhs;
    Vector<long double> inv_diag;
};

ContinuitySystem assemble_continuity(const Device& device, const Discretization& disc, std::span<const double> phi,
                                     const std::vector<std::optional<long double>>& fixed, double vt, bool electrons) {
    const DeviceMesh& mesh = device.mesh;
    const std::size_t nv = mesh.vertex_count();
    const auto& coeff = electrons ? disc.dn_coeff : disc.dp_coeff;
    std::vector<Eigen::Triplet<long double>> trip;
    trip.reserve(nv + 4 * mesh.edge_count());
    std::vector<long double> diag(nv, 0.0L);
    ContinuitySystem sys;
    sys.rhs = Vector<long double>::Zero(static_cast<Eigen::Index>(nv));
    auto is_free = [&](std::size_t v) { return disc.semiconductor[v] && !fixed[v]; };
    for (std::size_t e = 0; e < mesh.edge_count(); ++e) {
        const long double dc = coeff[e];
        if (dc == 0.0L) continue;
        const auto [a, b] = mesh.edges[e];
        const long double delta = (static_cast<long double>(phi[b]) - phi[a]) / vt;
        const long double bp = bernoulli(delta), bm = bernoulli(-delta);
        // electron current a->b: dc [B(d) n_b - B(-d) n_a]; hole: dc [B(d) p_a - B(-d) p_b]
        const long double self_a = electrons ? -dc * bm : dc * bp;
        const long double other_a = electrons ? dc * bp : -dc * bm;
        const long double self_b = electrons ? -dc * bp : dc * bm;
        const long double other_b = electrons ? dc * bm : -dc * bp;
        if (is_free(a)) {
            diag[a] += self_a;
            trip.emplace_back(a, b, other_a);
        }
        if (is_free(b)) {
            diag[b] += self_b;
            trip.emplace_back(b, a, other_b);
        }
    }
    for (std::size_t v = 0; v < nv; ++v) {
        if (!is_free(v)) {
            diag[v] = 1.0L;
            sys.rhs[static_cast<Eigen::Index>(v)] = fixed[v] ? *fixed[v] : 0.0L;
        }
        trip.emplace_back(v, v, diag[v]);
    }
    sys.a.resize(static_cast<Eigen::Index>(nv), static_cast<Eigen::Index>(nv));
    sys.a.setFromTriplets(trip.begin(), trip.end());
    sys.inv_diag.resize(static_cast<Eigen::Index>(nv));
    for (std::size_t v = 0; v < nv; ++v) sys.inv_diag[static_cast<Eigen::Index>(v)] = 1.0L / std::abs(diag[v]);
    sys.a = sys.inv_diag.asDiagonal() * sys.a;
    sys.rhs = sys.inv_diag.asDiagonal() * sys.rhs;
    return sys;
}

template <typename Scalar>
std::vector<Scalar> clamp_densities(const Discretization& disc, std::vector<Scalar> x) {
    for (std::size_t v = 0; v < x.size(); ++v)
        x[v] = disc.semiconductor[v] ? std::max<Scalar>(x[v], std::numeric_limits<long double>::min()) : Scalar(0);
    return x;
}

std::vector<long double> solve_continuity(const Device& device, const Discretization& disc,
                                          std::span<const double> phi, const std::vector<std::optional<long double>>& fixed,
                                          double vt, bool electrons, double tolerance) {
    const auto sys = assemble_continuity(device, disc, phi, fixed, vt, electrons);
    const Vector<long double> x =
        sparse_solve<long double>(sys.a, sys.rhs, tolerance, electrons ? "electron continuity" : "hole continuity");
    return clamp_densities(disc, std::vector<long double>(x.data(), x.data() + x.size()));
}

using Quad = __float128;

// Continuity solve refined with residuals in quad precision, so that edge
// fluxes cancel well below long double round-off at heavily doped contacts.
std::vector<Quad> refine_continuity(const Device& device, const Discretization& disc, std::span<const double> phi,
                                    const std::vector<std::optional<long double>>& fixed, double vt, bool electrons,
                                    const std::vector<long double>& start) {
    const DeviceMesh& mesh = device.mesh;
    const std::size_t nv = mesh.vertex_count();
    const auto& coeff = electrons ? disc.dn_coeff : disc.dp_coeff;
    const auto sys = assemble_continuity(device, disc, phi, fixed, vt, electrons);
    Eigen::SparseLU<SparseMatrix<long double>, Eigen::COLAMDOrdering<int>> lu;
    lu.compute(sys.a);
    if (lu.info() != Eigen::Success) throw ConvergenceError("continuity refinement: factorization failed", {});
    std::vector<long double> bp(mesh.edge_count()), bm(mesh.edge_count());
    for (std::size_t e = 0; e < mesh.edge_count(); ++e) {
        const auto [a, b] = mesh.edges[e];
        const long double delta = (static_cast<long double>(phi[b]) - phi[a]) / vt;
        bp[e] = bernoulli(delta);
        bm[e] = bernoulli(-delta);
    }
    auto is_free = [&](std::size_t v) { return disc.semiconductor[v] && !fixed[v]; };
    std::vector<Quad> x(start.begin(), start.end());
    std::vector<Quad> r(nv);
    Vector<long double> scaled(static_cast<Eigen::Index>(nv));
    for (int pass = 0; pass < 4; ++pass) {
        for (std::size_t v = 0; v < nv; ++v)
            r[v] = is_free(v) ? Quad(0) : Quad(fixed[v] ? *fixed[v] : 0.0L) - x[v];
        for (std::size_t e = 0; e < mesh.edge_count(); ++e) {
            if (coeff[e] == 0.0L) continue;
            const auto [a, b] = mesh.edges[e];
            const Quad j = electrons ? Quad(coeff[e]) * (Quad(bp[e]) * x[b] - Quad(bm[e]) * x[a])
                                     : Quad(coeff[e]) * (Quad(bp[e]) * x[a] - Quad(bm[e]) * x[b]);
            if (is_free(a)) r[a] -= j;
            if (is_free(b)) r[b] += j;
        }
        for (std::size_t v = 0; v < nv; ++v)
            scaled[static_cast<Eigen::Index>(v)] = static_cast<long double>(r[v]) * sys.inv_diag[static_cast<Eigen::Index>(v)];
        const Vector<long double> dx = lu.solve(scaled);
        for (std::size_t v = 0; v < nv; ++v) x[v] += Quad(dx[static_cast<Eigen::Index>(v)]);
    }
    return clamp_densities(disc, std::move(x));
}

// Net conventional current leaving the contact's vertices into the device.
template <typename Density>
double terminal_current(const Device& device, const Discretization& disc, std::span<const double> phi,
                        const Density& n, const Density& p, const std::vector<std::size_t>& members, double vt) {
    using Scalar = std::conditional_t<std::is_same_v<std::decay_t<decltype(n[0])>, Quad>, Quad, long double>;
    const DeviceMesh& mesh = device.mesh;
    std::vector<char> in_contact(mesh.vertex_count(), 0);
    for (std::size_t v : members) in_contact[v] = 1;
    Scalar total = 0;
    for (std::size_t e = 0; e < mesh.edge_count(); ++e) {
        const auto [a, b] = mesh.edges[e];
        if (in_contact[a] == in_contact[b]) continue;
        const long double delta = (static_cast<long double>(phi[b]) - phi[a]) / vt;
        const Scalar bp = bernoulli(delta), bm = bernoulli(-delta);
        const Scalar na = n[a], nb = n[b], pa = p[a], pb = p[b];
        const Scalar jn = Scalar(disc.dn_coeff[e]) * (bp * nb - bm * na);
        const Scalar jp = Scalar(disc.dp_coeff[e]) * (bp * pa - bm * pb);
        const Scalar j_ab = jn + jp;
        total += in_contact[a] ? j_ab : -j_ab;
    }
    return static_cast<double>(total * Scalar(kElementaryCharge));
}

void require_doping(const Device& device) {
    const std::size_t nv = device.mesh.vertex_count();
    if (device.doping.donors.size() != nv || device.doping.acceptors.size() != nv)
        throw InvalidArgument("doping profile length does not match vertex count");
}

} // namespace

// ---------------------------------------------------------------- basics

double thermal_voltage(double temperature) {
    if (!(temperature > 0.0)) throw InvalidArgument("temperature must be > 0 K");
    return kBoltzmann * temperature / kElementaryCharge;
}

MaterialParams MaterialParams::from_file(const io::ParameterFile& file, double temperature) {
    const double vt = thermal_voltage(temperature);
    MaterialParams m;
    m.material_class = file.material_class;
    m.permittivity = file.permittivity * kVacuumPermittivity;
    if (m.is_semiconductor()) {
        m.mobility_n = file.mobility_n;
        m.mobility_p = file.mobility_p;
        m.diffusivity_n = file.mobility_n * vt;
        m.diffusivity_p = file.mobility_p * vt;
        m.intrinsic_density = file.intrinsic_density;
    }
    return m;
}

const io::ParameterFile& Device::material_of_region(int region) const {
    if (region < 0 || static_cast<std::size_t>(region) >= mesh.regions.size())
        throw InvalidArgument("region index " + std::to_string(region) + " out of range");
    const std::string& name = mesh.regions[static_cast<std::size_t>(region)].material;
    auto it = materials.find(name);
    if (it == materials.end())
        throw InvalidArgument("region '" + mesh.regions[static_cast<std::size_t>(region)].name +
                              "' uses unknown material '" + name + "'");
    return it->second;
}

double BiasPoint::voltage(const std::string& contact) const {
    auto it = voltages.find(contact);
    return it == voltages.end() ? 0.0 : it->second;
}

std::vector<double> charge_density(std::span<const double> n, std::span<const double> p,
                                   std::span<const double> donors, std::span<const double> acceptors) {
    if (p.size() != n.size() || donors.size() != n.size() || acceptors.size() != n.size())
        throw InvalidArgument("charge_density: length mismatch (n=" + std::to_string(n.size()) + ", p=" +
                              std::to_string(p.size()) + ", N_D=" + std::to_string(donors.size()) +
                              ", N_A=" + std::to_string(acceptors.size()) + ")");
    std::vector<double> rho(n.size());
    for (std::size_t i = 0; i < n.size(); ++i) rho[i] = kElementaryCharge * (p[i] - n[i] + donors[i] - acceptors[i]);
    return rho;
}

double bernoulli(double x) {
    if (std::abs(x) < 1e-4) return 1.0 - x / 2.0 + x * x / 12.0;
    return x / std::expm1(x);
}

long double bernoulli(long double x) {
    if (std::abs(x) < 1e-4L) return 1.0L - x / 2.0L + x * x / 12.0L;
    return x / std::expm1(x);
}

double sg_electron_flux(double delta, double n_i, double n_j, double dc) {
    return dc * (bernoulli(delta) * n_j - bernoulli(-delta) * n_i);
}

double sg_hole_flux(double delta, double p_i, double p_j, double dc) {
    return dc * (bernoulli(delta) * p_i - bernoulli(-delta) * p_j);
}

double neutral_potential(double net_doping, double intrinsic_density, double vt) {
    return vt * std::asinh(net_doping / (2.0 * intrinsic_density));
}

// ---------------------------------------------------------------- linear Poisson

DirichletValues dirichlet_from_contacts(const DeviceMesh& mesh, const std::map<std::string, double>& values) {
    DirichletValues out(mesh.vertex_count());
    for (const auto& [name, value] : values) {
        auto it = mesh.contacts.find(name);
        if (it == mesh.contacts.end()) throw InvalidArgument("unknown contact '" + name + "'");
        for (std::size_t v : it->second) out[v] = value;
    }
    return out;
}

std::vector<double> solve_linear_poisson(const DeviceMesh& mesh, std::span<const double> region_permittivity,
                                         std::span<const double> rho, const DirichletValues& dirichlet) {
    const std::size_t nv = mesh.vertex_count();
    if (rho.size() != nv || dirichlet.size() != nv)
        throw InvalidArgument("solve_linear_poisson: rho/dirichlet length does not match vertex count");
    if (region_permittivity.size() < mesh.regions.size())
        throw InvalidArgument("solve_linear_poisson: missing permittivity for some regions");
    if (std::none_of(dirichlet.begin(), dirichlet.end(), [](const auto& d) { return d.has_value(); }))
        throw InvalidArgument("solve_linear_poisson: no Dirichlet vertex, system is singular");

    std::vector<double> k(mesh.edge_count(), 0.0);
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        const double eps = region_permittivity[static_cast<std::size_t>(mesh.region_of_triangle[t])];
        for (int s = 0; s < 3; ++s) k[mesh.tri_edge[t][s]] += eps * mesh.tri_edge_coeff[t][s];
    }
    std::vector<Eigen::Triplet<double>> trip;
    std::vector<double> diag(nv, 0.0);
    Vector<double> rhs(static_cast<Eigen::Index>(nv));
    for (std::size_t v = 0; v < nv; ++v)
        rhs[static_cast<Eigen::Index>(v)] = dirichlet[v] ? *dirichlet[v] : -rho[v] * mesh.cv_volume[v];
    for (std::size_t e = 0; e < mesh.edge_count(); ++e) {
        const auto [a, b] = mesh.edges[e];
        if (k[e] == 0.0) continue;
        if (!dirichlet[a]) {
            diag[a] -= k[e];
            trip.emplace_back(a, b, k[e]);
        }
        if (!dirichlet[b]) {
            diag[b] -= k[e];
            trip.emplace_back(b, a, k[e]);
        }
    }
    for (std::size_t v = 0; v < nv; ++v) {
        if (dirichlet[v]) diag[v] = 1.0;
        else if (diag[v] == 0.0)
            throw InvalidArgument("solve_linear_poisson: vertex " + std::to_string(v) + " is not coupled to the mesh");
        trip.emplace_back(v, v, diag[v]);
    }
    SparseMatrix<double> a(static_cast<Eigen::Index>(nv), static_cast<Eigen::Index>(nv));
    a.setFromTriplets(trip.begin(), trip.end());
    const Vector<double> x = sparse_solve<double>(a, rhs, 1e-10, "linear Poisson");
    return std::vector<double>(x.data(), x.data() + x.size());
}

std::vector<double> solve_linear_poisson(const DeviceMesh& mesh, std::span<const double> region_permittivity,
                                         std::span<const double> rho,
                                         const std::map<std::string, double>& contact_values) {
    return solve_linear_poisson(mesh, region_permittivity, rho, dirichlet_from_contacts(mesh, contact_values));
}

// ---------------------------------------------------------------- nonlinear solves

namespace {

struct ContactBoundary {
    DirichletValues potential;
    std::vector<std::optional<long double>> electrons;
    std::vector<std::optional<long double>> holes;
    std::vector<double> quasi_fermi; // applied voltage at ohmic vertices
};

ContactBoundary contact_boundary(const Device& device, const Discretization& disc, const BiasPoint& bias,
                                 double scale) {
    const DeviceMesh& mesh = device.mesh;
    const std::size_t nv = mesh.vertex_count();
    const double vt = bias.thermal_voltage();
    ContactBoundary bc{DirichletValues(nv), std::vector<std::optional<long double>>(nv),
                       std::vector<std::optional<long double>>(nv), std::vector<double>(nv, 0.0)};
    for (const auto& [name, spec] : device.contacts) {
        auto it = mesh.contacts.find(name);
        if (it == mesh.contacts.end()) throw InvalidArgument("contact '" + name + "' not present in mesh");
        const double v_applied = scale * bias.voltage(name);
        for (std::size_t v : it->second) {
            if (spec.kind == ContactKind::gate) {
                bc.potential[v] = v_applied + spec.work_function_offset;
                continue;
            }
            if (!disc.semiconductor[v])
                throw InvalidArgument("ohmic contact '" + name + "' touches a non-semiconductor vertex");
            const long double ni = disc.intrinsic[v];
            const long double net = static_cast<long double>(device.doping.donors[v]) - device.doping.acceptors[v];
            const long double half = net / 2.0L;
            const long double root = std::sqrt(half * half + ni * ni);
            long double n, p;
            if (net >= 0) {
                n = half + root;
                p = ni * ni / n;
            } else {
                p = -half + root;
                n = ni * ni / p;
            }
            bc.potential[v] = v_applied + neutral_potential(static_cast<double>(net), static_cast<double>(ni), vt);
            bc.electrons[v] = n;
            bc.holes[v] = p;
            bc.quasi_fermi[v] = v_applied;
        }
    }
    return bc;
}

struct GummelState {
    std::vector<double> phi, phi_n, phi_p;
    std::vector<long double> n, p;
};

std::vector<double> initial_potential(const Device& device, const Discretization& disc, double vt) {
    const std::size_t nv = device.mesh.vertex_count();
    std::vector<double> phi(nv, 0.0);
    for (std::size_t v = 0; v < nv; ++v)
        if (disc.semiconductor[v])
            phi[v] = neutral_potential(device.doping.donors[v] - device.doping.acceptors[v], disc.intrinsic[v], vt);
    return phi;
}

// Runs Gummel iterations at a fixed bias; returns false on hitting the cap.
bool gummel_iterate(const Device& device, const Discretization& disc, const ContactBoundary& bc, double vt,
                    double tolerance, const SolverOptions& options, GummelState& s, std::vector<double>& history,
                    int& iterations) {
    const std::size_t nv = device.mesh.vertex_count();
    for (int it = 0; it < options.gummel_max_iterations; ++it) {
        const std::vector<double> previous = s.phi;
        newton_poisson(device, disc, bc.potential, s.phi_n, s.phi_p, vt, options, s.phi);
        s.n = solve_continuity(device, disc, s.phi, bc.electrons, vt, true, options.linear_tolerance);
        s.p = solve_continuity(device, disc, s.phi, bc.holes, vt, false, options.linear_tolerance);
        for (std::size_t v = 0; v < nv; ++v) {
            if (!disc.semiconductor[v]) continue;
            const long double ni = disc.intrinsic[v];
            s.phi_n[v] = static_cast<double>(s.phi[v] - vt * std::log(s.n[v] / ni));
            s.phi_p[v] = static_cast<double>(s.phi[v] + vt * std::log(s.p[v] / ni));
        }
        double change = 0.0;
        for (std::size_t v = 0; v < nv; ++v) change = std::max(change, std::abs(s.phi[v] - previous[v]));
        history.push_back(change);
        ++iterations;
        if (change <= tolerance) return true;
    }
    return false;
}

} // namespace

std::vector<double> equilibrium_potential(const Device& device, double temperature, const SolverOptions& options) {
    require_doping(device);
    const Discretization disc = discretize(device, temperature);
    if (std::none_of(disc.semiconductor.begin(), disc.semiconductor.end(), [](char c) { return c != 0; }))
        throw InvalidArgument("equilibrium_potential: device has no semiconductor region");
    const double vt = thermal_voltage(temperature);
    BiasPoint zero;
    zero.temperature = temperature;
    const ContactBoundary bc = contact_boundary(device, disc, zero, 0.0);
    std::vector<double> phi = initial_potential(device, disc, vt);
    const std::vector<double> fermi(device.mesh.vertex_count(), 0.0);
    newton_poisson(device, disc, bc.potential, fermi, fermi, vt, options, phi);
    return phi;
}

SolutionFields gummel_solve(const Device& device, const BiasPoint& bias, const SolverOptions& options) {
    require_doping(device);
    const DeviceMesh& mesh = device.mesh;
    const std::size_t nv = mesh.vertex_count();
    const double vt = bias.thermal_voltage();
    const Discretization disc = discretize(device, bias.temperature);

    GummelState state;
    state.phi = initial_potential(device, disc, vt);
    state.phi_n.assign(nv, 0.0);
    state.phi_p.assign(nv, 0.0);
    std::vector<double> history;
    int iterations = 0;

    double max_bias = 0.0;
    for (const auto& [name, spec] : device.contacts) max_bias = std::max(max_bias, std::abs(bias.voltage(name)));

    // equilibrium start, then continuation in the applied bias
    {
        const ContactBoundary bc = contact_boundary(device, disc, bias, 0.0);
        if (!gummel_iterate(device, disc, bc, vt, options.gummel_tolerance, options, state, history, iterations))
            throw ConvergenceError("Gummel iteration did not converge at equilibrium", history);
    }
    double reached = 0.0;
    double step = max_bias > 0.0 ? std::min(1.0, options.max_bias_step / max_bias) : 1.0;
    const double min_step = step / 64.0;
    while (reached < 1.0) {
        const double target = std::min(1.0, reached + step);
        const bool final_step = target >= 1.0;
        const double tol = final_step ? options.gummel_tolerance : std::max(options.gummel_tolerance, 1e-5);
        GummelState trial = state;
        const ContactBoundary bc = contact_boundary(device, disc, bias, target);
        bool ok = false;
        try {
            ok = gummel_iterate(device, disc, bc, vt, tol, options, trial, history, iterations);
        } catch (const ConvergenceError&) {
            ok = false;
        }
        if (ok) {
            state = std::move(trial);
            reached = target;
            step = std::min(step * 1.5, 1.0);
        } else {
            step *= 0.5;
            if (step < min_step)
                throw ConvergenceError("Gummel iteration did not converge (bias fraction " + std::to_string(target) +
                                           ", " + std::to_string(iterations) + " iterations)",
                                       history);
        }
    }

    SolutionFields out;
    out.potential = state.phi;
    out.electrons.resize(nv);
    out.holes.resize(nv);
    for (std::size_t v = 0; v < nv; ++v) {
        out.electrons[v] = static_cast<double>(state.n[v]);
        out.holes[v] = static_cast<double>(state.p[v]);
    }
    out.charge = charge_density(out.electrons, out.holes, device.doping.donors, device.doping.acceptors);
    for (std::size_t v = 0; v < nv; ++v)
        if (!disc.semiconductor[v]) out.charge[v] = 0.0;
    const ContactBoundary bc = contact_boundary(device, disc, bias, 1.0);
    const auto n = refine_continuity(device, disc, state.phi, bc.electrons, vt, true, state.n);
    const auto p = refine_continuity(device, disc, state.phi, bc.holes, vt, false, state.p);
    for (const auto& [name, spec] : device.contacts) {
        const auto& members = mesh.contacts.at(name);
        out.currents[name] =
            spec.kind == ContactKind::gate ? 0.0 : terminal_current(device, disc, state.phi, n, p, members, vt);
    }
    out.iterations = iterations;
    out.residual_history = std::move(history);
    return out;
}

double contact_current(const SolutionFields& fields, const Device& device, const BiasPoint& bias,
                       const std::string& contact) {
    auto it = device.mesh.contacts.find(contact);
    if (it == device.mesh.contacts.end()) throw InvalidArgument("unknown contact '" + contact + "'");
    const std::size_t nv = device.mesh.vertex_count();
    if (fields.potential.size() != nv || fields.electrons.size() != nv || fields.holes.size() != nv)
        throw InvalidArgument("contact_current: field length does not match vertex count");
    const Discretization disc = discretize(device, bias.temperature);
    return static_cast<double>(terminal_current(device, disc, fields.potential, fields.electrons, fields.holes,
                                                it->second, bias.thermal_voltage()));
}

Device make_nmosfet(const DeviceSpec& spec, double gate_work_function) {
    Device device;
    device.mesh = build_device_mesh(spec);
    device.materials["Silicon"] = io::silicon_parameters();
    device.materials["SiO2"] = io::oxide_parameters();
    const std::size_t nv = device.mesh.vertex_count();
    device.doping.donors.assign(nv, 0.0);
    device.doping.acceptors.assign(nv, 0.0);
    for (std::size_t v = 0; v < nv; ++v) {
        const std::string& region = device.mesh.regions[static_cast<std::size_t>(device.mesh.region_of_vertex[v])].name;
        if (region == "source" || region == "drain") {
            device.doping.donors[v] = spec.well_donor;
            device.doping.acceptors[v] = spec.well_acceptor;
        } else if (region == "body") {
            device.doping.donors[v] = spec.body_donor;
            device.doping.acceptors[v] = spec.body_acceptor;
        }
    }
    device.contacts["gate"] = {ContactKind::gate, gate_work_function};
    device.contacts["source"] = {ContactKind::ohmic, 0.0};
    device.contacts["drain"] = {ContactKind::ohmic, 0.0};
    device.contacts["body"] = {ContactKind::ohmic, 0.0};
    return device;
}

} // namespace devgraph::physics
