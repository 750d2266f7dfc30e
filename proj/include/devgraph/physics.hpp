#pragma once

#include "devgraph/device_io.hpp"
#include "devgraph/mesh.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace devgraph::physics {

inline constexpr double kElementaryCharge = 1.602176634e-19; // C
inline constexpr double kBoltzmann = 1.380649e-23;           // J/K
inline constexpr double kVacuumPermittivity = 8.8541878128e-12; // F/m

/// kT/q in volts.
double thermal_voltage(double temperature);

/// Material constants at a given temperature, SI units.
struct MaterialParams {
    io::MaterialClass material_class = io::MaterialClass::semiconductor;
    double permittivity = kVacuumPermittivity; // F/m
    double mobility_n = 0.0;                   // m^2/Vs
    double mobility_p = 0.0;
    double diffusivity_n = 0.0;                // m^2/s, mu * V_T
    double diffusivity_p = 0.0;
    double intrinsic_density = 0.0;            // 1/m^3

    bool is_semiconductor() const noexcept { return material_class == io::MaterialClass::semiconductor; }
    static MaterialParams from_file(const io::ParameterFile& file, double temperature);
};

struct DopingProfile {
    std::vector<double> donors;    // N_D per vertex, 1/m^3
    std::vector<double> acceptors; // N_A per vertex, 1/m^3
};

enum class ContactKind { ohmic, gate };

struct ContactSpec {
    ContactKind kind = ContactKind::ohmic;
    /// Added to the applied voltage on gate contacts.
    double work_function_offset = 0.0;
};

/// Everything the solvers need about a device besides the bias.
struct Device {
    DeviceMesh mesh;
    std::map<std::string, io::ParameterFile> materials; // keyed by material name
    DopingProfile doping;
    std::map<std::string, ContactSpec> contacts;       // contacts with boundary conditions

    const io::ParameterFile& material_of_region(int region) const;
};

struct BiasPoint {
    std::map<std::string, double> voltages; // V per contact; missing contacts sit at 0 V
    double temperature = 300.0;             // K

    double thermal_voltage() const { return physics::thermal_voltage(temperature); }
    double voltage(const std::string& contact) const;
};

struct SolutionFields {
    std::vector<double> potential; // V
    std::vector<double> electrons; // 1/m^3
    std::vector<double> holes;     // 1/m^3
    std::vector<double> charge;    // C/m^3
    std::map<std::string, double> currents; // A/m, positive into the device
    int iterations = 0;
    std::vector<double> residual_history; // max |dphi| per Gummel iteration
};

/// rho_i = q (p_i - n_i + N_D,i - N_A,i).
std::vector<double> charge_density(std::span<const double> n, std::span<const double> p,
                                   std::span<const double> donors, std::span<const double> acceptors);

/// Per-vertex Dirichlet values; std::nullopt marks a free vertex.
using DirichletValues = std::vector<std::optional<double>>;

DirichletValues dirichlet_from_contacts(const DeviceMesh& mesh, const std::map<std::string, double>& values);

/// Box-method solve of div(eps grad phi) = -rho with per-region permittivity (F/m).
std::vector<double> solve_linear_poisson(const DeviceMesh& mesh, std::span<const double> region_permittivity,
                                         std::span<const double> rho, const DirichletValues& dirichlet);

std::vector<double> solve_linear_poisson(const DeviceMesh& mesh, std::span<const double> region_permittivity,
                                         std::span<const double> rho,
                                         const std::map<std::string, double>& contact_values);

/// x / (exp(x) - 1) with a series branch near zero.
double bernoulli(double x);
long double bernoulli(long double x);

/// Scharfetter-Gummel electron current (divided by q) from vertex i to j across
/// one edge with transport coefficient `dc` = D * cv_coeff, delta = (phi_j - phi_i)/V_T.
/// Positive values are conventional current flowing i -> j.
double sg_electron_flux(double delta, double n_i, double n_j, double dc);
/// Hole counterpart of `sg_electron_flux`.
double sg_hole_flux(double delta, double p_i, double p_j, double dc);

/// Charge-neutral potential for net doping N_D - N_A: V_T asinh(net / 2 n_i).
double neutral_potential(double net_doping, double intrinsic_density, double vt);

struct SolverOptions {
    double newton_tolerance = 1e-9;  // V
    int newton_max_iterations = 200;
    double gummel_tolerance = 1e-7;  // V
    int gummel_max_iterations = 200;
    double max_bias_step = 0.2;      // V per continuation step
    double linear_tolerance = 1e-10; // relative residual
};

/// Nonlinear Poisson at thermal equilibrium (all contacts at 0 V).
std::vector<double> equilibrium_potential(const Device& device, double temperature,
                                          const SolverOptions& options = {});

/// Self-consistent drift-diffusion solution by Gummel iteration with bias
/// continuation from equilibrium.
SolutionFields gummel_solve(const Device& device, const BiasPoint& bias, const SolverOptions& options = {});

/// Terminal current recomputed from converged fields (A/m, positive into the device).
double contact_current(const SolutionFields& fields, const Device& device, const BiasPoint& bias,
                       const std::string& contact);

/// Planar nMOSFET device (mesh, Si/SiO2 materials, doping, contacts).
Device make_nmosfet(const DeviceSpec& spec, double gate_work_function = 0.0);

} // namespace devgraph::physics
