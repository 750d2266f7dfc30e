#pragma once

#include "devgraph/physics.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace devgraph::data {

/// Closed sampling interval; log-scale ranges sample log10 uniformly.
struct Range {
    double lo = 0.0;
    double hi = 0.0;
    bool log_scale = false;

    double sample(double unit) const;
};

struct IntRange {
    int lo = 0;
    int hi = 0;
};

/// Sampling ranges for the planar nMOSFET family and its bias points.
struct TemplateRanges {
    std::string template_id = "planar-nmosfet";
    Range gate_length{40e-9, 90e-9};
    Range oxide_thickness{2e-9, 5e-9};
    Range body_depth{60e-9, 100e-9};
    Range well_width{30e-9, 50e-9};
    Range well_depth_fraction{0.25, 0.45}; // of body depth
    Range well_donor{1e25, 1e26, true};
    Range body_acceptor{1e23, 2e24, true};
    IntRange nx{22, 30};
    IntRange ny{15, 20};
    Range gate_voltage{0.0, 1.5};
    Range drain_voltage{0.05, 1.0};
    double temperature = 300.0;

    void validate() const;
};

struct Sample {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    DeviceSpec spec;
    physics::Device device;
    physics::BiasPoint bias;
    physics::SolutionFields fields;
    bool converged = false;
    bool verified = false; // independent re-solve agreed
    std::string failure;   // reason when not converged
};

struct GenerateOptions {
    unsigned threads = 0; // 0 = default_thread_count()
    bool self_check = false;
    physics::SolverOptions solver;
};

/// Threads to use: hardware concurrency, capped by DEVGRAPH_THREADS when set.
unsigned default_thread_count();

/// Per-sample seed derived from the run seed (splitmix64).
std::uint64_t sample_seed(std::uint64_t run_seed, std::size_t index);

/// Device and bias for one sample; deterministic in `seed`.
Sample draw_sample(const TemplateRanges& ranges, std::size_t index, std::uint64_t seed);

/// Draws and solves `count` samples. Non-converged solves are kept with
/// converged = false and the failure reason. Results are ordered by index.
std::vector<Sample> generate_dataset(const TemplateRanges& ranges, std::size_t count, std::uint64_t seed,
                                     const GenerateOptions& options = {});

/// True when a re-solve along a different continuation path reproduces the
/// potential within 1e-5 V and every contact current within 1e-4 relative.
bool verify_sample(const Sample& sample, const physics::SolverOptions& solver = {});

/// One converged sample as read back from disk.
struct StoredSample {
    std::string id;
    physics::Device device;
    physics::BiasPoint bias;
    physics::SolutionFields fields;
};

struct ManifestEntry {
    std::string id;
    std::uint64_t seed = 0;
    bool converged = false;
    bool verified = false;
    std::string note;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
    std::string template_id;
    std::uint64_t seed = 0;
    std::vector<ManifestEntry> entries;

    std::size_t converged_count() const;

    friend bool operator==(const Manifest&, const Manifest&) = default;
};

std::string write_manifest(const Manifest& manifest);
Manifest parse_manifest(std::string_view text);

/// Writes grid, fields, sweep and material files for every converged sample
/// plus `manifest.txt`. Returns the manifest.
Manifest write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples,
                       const TemplateRanges& ranges, std::uint64_t seed);

/// Reads every converged sample listed in the manifest. Throws naming the
/// sample whose files are missing or malformed.
std::vector<StoredSample> read_dataset(const std::filesystem::path& dir);

StoredSample read_sample(const std::filesystem::path& dir, const std::string& id);

/// Contact kinds follow the contact names: "gate" is a gate contact, all others ohmic.
physics::Device device_from_grid(const io::GridFile& grid, const std::map<std::string, io::ParameterFile>& materials,
                                 physics::DopingProfile doping);

inline const std::vector<std::string> kContactOrder{"gate", "drain", "source", "body"};

} // namespace devgraph::data
