#include "devgraph/dataset.hpp"

#include "devgraph/error.hpp"
#include "devgraph/text.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <random>
#include <thread>

namespace devgraph::data {

namespace fs = std::filesystem;

double Range::sample(double unit) const {
    if (log_scale) return std::pow(10.0, std::log10(lo) + unit * (std::log10(hi) - std::log10(lo)));
    return lo + unit * (hi - lo);
}

void TemplateRanges::validate() const {
    if (template_id != "planar-nmosfet" && template_id != "nmosfet")
        throw InvalidArgument("unknown template '" + template_id + "'");
    auto check = [](const Range& r, const char* name, bool positive) {
        if (!(r.lo <= r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi))
            throw InvalidArgument(std::string(name) + ": empty or non-finite range");
        if ((positive || r.log_scale) && r.lo <= 0.0) throw InvalidArgument(std::string(name) + ": must be > 0");
    };
    check(gate_length, "gate_length", true);
    check(oxide_thickness, "oxide_thickness", true);
    check(body_depth, "body_depth", true);
    check(well_width, "well_width", true);
    check(well_depth_fraction, "well_depth_fraction", true);
    if (well_depth_fraction.hi >= 1.0) throw InvalidArgument("well_depth_fraction: must be < 1");
    check(well_donor, "well_donor", false);
    check(body_acceptor, "body_acceptor", false);
    check(gate_voltage, "gate_voltage", false);
    check(drain_voltage, "drain_voltage", false);
    if (nx.lo < 4 || nx.hi < nx.lo) throw InvalidArgument("nx: range must satisfy 4 <= lo <= hi");
    if (ny.lo < 4 || ny.hi < ny.lo) throw InvalidArgument("ny: range must satisfy 4 <= lo <= hi");
    if (!(temperature > 0.0)) throw InvalidArgument("temperature: must be > 0");
}

unsigned default_thread_count() {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("DEVGRAPH_THREADS")) {
        if (auto cap = text::parse_int(env); cap && *cap >= 1) n = std::min(n, static_cast<unsigned>(*cap));
    }
    return n;
}

std::uint64_t sample_seed(std::uint64_t run_seed, std::size_t index) {
    std::uint64_t z = run_seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Sample draw_sample(const TemplateRanges& ranges, std::size_t index, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    // 53 raw engine bits keep draws identical across standard libraries
    auto unit = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
    auto pick = [&](IntRange r) { return r.lo + static_cast<int>(rng() % static_cast<std::uint64_t>(r.hi - r.lo + 1)); };

    Sample s;
    s.index = index;
    s.seed = seed;
    s.spec.gate_length = ranges.gate_length.sample(unit());
    s.spec.oxide_thickness = ranges.oxide_thickness.sample(unit());
    s.spec.body_depth = ranges.body_depth.sample(unit());
    s.spec.well_width = ranges.well_width.sample(unit());
    s.spec.well_depth = s.spec.body_depth * ranges.well_depth_fraction.sample(unit());
    s.spec.well_donor = ranges.well_donor.sample(unit());
    s.spec.body_acceptor = ranges.body_acceptor.sample(unit());
    s.spec.nx = pick(ranges.nx);
    s.spec.ny = pick(ranges.ny);
    s.bias.voltages["gate"] = ranges.gate_voltage.sample(unit());
    s.bias.voltages["drain"] = ranges.drain_voltage.sample(unit());
    s.bias.voltages["source"] = 0.0;
    s.bias.voltages["body"] = 0.0;
    s.bias.temperature = ranges.temperature;
    s.device = physics::make_nmosfet(s.spec);
    return s;
}

std::vector<Sample> generate_dataset(const TemplateRanges& ranges, std::size_t count, std::uint64_t seed,
                                     const GenerateOptions& options) {
    ranges.validate();
    std::vector<Sample> samples(count);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            Sample& s = samples[i];
            try {
                s = draw_sample(ranges, i, sample_seed(seed, i));
                s.fields = physics::gummel_solve(s.device, s.bias, options.solver);
                s.converged = true;
                if (options.self_check) s.verified = verify_sample(s, options.solver);
            } catch (const Error& e) {
                s.index = i;
                s.seed = sample_seed(seed, i);
                s.converged = false;
                s.failure = e.what();
            }
        }
    };
    const unsigned threads = std::min<std::size_t>(options.threads ? options.threads : default_thread_count(),
                                                   std::max<std::size_t>(count, 1));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return samples;
}

bool verify_sample(const Sample& sample, const physics::SolverOptions& solver) {
    if (!sample.converged) return false;
    physics::SolverOptions alt = solver;
    alt.max_bias_step = solver.max_bias_step / 2.0;
    physics::SolutionFields again;
    try {
        again = physics::gummel_solve(sample.device, sample.bias, alt);
    } catch (const Error&) {
        return false;
    }
    for (std::size_t v = 0; v < again.potential.size(); ++v)
        if (std::abs(again.potential[v] - sample.fields.potential[v]) > 1e-5) return false;
    double scale = 0.0;
    for (const auto& [name, i] : sample.fields.currents) scale = std::max(scale, std::abs(i));
    for (const auto& [name, i] : sample.fields.currents)
        if (std::abs(again.currents.at(name) - i) > 1e-4 * scale + 1e-15) return false;
    return true;
}

std::size_t Manifest::converged_count() const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.converged; }));
}

std::string write_manifest(const Manifest& manifest) {
    std::string out = "dmanifest 1\ntemplate " + manifest.template_id + "\nseed " + std::to_string(manifest.seed) +
                      "\ncount " + std::to_string(manifest.entries.size()) + "\n";
    for (const auto& e : manifest.entries) {
        out += "sample " + e.id + " " + std::to_string(e.seed) + (e.converged ? " converged" : " failed") +
               (e.verified ? " verified" : " unverified");
        if (!e.note.empty()) {
            std::string note = e.note;
            std::replace(note.begin(), note.end(), '\n', ' ');
            out += " " + note;
        }
        out += "\n";
    }
    return out;
}

namespace {

std::uint64_t parse_seed(std::string_view token, std::size_t line) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc{} || p != token.data() + token.size()) throw ParseError(line, "seed is not an unsigned integer");
    return v;
}

} // namespace

Manifest parse_manifest(std::string_view src) {
    text::LineReader reader(src);
    auto expect = [&](std::string_view key) {
        auto line = reader.next();
        if (!line) throw ParseError(reader.line_number() + 1, "missing '" + std::string(key) + "' record");
        auto tok = text::split_ws(*line);
        if (tok.size() != 2 || tok[0] != key)
            throw ParseError(reader.line_number(), "expected '" + std::string(key) + " <value>'");
        return std::string(tok[1]);
    };
    if (expect("dmanifest") != "1") throw ParseError(reader.line_number(), "unsupported manifest version");
    Manifest m;
    m.template_id = expect("template");
    m.seed = parse_seed(expect("seed"), reader.line_number());
    auto count = text::parse_int(expect("count"));
    if (!count || *count < 0) throw ParseError(reader.line_number(), "count must be a non-negative integer");
    for (long long k = 0; k < *count; ++k) {
        auto line = reader.next();
        if (!line) throw ParseError(reader.line_number() + 1, "missing sample record " + std::to_string(k + 1));
        auto tok = text::split_ws(*line);
        if (tok.size() < 5 || tok[0] != "sample" || (tok[3] != "converged" && tok[3] != "failed") ||
            (tok[4] != "verified" && tok[4] != "unverified"))
            throw ParseError(reader.line_number(), "malformed sample record");
        ManifestEntry e;
        e.id = std::string(tok[1]);
        e.seed = parse_seed(tok[2], reader.line_number());
        e.converged = tok[3] == "converged";
        e.verified = tok[4] == "verified";
        if (tok.size() > 5) {
            const auto start = static_cast<std::size_t>(tok[5].data() - line->data());
            e.note = std::string(text::trim(line->substr(start)));
        }
        m.entries.push_back(std::move(e));
    }
    if (reader.next()) throw ParseError(reader.line_number(), "trailing content after sample records");
    return m;
}

namespace {

std::string sample_id(std::size_t index) {
    std::string digits = std::to_string(index);
    return "s" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits;
}

const std::vector<std::pair<std::string, std::string>> kFields{{"potential", "V"},  {"electrons", "1/m^3"},
                                                               {"holes", "1/m^3"},  {"charge", "C/m^3"},
                                                               {"donors", "1/m^3"}, {"acceptors", "1/m^3"}};

std::string path_string(const fs::path& p) { return p.string(); }

} // namespace

Manifest write_dataset(const fs::path& dir, const std::vector<Sample>& samples, const TemplateRanges& ranges,
                       std::uint64_t seed) {
    fs::create_directories(dir);
    Manifest m;
    m.template_id = ranges.template_id;
    m.seed = seed;
    std::map<std::string, io::ParameterFile> materials;
    for (const auto& s : samples) {
        ManifestEntry e{sample_id(s.index), s.seed, s.converged, s.verified, s.failure};
        m.entries.push_back(e);
        if (!s.converged) continue;
        for (const auto& [name, par] : s.device.materials) materials[name] = par;
        const std::string base = path_string(dir / e.id);
        text::write_file(base + ".dgrid", io::write_grid(io::grid_from_mesh(s.device.mesh)));
        const std::vector<const std::vector<double>*> values{&s.fields.potential, &s.fields.electrons,
                                                             &s.fields.holes,     &s.fields.charge,
                                                             &s.device.doping.donors, &s.device.doping.acceptors};
        for (std::size_t f = 0; f < kFields.size(); ++f)
            text::write_file(base + "." + kFields[f].first + ".dfield",
                             io::write_field({kFields[f].first, kFields[f].second, *values[f]}));
        io::SweepTable sweep;
        for (const auto& c : kContactOrder) sweep.columns.push_back("V_" + c), sweep.units.push_back("V");
        sweep.columns.push_back("temperature");
        sweep.units.push_back("K");
        for (const auto& c : kContactOrder) sweep.columns.push_back("I_" + c), sweep.units.push_back("A/m");
        std::vector<double> row;
        for (const auto& c : kContactOrder) row.push_back(s.bias.voltage(c));
        row.push_back(s.bias.temperature);
        for (const auto& c : kContactOrder) {
            auto it = s.fields.currents.find(c);
            row.push_back(it == s.fields.currents.end() ? 0.0 : it->second);
        }
        sweep.rows.push_back(row);
        text::write_file(base + ".dsweep", io::write_sweep(sweep));
    }
    for (const auto& [name, par] : materials) text::write_file(path_string(dir / (name + ".dpar")), io::write_parameters(par));
    text::write_file(path_string(dir / "manifest.txt"), write_manifest(m));
    return m;
}

physics::Device device_from_grid(const io::GridFile& grid, const std::map<std::string, io::ParameterFile>& materials,
                                 physics::DopingProfile doping) {
    physics::Device d;
    d.mesh = io::mesh_from_grid(grid);
    d.materials = materials;
    if (doping.donors.size() != d.mesh.vertex_count() || doping.acceptors.size() != d.mesh.vertex_count())
        throw InvalidArgument("doping length does not match the vertex count");
    d.doping = std::move(doping);
    for (const auto& [name, verts] : d.mesh.contacts)
        d.contacts[name] = {name == "gate" ? physics::ContactKind::gate : physics::ContactKind::ohmic, 0.0};
    return d;
}

StoredSample read_sample(const fs::path& dir, const std::string& id) {
    const std::string base = path_string(dir / id);
    auto load = [&](const std::string& path) {
        if (!fs::exists(path)) throw InvalidArgument("sample " + id + ": missing file " + path);
        return text::read_file(path);
    };
    try {
        auto grid = io::parse_grid(load(base + ".dgrid"));
        std::map<std::string, io::ParameterFile> materials;
        for (const auto& r : grid.regions)
            if (!materials.count(r.material))
                materials[r.material] = io::parse_parameters(load(path_string(dir / (r.material + ".dpar"))));
        std::map<std::string, std::vector<double>> fields;
        for (const auto& [name, unit] : kFields) {
            auto f = io::parse_field(load(base + "." + name + ".dfield"));
            if (f.values.size() != grid.vertices.size())
                throw InvalidArgument("sample " + id + ": field " + name + " has " + std::to_string(f.values.size()) +
                                      " values for " + std::to_string(grid.vertices.size()) + " vertices");
            fields[name] = std::move(f.values);
        }
        StoredSample s;
        s.id = id;
        s.device = device_from_grid(grid, materials, {fields["donors"], fields["acceptors"]});
        auto sweep = io::parse_sweep(load(base + ".dsweep"));
        if (sweep.rows.size() != 1) throw InvalidArgument("sample " + id + ": sweep must hold exactly one row");
        for (const auto& c : kContactOrder) {
            s.bias.voltages[c] = sweep.at(0, "V_" + c);
            s.fields.currents[c] = sweep.at(0, "I_" + c);
        }
        s.bias.temperature = sweep.at(0, "temperature");
        s.fields.potential = std::move(fields["potential"]);
        s.fields.electrons = std::move(fields["electrons"]);
        s.fields.holes = std::move(fields["holes"]);
        s.fields.charge = std::move(fields["charge"]);
        return s;
    } catch (const ParseError& e) {
        throw InvalidArgument("sample " + id + ": " + e.what());
    }
}

std::vector<StoredSample> read_dataset(const fs::path& dir) {
    const auto manifest_path = dir / "manifest.txt";
    if (!fs::exists(manifest_path)) throw InvalidArgument("no manifest.txt in " + path_string(dir));
    auto m = parse_manifest(text::read_file(path_string(manifest_path)));
    std::vector<StoredSample> out;
    for (const auto& e : m.entries)
        if (e.converged) out.push_back(read_sample(dir, e.id));
    return out;
}

} // namespace devgraph::data
