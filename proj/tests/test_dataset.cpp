#include <doctest.h>

#include "devgraph/dataset.hpp"
#include "devgraph/error.hpp"
#include "devgraph/text.hpp"

#include <filesystem>

using namespace devgraph;
using namespace devgraph::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("devgraph_test_dataset_" + name);
    fs::remove_all(dir);
    return dir;
}

std::vector<double> drain_labels(const std::vector<Sample>& samples) {
    std::vector<double> out;
    for (const auto& s : samples) out.push_back(s.converged ? s.fields.currents.at("drain") : -1.0);
    return out;
}

} // namespace

TEST_CASE("range sampling") {
    Range lin{1.0, 3.0};
    CHECK(lin.sample(0.0) == 1.0);
    CHECK(lin.sample(0.5) == 2.0);
    Range lg{1e20, 1e24, true};
    CHECK(lg.sample(0.5) == doctest::Approx(1e22).epsilon(1e-12));
    TemplateRanges bad;
    bad.template_id = "finfet";
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = {};
    bad.gate_length = {5e-8, 4e-8};
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("gate_length"), InvalidArgument);
}

TEST_CASE("sample seeds are distinct and reproducible") {
    CHECK(sample_seed(42, 0) == sample_seed(42, 0));
    CHECK(sample_seed(42, 0) != sample_seed(42, 1));
    CHECK(sample_seed(42, 0) != sample_seed(43, 0));
    auto a = draw_sample({}, 3, 99), b = draw_sample({}, 3, 99);
    CHECK(a.spec.gate_length == b.spec.gate_length);
    CHECK(a.bias.voltages == b.bias.voltages);
    CHECK(a.device.mesh == b.device.mesh);
}

TEST_CASE("dataset generation") {
    CHECK(generate_dataset({}, 0, 42).empty());

    GenerateOptions opts;
    opts.self_check = true;
    auto first = generate_dataset({}, 10, 42, opts);
    opts.threads = 1;
    opts.self_check = false;
    auto second = generate_dataset({}, 10, 42, opts);
    REQUIRE(first.size() == 10);
    CHECK(drain_labels(first) == drain_labels(second));
    for (std::size_t i = 0; i < first.size(); ++i) {
        CHECK(first[i].index == i);
        CHECK(first[i].converged);
        // independent re-solve along a different continuation path agrees
        CHECK(first[i].verified);
        CHECK(first[i].fields.potential == second[i].fields.potential);
        const auto n = first[i].device.mesh.vertex_count();
        CHECK(n >= 300);
        CHECK(n <= 600);
    }

    SUBCASE("non-convergence is recorded, not fatal") {
        GenerateOptions strict;
        strict.solver.gummel_max_iterations = 1;
        auto failed = generate_dataset({}, 2, 42, strict);
        for (const auto& s : failed) {
            CHECK(!s.converged);
            CHECK(!s.failure.empty());
        }
    }

    SUBCASE("files round trip") {
        auto dir = scratch_dir("roundtrip");
        auto with_failure = first;
        with_failure[4].converged = false;
        with_failure[4].failure = "Gummel iteration did not converge";
        auto manifest = write_dataset(dir, with_failure, {}, 42);
        CHECK(manifest.entries.size() == 10);
        CHECK(manifest.converged_count() == 9);
        CHECK(parse_manifest(text::read_file((dir / "manifest.txt").string())) == manifest);
        CHECK(manifest.entries[4].note == "Gummel iteration did not converge");
        CHECK(!fs::exists(dir / "s00004.dgrid"));

        auto stored = read_dataset(dir);
        REQUIRE(stored.size() == 9);
        const auto& s = stored[0];
        CHECK(s.id == "s00000");
        CHECK(s.device.mesh == first[0].device.mesh);
        CHECK(s.fields.potential == first[0].fields.potential);
        CHECK(s.fields.charge == first[0].fields.charge);
        CHECK(s.fields.currents == first[0].fields.currents);
        CHECK(s.bias.voltages == first[0].bias.voltages);
        CHECK(s.device.doping.donors == first[0].device.doping.donors);
        CHECK(s.device.contacts.at("gate").kind == physics::ContactKind::gate);
        CHECK(s.device.contacts.at("drain").kind == physics::ContactKind::ohmic);

        // the stored device reproduces the oracle solution
        auto again = physics::gummel_solve(s.device, s.bias);
        CHECK(again.currents.at("drain") == doctest::Approx(s.fields.currents.at("drain")).epsilon(1e-6));

        fs::remove(dir / "s00002.charge.dfield");
        CHECK_THROWS_WITH_AS(read_dataset(dir), doctest::Contains("s00002"), InvalidArgument);
        fs::remove_all(dir);
    }
}

TEST_CASE("manifest parsing") {
    Manifest m;
    m.template_id = "planar-nmosfet";
    m.seed = 18446744073709551615ULL;
    m.entries.push_back({"s00000", 12345678901234567890ULL, true, true, ""});
    m.entries.push_back({"s00001", 7, false, false, "line search failed"});
    CHECK(parse_manifest(write_manifest(m)) == m);
    CHECK_THROWS_AS(parse_manifest("dmanifest 1\ntemplate t\nseed 1\ncount 2\nsample s0 1 converged verified\n"), ParseError);
    CHECK_THROWS_AS(parse_manifest("dmanifest 1\ntemplate t\nseed x\ncount 0\n"), ParseError);
    auto empty = parse_manifest("dmanifest 1\ntemplate t\nseed 1\ncount 0\n");
    CHECK(empty.entries.empty());
}
