#include <doctest.h>

#include "devgraph/cli.hpp"
#include "devgraph/dataset.hpp"
#include "devgraph/encoding.hpp"
#include "devgraph/gnn.hpp"
#include "devgraph/text.hpp"

#ifndef DEVGRAPH_GOLDEN_DIR
#define DEVGRAPH_GOLDEN_DIR "docs/golden"
#endif

using namespace devgraph;

namespace {

std::string golden(const std::string& name) { return text::read_file(std::string(DEVGRAPH_GOLDEN_DIR) + "/" + name); }

} // namespace

TEST_CASE("manifest golden round trips") {
    const auto text = golden("manifest.txt");
    const auto m = data::parse_manifest(text);
    CHECK(m.template_id == "nmosfet");
    CHECK(m.entries.size() == 4);
    CHECK(m.converged_count() == 4);
    CHECK(data::write_manifest(m) == text);
}

TEST_CASE("normalizer golden round trips") {
    const auto text = golden("example.normalizer");
    const auto n = encoding::parse_normalizer(text);
    CHECK(n.task == encoding::Task::poisson);
    CHECK(n.shift.size() == 28);
    CHECK(encoding::write_normalizer(n) == text);
}

TEST_CASE("checkpoint golden round trips") {
    const auto text = golden("model.dckpt");
    const auto c = gnn::parse_checkpoint(text);
    CHECK(c.model.config().arch == "relgat");
    CHECK(c.model.config().task == encoding::Task::iv);
    CHECK(c.model.config().input_width == 29);
    CHECK(c.model.parameter_count() == 281);
    CHECK(gnn::write_checkpoint(c.model, c.normalizer) == text);
}

TEST_CASE("config golden matches the schema") {
    const auto text = golden("config.ini");
    cli::RunConfig config;
    config.merge(text);
    CHECK(config.integer("generate", "count") == 4);
    CHECK(config.get("encode", "task") == "iv");
    CHECK(config.integer("model", "width") == 4);
    CHECK(config.write({"generate", "encode", "model", "train"}) == text);
}
