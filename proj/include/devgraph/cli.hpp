#pragma once

#include "devgraph/dataset.hpp"
#include "devgraph/encoding.hpp"
#include "devgraph/gnn.hpp"
#include "devgraph/training.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace devgraph::cli {

enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_generation = 2, exit_divergence = 3 };

/// Sectioned `key = value` settings over a fixed schema of documented keys.
class RunConfig {
public:
    /// Every key at its documented default.
    RunConfig();

    /// Overlays a config file. Throws ParseError on bad syntax, unknown
    /// sections or unknown keys.
    void merge(std::string_view text);
    /// Throws InvalidArgument for keys outside the schema.
    void set(const std::string& section, const std::string& key, const std::string& value);
    const std::string& get(const std::string& section, const std::string& key) const;

    double number(const std::string& section, const std::string& key) const;
    long long integer(const std::string& section, const std::string& key) const;
    bool boolean(const std::string& section, const std::string& key) const;
    std::vector<double> numbers(const std::string& section, const std::string& key) const;

    /// Effective settings of the listed sections, with each key's documentation.
    std::string write(const std::vector<std::string>& sections) const;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;

private:
    std::map<std::string, std::map<std::string, std::string>> values_;
};

data::TemplateRanges template_ranges(const RunConfig& config);
train::TrainConfig train_config(const RunConfig& config, encoding::Task task);
/// Full-size or scaled model for the [model] section. A scaled fatgcn with
/// base 0 is matched to the parameter count of the scaled relgat.
gnn::ModelConfig model_config(const RunConfig& config, std::string_view arch, encoding::Task task,
                              std::size_t input_width);
/// [train] schedule: whitespace-separated `epoch:lr` breakpoints; empty selects the default.
train::Schedule parse_schedule(std::string_view text);

/// Encodes stored samples for a task. Samples the task rejects (non-positive
/// drain current) are skipped and their ids appended to `rejected`.
std::vector<encoding::DeviceGraph> encode_samples(const std::vector<data::StoredSample>& samples,
                                                  encoding::Task task, std::vector<std::string>* rejected = nullptr);
/// Encodes, splits and fits the normalizer on the train split only.
encoding::GraphBundle build_bundle(const std::vector<data::StoredSample>& samples, encoding::Task task,
                                   std::array<double, 3> fractions, std::uint64_t seed,
                                   std::vector<std::string>* rejected = nullptr);

/// Named split metrics as written to report files.
struct MetricReport {
    std::string arch;
    encoding::Task task = encoding::Task::none;
    std::size_t parameters = 0;
    int best_epoch = -1;
    int epochs_run = 0;
    std::vector<std::pair<std::string, train::SplitMetrics>> splits;
};

std::string write_report(const MetricReport& report);

/// Parsed `sample=PATH,from=A,to=B,points=N[,drain=V]`.
struct SweepSpec {
    std::string sample;
    double from = 0.0;
    double to = 0.0;
    int points = 0;
    std::optional<double> drain; // default: the sample's own drain bias
};

SweepSpec parse_sweep_spec(std::string_view text);

/// Runs one command line. argv[0] is the program name.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace devgraph::cli
