#include "devgraph/cli.hpp"

#include "devgraph/device_io.hpp"
#include "devgraph/error.hpp"
#include "devgraph/physics.hpp"
#include "devgraph/text.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>

namespace devgraph::cli {

namespace fs = std::filesystem;
using encoding::Task;

namespace {

struct KeySpec {
    const char* section;
    const char* key;
    const char* value;
    const char* doc;
};

// clang-format off
const std::vector<KeySpec> kSchema{
    {"generate", "template", "nmosfet", "device template; only nmosfet"},
    {"generate", "count", "10", "number of samples"},
    {"generate", "seed", "0", "run seed; sample k uses splitmix64(seed, k)"},
    {"generate", "threads", "0", "worker threads; 0 = hardware, capped by DEVGRAPH_THREADS"},
    {"generate", "self_check", "false", "re-solve every sample along a second continuation path"},
    {"generate", "gate_length", "40e-9 90e-9", "gate length range, m"},
    {"generate", "oxide_thickness", "2e-9 5e-9", "oxide thickness range, m"},
    {"generate", "body_depth", "60e-9 100e-9", "body depth range, m"},
    {"generate", "well_width", "30e-9 50e-9", "source and drain well width range, m"},
    {"generate", "well_depth_fraction", "0.25 0.45", "well depth range as a fraction of body depth"},
    {"generate", "well_donor", "1e25 1e26", "well donor range, 1/m^3, sampled in log10"},
    {"generate", "body_acceptor", "1e23 2e24", "body acceptor range, 1/m^3, sampled in log10"},
    {"generate", "nx", "22 30", "vertex column range"},
    {"generate", "ny", "15 20", "vertex row range"},
    {"generate", "gate_voltage", "0 1.5", "gate bias range, V"},
    {"generate", "drain_voltage", "0.05 1", "drain bias range, V"},
    {"generate", "temperature", "300", "lattice temperature, K"},
    {"encode", "task", "poisson", "poisson or iv"},
    {"encode", "fractions", "0.7 0.2 0.1", "train, validation and test fractions"},
    {"encode", "seed", "0", "split seed"},
    {"model", "size", "scaled", "scaled or full"},
    {"model", "layers", "4", "scaled: message layers"},
    {"model", "width", "32", "scaled: message layer width"},
    {"model", "heads", "2", "scaled relgat: attention heads"},
    {"model", "base", "0", "scaled fatgcn: base width; 0 matches the scaled relgat parameter count"},
    {"model", "seed", "0", "parameter initialization seed"},
    {"train", "data", "", "encoded bundle from the encode command"},
    {"train", "learning_rate", "0.001", "initial learning rate"},
    {"train", "schedule", "", "epoch:lr breakpoints; empty = lr, lr/2 at half, lr/100 at the end"},
    {"train", "weight_decay", "auto", "decoupled decay; auto = 0 for poisson, 1e-4 for iv"},
    {"train", "epochs", "100", "maximum epochs"},
    {"train", "patience", "50", "early-stopping patience in epochs"},
    {"train", "batch_size", "32", "graphs per step; 0 = whole training set"},
    {"train", "seed", "0", "mini-batch shuffle seed"},
    {"train", "log_every", "10", "epochs between progress lines; 0 = silent"},
};
// clang-format on

const KeySpec* find_key(const std::string& section, const std::string& key) {
    for (const auto& k : kSchema)
        if (section == k.section && key == k.key) return &k;
    return nullptr;
}

bool known_section(const std::string& section) {
    for (const auto& k : kSchema)
        if (section == k.section) return true;
    return false;
}

std::string qualified(const std::string& section, const std::string& key) { return section + "." + key; }

} // namespace

RunConfig::RunConfig() {
    for (const auto& k : kSchema) values_[k.section][k.key] = k.value;
}

void RunConfig::merge(std::string_view text) {
    text::LineReader reader(text);
    std::string section;
    while (auto line = reader.next()) {
        const auto n = reader.line_number();
        if (line->front() == '[') {
            if (line->back() != ']') throw ParseError(n, "unterminated section header");
            section = std::string(text::trim(line->substr(1, line->size() - 2)));
            if (!known_section(section)) throw ParseError(n, "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line->find('=');
        if (eq == std::string_view::npos) throw ParseError(n, "expected key = value");
        if (section.empty()) throw ParseError(n, "key outside a section");
        const std::string key(text::trim(line->substr(0, eq)));
        if (!find_key(section, key)) throw ParseError(n, "unknown key " + qualified(section, key));
        values_[section][key] = std::string(text::trim(line->substr(eq + 1)));
    }
}

void RunConfig::set(const std::string& section, const std::string& key, const std::string& value) {
    if (!find_key(section, key)) throw InvalidArgument("unknown key " + qualified(section, key));
    values_[section][key] = value;
}

const std::string& RunConfig::get(const std::string& section, const std::string& key) const {
    if (!find_key(section, key)) throw InvalidArgument("unknown key " + qualified(section, key));
    return values_.at(section).at(key);
}

double RunConfig::number(const std::string& section, const std::string& key) const {
    auto v = text::parse_double(get(section, key));
    if (!v) throw InvalidArgument(qualified(section, key) + ": expected a number, got '" + get(section, key) + "'");
    return *v;
}

long long RunConfig::integer(const std::string& section, const std::string& key) const {
    auto v = text::parse_int(get(section, key));
    if (!v) throw InvalidArgument(qualified(section, key) + ": expected an integer, got '" + get(section, key) + "'");
    return *v;
}

bool RunConfig::boolean(const std::string& section, const std::string& key) const {
    const auto& v = get(section, key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw InvalidArgument(qualified(section, key) + ": expected true or false, got '" + v + "'");
}

std::vector<double> RunConfig::numbers(const std::string& section, const std::string& key) const {
    std::vector<double> out;
    for (auto token : text::split_ws(get(section, key))) {
        auto v = text::parse_double(token);
        if (!v) throw InvalidArgument(qualified(section, key) + ": bad number '" + std::string(token) + "'");
        out.push_back(*v);
    }
    return out;
}

std::string RunConfig::write(const std::vector<std::string>& sections) const {
    std::ostringstream os;
    for (std::size_t s = 0; s < sections.size(); ++s) {
        if (s) os << '\n';
        os << '[' << sections[s] << "]\n";
        for (const auto& k : kSchema)
            if (sections[s] == k.section) os << "# " << k.doc << '\n' << k.key << " = " << get(k.section, k.key) << '\n';
    }
    return os.str();
}

data::TemplateRanges template_ranges(const RunConfig& config) {
    data::TemplateRanges r;
    r.template_id = config.get("generate", "template");
    auto range = [&](const char* key, data::Range& target) {
        auto v = config.numbers("generate", key);
        if (v.size() != 2) throw InvalidArgument(qualified("generate", key) + ": expected two numbers, lo hi");
        target.lo = v[0];
        target.hi = v[1];
    };
    auto int_range = [&](const char* key, data::IntRange& target) {
        auto v = config.numbers("generate", key);
        if (v.size() != 2 || v[0] != std::floor(v[0]) || v[1] != std::floor(v[1]))
            throw InvalidArgument(qualified("generate", key) + ": expected two integers, lo hi");
        target.lo = static_cast<int>(v[0]);
        target.hi = static_cast<int>(v[1]);
    };
    range("gate_length", r.gate_length);
    range("oxide_thickness", r.oxide_thickness);
    range("body_depth", r.body_depth);
    range("well_width", r.well_width);
    range("well_depth_fraction", r.well_depth_fraction);
    range("well_donor", r.well_donor);
    range("body_acceptor", r.body_acceptor);
    int_range("nx", r.nx);
    int_range("ny", r.ny);
    range("gate_voltage", r.gate_voltage);
    range("drain_voltage", r.drain_voltage);
    r.temperature = config.number("generate", "temperature");
    if (r.template_id != "nmosfet") throw InvalidArgument("unknown template '" + r.template_id + "'; expected nmosfet");
    r.validate();
    return r;
}

train::Schedule parse_schedule(std::string_view text) {
    train::Schedule out;
    for (auto token : text::split_ws(text)) {
        const auto colon = token.find(':');
        std::optional<double> epoch, lr;
        if (colon != std::string_view::npos) {
            epoch = text::parse_double(token.substr(0, colon));
            lr = text::parse_double(token.substr(colon + 1));
        }
        if (!epoch || !lr) throw InvalidArgument("schedule: expected epoch:lr, got '" + std::string(token) + "'");
        out.push_back({*epoch, *lr});
    }
    return out;
}

train::TrainConfig train_config(const RunConfig& config, Task task) {
    auto c = train::TrainConfig::for_task(task);
    c.learning_rate = config.number("train", "learning_rate");
    c.schedule = parse_schedule(config.get("train", "schedule"));
    if (config.get("train", "weight_decay") != "auto") c.weight_decay = config.number("train", "weight_decay");
    c.epochs = static_cast<int>(config.integer("train", "epochs"));
    c.patience = static_cast<int>(config.integer("train", "patience"));
    const auto batch = config.integer("train", "batch_size");
    if (batch < 0) throw InvalidArgument("train.batch_size: must be non-negative");
    c.batch_size = static_cast<std::size_t>(batch);
    c.seed = static_cast<std::uint64_t>(config.integer("train", "seed"));
    c.validate();
    return c;
}

gnn::ModelConfig model_config(const RunConfig& config, std::string_view arch, Task task, std::size_t input_width) {
    const auto& size = config.get("model", "size");
    if (size == "full")
        return task == Task::iv ? gnn::iv_architecture(arch, input_width) : gnn::poisson_architecture(arch, input_width);
    if (size != "scaled") throw InvalidArgument("model.size: expected scaled or full, got '" + size + "'");
    const int layers = static_cast<int>(config.integer("model", "layers"));
    const int width = static_cast<int>(config.integer("model", "width"));
    const int heads = static_cast<int>(config.integer("model", "heads"));
    if (arch == "fatgcn") {
        const auto base = config.integer("model", "base");
        if (base < 0) throw InvalidArgument("model.base: must be non-negative");
        if (base > 0) return gnn::scaled_fatgcn(task, input_width, static_cast<int>(base));
        gnn::Model reference(gnn::scaled_architecture("relgat", task, input_width, layers, width, heads));
        return gnn::matched_fatgcn(task, input_width, reference.parameter_count());
    }
    return gnn::scaled_architecture(arch, task, input_width, layers, width, heads);
}

std::vector<encoding::DeviceGraph> encode_samples(const std::vector<data::StoredSample>& samples, Task task,
                                                  std::vector<std::string>* rejected) {
    std::vector<encoding::DeviceGraph> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        auto g = encoding::encode_device(s.device, s.bias);
        g.id = s.id;
        if (task == Task::iv) {
            auto it = s.fields.currents.find("drain");
            if (it == s.fields.currents.end() || !(it->second > 0.0)) {
                if (rejected) rejected->push_back(s.id);
                continue;
            }
        }
        out.push_back(encoding::attach_self_consistent(std::move(g), s.fields, task));
    }
    return out;
}

encoding::GraphBundle build_bundle(const std::vector<data::StoredSample>& samples, Task task,
                                   std::array<double, 3> fractions, std::uint64_t seed,
                                   std::vector<std::string>* rejected) {
    encoding::GraphBundle b;
    b.task = task;
    b.layout = encoding::NodeFeatureLayout::v1(task);
    b.graphs = encode_samples(samples, task, rejected);
    auto split = train::split_dataset(b.graphs.size(), fractions, seed);
    b.train = std::move(split.train);
    b.validation = std::move(split.validation);
    b.test = std::move(split.test);
    if (b.train.empty()) throw InvalidArgument("encode: the train split is empty");
    std::vector<const encoding::DeviceGraph*> fit;
    for (auto i : b.train) fit.push_back(&b.graphs[i]);
    b.normalizer = encoding::fit_normalizer(fit, b.layout);
    return b;
}

std::string write_report(const MetricReport& report) {
    std::ostringstream os;
    os << "metric_report 1\n"
       << "arch " << report.arch << '\n'
       << "task " << encoding::to_string(report.task) << '\n'
       << "parameters " << report.parameters << '\n';
    if (report.best_epoch >= 0) os << "best_epoch " << report.best_epoch << '\n';
    if (report.epochs_run > 0) os << "epochs_run " << report.epochs_run << '\n';
    os << "# split count mse r2" << (report.task == Task::iv ? " linear_r2" : "") << '\n';
    for (const auto& [name, m] : report.splits) {
        os << "split " << name << ' ' << m.count;
        if (m.count < 2) {
            os << " - -" << (report.task == Task::iv ? " -" : "") << '\n';
            continue;
        }
        os << ' ' << text::format_double(m.mse) << ' ' << text::format_double(m.r2);
        if (report.task == Task::iv) os << ' ' << text::format_double(m.linear_r2);
        os << '\n';
    }
    return os.str();
}

SweepSpec parse_sweep_spec(std::string_view spec) {
    SweepSpec s;
    bool have_from = false, have_to = false, have_points = false;
    std::size_t pos = 0;
    while (pos <= spec.size()) {
        auto comma = spec.find(',', pos);
        if (comma == std::string_view::npos) comma = spec.size();
        const auto item = text::trim(spec.substr(pos, comma - pos));
        pos = comma + 1;
        if (item.empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string_view::npos) throw InvalidArgument("sweep: expected key=value, got '" + std::string(item) + "'");
        const auto key = text::trim(item.substr(0, eq));
        const auto value = text::trim(item.substr(eq + 1));
        auto num = [&] {
            auto v = text::parse_double(value);
            if (!v) throw InvalidArgument("sweep: " + std::string(key) + " expects a number, got '" + std::string(value) + "'");
            return *v;
        };
        if (key == "sample") {
            s.sample = std::string(value);
        } else if (key == "from") {
            s.from = num();
            have_from = true;
        } else if (key == "to") {
            s.to = num();
            have_to = true;
        } else if (key == "points") {
            auto v = text::parse_int(value);
            if (!v || *v < 2) throw InvalidArgument("sweep: points must be an integer >= 2");
            s.points = static_cast<int>(*v);
            have_points = true;
        } else if (key == "drain") {
            s.drain = num();
        } else {
            throw InvalidArgument("sweep: unknown key '" + std::string(key) + "'");
        }
    }
    if (s.sample.empty() || !have_from || !have_to || !have_points)
        throw InvalidArgument("sweep: sample, from, to and points are required");
    if (!(s.to > s.from)) throw InvalidArgument("sweep: to must exceed from");
    return s;
}

namespace {

// Sample files are named <dir>/<id>.dgrid; the stem names the sample.
std::pair<fs::path, std::string> sample_location(const std::string& path) {
    fs::path p(path);
    if (p.extension() != ".dgrid") throw InvalidArgument("sample path must name a .dgrid file: " + path);
    return {p.parent_path().empty() ? fs::path(".") : p.parent_path(), p.stem().string()};
}

void ensure_parent(const fs::path& file) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

gnn::Checkpoint load_checkpoint(const std::string& path) {
    if (!fs::exists(path)) throw InvalidArgument("checkpoint not found: " + path);
    return gnn::parse_checkpoint(text::read_file(path));
}

struct Options {
    std::optional<std::string> config_file;
    std::optional<std::string> tmpl, count, seed, threads, task, arch, data, epochs;
    bool self_check = false;
    std::string out, checkpoint, report, sample, sweep;
};

RunConfig load_config(const Options& o) {
    RunConfig c;
    if (o.config_file) {
        if (!fs::exists(*o.config_file)) throw InvalidArgument("config file not found: " + *o.config_file);
        c.merge(text::read_file(*o.config_file));
    }
    return c;
}

int cmd_generate(const Options& o, std::ostream& out, std::ostream& err) {
    auto config = load_config(o);
    if (o.tmpl) config.set("generate", "template", *o.tmpl);
    if (o.count) config.set("generate", "count", *o.count);
    if (o.seed) config.set("generate", "seed", *o.seed);
    if (o.threads) config.set("generate", "threads", *o.threads);
    if (o.self_check) config.set("generate", "self_check", "true");
    const auto ranges = template_ranges(config);
    const auto count = config.integer("generate", "count");
    const auto seed = config.integer("generate", "seed");
    const auto threads = config.integer("generate", "threads");
    if (count < 0) throw InvalidArgument("generate.count: must be non-negative");
    if (threads < 0) throw InvalidArgument("generate.threads: must be non-negative");
    data::GenerateOptions options;
    options.threads = static_cast<unsigned>(threads);
    options.self_check = config.boolean("generate", "self_check");
    auto samples = data::generate_dataset(ranges, static_cast<std::size_t>(count), static_cast<std::uint64_t>(seed), options);
    const fs::path dir(o.out);
    const auto manifest = data::write_dataset(dir, samples, ranges, static_cast<std::uint64_t>(seed));
    text::write_file((dir / "config.ini").string(), config.write({"generate"}));
    const std::size_t failed = manifest.entries.size() - manifest.converged_count();
    out << "generated " << manifest.converged_count() << " of " << manifest.entries.size() << " samples in "
        << dir.string() << '\n';
    if (failed == 0) return exit_ok;
    err << failed << " sample(s) did not converge:\n";
    for (const auto& e : manifest.entries)
        if (!e.converged) err << "  " << e.id << ": " << e.note << '\n';
    return exit_generation;
}

int cmd_encode(const Options& o, std::ostream& out, std::ostream& err) {
    auto config = load_config(o);
    if (o.task) config.set("encode", "task", *o.task);
    if (o.seed) config.set("encode", "seed", *o.seed);
    const auto task = encoding::parse_task(config.get("encode", "task"));
    if (task == Task::none) throw InvalidArgument("encode.task: expected poisson or iv");
    const auto f = config.numbers("encode", "fractions");
    if (f.size() != 3) throw InvalidArgument("encode.fractions: expected three numbers");
    const auto samples = data::read_dataset(*o.data);
    std::vector<std::string> rejected;
    const auto bundle = build_bundle(samples, task, {f[0], f[1], f[2]},
                                     static_cast<std::uint64_t>(config.integer("encode", "seed")), &rejected);
    for (const auto& id : rejected) err << "rejected " << id << ": drain current is not positive\n";
    const fs::path file(o.out);
    ensure_parent(file);
    text::write_file(file.string(), encoding::write_bundle(bundle));
    out << "encoded " << bundle.graphs.size() << " graphs (" << bundle.train.size() << " train, "
        << bundle.validation.size() << " validation, " << bundle.test.size() << " test), width "
        << bundle.layout.width() << ", task " << encoding::to_string(task) << '\n';
    return exit_ok;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream&) {
    auto config = load_config(o);
    if (o.data) config.set("train", "data", *o.data);
    if (o.epochs) config.set("train", "epochs", *o.epochs);
    if (o.seed) {
        config.set("train", "seed", *o.seed);
        config.set("model", "seed", *o.seed);
    }
    const auto task = encoding::parse_task(*o.task);
    if (task == Task::none) throw InvalidArgument("--task: expected poisson or iv");
    const auto& data_path = config.get("train", "data");
    if (data_path.empty()) throw InvalidArgument("no training data: set [train] data or pass --data");
    if (!fs::exists(data_path)) throw InvalidArgument("bundle not found: " + data_path);
    const auto bundle = encoding::parse_bundle(text::read_file(data_path));
    if (bundle.task != task)
        throw InvalidArgument("bundle " + data_path + " holds " + std::string(encoding::to_string(bundle.task)) +
                              " graphs, --task is " + std::string(encoding::to_string(task)));
    const auto model_cfg = model_config(config, *o.arch, task, bundle.layout.width());
    const auto train_cfg = train_config(config, task);
    const auto log_every = config.integer("train", "log_every");

    const fs::path dir(o.out);
    fs::create_directories(dir);
    text::write_file((dir / "config.ini").string(), config.write({"model", "train"}));
    out << "training " << *o.arch << " (" << gnn::Model(model_cfg).parameter_count() << " parameters) on "
        << bundle.train.size() << " graphs\n";
    auto progress = [&](const train::EpochRecord& r) {
        if (log_every > 0 && (r.epoch % log_every == 0 || r.epoch + 1 == train_cfg.epochs))
            out << "epoch " << r.epoch << " lr " << text::format_double(r.lr) << " train_mse "
                << text::format_double(r.train_mse) << " val_mse " << text::format_double(r.val_mse) << '\n';
    };
    auto result = train::train_bundle(bundle, model_cfg, train_cfg,
                                      static_cast<std::uint64_t>(config.integer("model", "seed")), progress);

    text::write_file((dir / "checkpoint.dckpt").string(), gnn::write_checkpoint(result.model, bundle.normalizer));
    text::write_file((dir / "history.csv").string(), train::history_csv(result.run.history));
    MetricReport report{*o.arch, task, result.model.parameter_count(), result.run.best_epoch,
                        static_cast<int>(result.run.history.size()),
                        {{"train", result.train}, {"validation", result.validation}, {"test", result.test}}};
    text::write_file((dir / "report.txt").string(), write_report(report));
    out << "best epoch " << result.run.best_epoch << ", test mse "
        << (result.test.count >= 2 ? text::format_double(result.test.mse) : "-") << "; wrote " << dir.string() << '\n';
    return exit_ok;
}

int cmd_eval(const Options& o, std::ostream& out, std::ostream& err) {
    const auto ck = load_checkpoint(o.checkpoint);
    const auto task = ck.model.config().task;
    MetricReport report{ck.model.config().arch, task, ck.model.parameter_count(), -1, 0, {}};
    auto metrics = [&](const std::vector<encoding::DeviceGraph>& graphs, const std::vector<std::size_t>& idx) {
        std::vector<encoding::DeviceGraph> scaled;
        for (auto i : idx) scaled.push_back(ck.normalizer.apply(graphs.at(i)));
        std::vector<const encoding::DeviceGraph*> ptr;
        for (const auto& g : scaled) ptr.push_back(&g);
        return ptr.size() < 2 ? train::SplitMetrics{ptr.size(), 0.0, 0.0, 0.0}
                              : train::evaluate(ck.model, ptr, ck.normalizer);
    };
    auto check_width = [&](std::size_t width) {
        if (width != ck.model.config().input_width)
            throw InvalidArgument("layout mismatch: model expects " + std::to_string(ck.model.config().input_width) +
                                  " feature columns, data has " + std::to_string(width));
    };
    if (fs::is_directory(*o.data)) {
        std::vector<std::string> rejected;
        const auto graphs = encode_samples(data::read_dataset(*o.data), task, &rejected);
        for (const auto& id : rejected) err << "rejected " << id << ": drain current is not positive\n";
        if (!graphs.empty()) check_width(static_cast<std::size_t>(graphs.front().x.cols()));
        std::vector<std::size_t> all(graphs.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        report.splits.emplace_back("unseen", metrics(graphs, all));
    } else {
        if (!fs::exists(*o.data)) throw InvalidArgument("data not found: " + *o.data);
        const auto bundle = encoding::parse_bundle(text::read_file(*o.data));
        if (bundle.task != task)
            throw InvalidArgument("bundle holds " + std::string(encoding::to_string(bundle.task)) +
                                  " graphs, checkpoint is for " + std::string(encoding::to_string(task)));
        check_width(bundle.layout.width());
        report.splits.emplace_back("train", metrics(bundle.graphs, bundle.train));
        report.splits.emplace_back("validation", metrics(bundle.graphs, bundle.validation));
        report.splits.emplace_back("test", metrics(bundle.graphs, bundle.test));
    }
    const auto body = write_report(report);
    const fs::path file(o.report);
    ensure_parent(file);
    text::write_file(file.string(), body);
    out << body;
    return exit_ok;
}

int cmd_predict(const Options& o, std::ostream& out, std::ostream&) {
    const auto ck = load_checkpoint(o.checkpoint);
    const auto task = ck.model.config().task;
    const auto [dir, id] = sample_location(o.sample);
    const auto sample = data::read_sample(dir, id);
    auto graph = encoding::encode_device(sample.device, sample.bias);
    graph.id = id;
    const fs::path file(o.out);
    ensure_parent(file);
    if (task == Task::poisson) {
        graph = encoding::attach_self_consistent(std::move(graph), sample.fields, task);
        const auto phi = gnn::predict_potential(ck.model, ck.normalizer, graph);
        std::vector<double> diff(phi.size());
        for (std::size_t i = 0; i < phi.size(); ++i) diff[i] = std::abs(phi[i] - sample.fields.potential[i]);
        text::write_file(file.string(), io::write_field({"potential", "V", phi}));
        auto diff_file = file;
        diff_file.replace_extension();
        diff_file += ".difference.dfield";
        text::write_file(diff_file.string(), io::write_field({"potential_difference", "V", diff}));
        out << "wrote " << phi.size() << " node potentials to " << file.string() << " and |difference| to "
            << diff_file.string() << '\n';
        return exit_ok;
    }
    // IV: the label is not needed for inference, so non-positive oracle currents are tolerated
    auto fields = sample.fields;
    const double oracle = fields.currents.count("drain") ? fields.currents.at("drain") : 0.0;
    fields.currents["drain"] = 1.0;
    graph = encoding::attach_self_consistent(std::move(graph), fields, task);
    const double log_i = gnn::predict_current(ck.model, ck.normalizer, graph);
    const double current = std::pow(10.0, log_i);
    std::ostringstream os;
    os << "current 1\n"
       << "sample " << id << '\n'
       << "log10_predicted " << text::format_double(log_i) << '\n'
       << "predicted " << text::format_double(current) << " A/m\n"
       << "oracle " << text::format_double(oracle) << " A/m\n"
       << "difference " << text::format_double(std::abs(current - oracle)) << " A/m\n";
    if (oracle > 0.0) os << "log10_difference " << text::format_double(std::abs(log_i - std::log10(oracle))) << '\n';
    text::write_file(file.string(), os.str());
    out << os.str();
    return exit_ok;
}

int cmd_export_iv(const Options& o, std::ostream& out, std::ostream&) {
    const auto ck = load_checkpoint(o.checkpoint);
    if (ck.model.config().task != Task::iv)
        throw InvalidArgument("export-iv needs an iv checkpoint, got " +
                              std::string(encoding::to_string(ck.model.config().task)));
    const auto spec = parse_sweep_spec(o.sweep);
    const auto [dir, id] = sample_location(spec.sample);
    const auto sample = data::read_sample(dir, id);
    std::ostringstream csv;
    csv << "V_G,I_oracle,I_predicted\n";
    for (int k = 0; k < spec.points; ++k) {
        auto bias = sample.bias;
        const double vg = spec.from + (spec.to - spec.from) * k / (spec.points - 1);
        bias.voltages["gate"] = vg;
        if (spec.drain) bias.voltages["drain"] = *spec.drain;
        auto fields = physics::gummel_solve(sample.device, bias);
        const double oracle = fields.currents.at("drain");
        fields.currents["drain"] = 1.0;
        auto graph = encoding::attach_self_consistent(encoding::encode_device(sample.device, bias), fields, Task::iv);
        const double predicted = std::pow(10.0, gnn::predict_current(ck.model, ck.normalizer, graph));
        csv << text::format_double(vg) << ',' << text::format_double(oracle) << ',' << text::format_double(predicted)
            << '\n';
    }
    const fs::path file(o.out);
    ensure_parent(file);
    text::write_file(file.string(), csv.str());
    out << "wrote " << spec.points << " sweep points to " << file.string() << '\n';
    return exit_ok;
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Graph neural network surrogates for 2D device simulation", "devgraph"};
    app.require_subcommand(1);
    Options o;

    auto* gen = app.add_subcommand("generate", "solve random nMOSFET samples into a dataset directory");
    gen->add_option("--template", o.tmpl, "device template (nmosfet)");
    gen->add_option("--count", o.count, "number of samples");
    gen->add_option("--seed", o.seed, "run seed");
    gen->add_option("--threads", o.threads, "worker threads");
    gen->add_flag("--self-check", o.self_check, "verify every sample with a second solve");
    gen->add_option("--config", o.config_file, "config file");
    gen->add_option("--out", o.out, "output directory")->required();

    auto* enc = app.add_subcommand("encode", "encode a dataset directory into a graph bundle");
    enc->add_option("--task", o.task, "poisson or iv");
    enc->add_option("--data", o.data, "dataset directory")->required();
    enc->add_option("--seed", o.seed, "split seed");
    enc->add_option("--config", o.config_file, "config file");
    enc->add_option("--out", o.out, "bundle file")->required();

    auto* trn = app.add_subcommand("train", "train a model on an encoded bundle");
    trn->add_option("--arch", o.arch, "fatgcn, deepgcn, resgcn or relgat")->required();
    trn->add_option("--task", o.task, "poisson or iv")->required();
    trn->add_option("--config", o.config_file, "config file");
    trn->add_option("--data", o.data, "bundle file (overrides [train] data)");
    trn->add_option("--epochs", o.epochs, "maximum epochs (overrides [train] epochs)");
    trn->add_option("--seed", o.seed, "initialization and shuffle seed");
    trn->add_option("--out", o.out, "output directory")->required();

    auto* ev = app.add_subcommand("eval", "report MSE and R^2 of a checkpoint");
    ev->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
    ev->add_option("--data", o.data, "bundle file (per split) or dataset directory (unseen set)")->required();
    ev->add_option("--report", o.report, "report file")->required();

    auto* pred = app.add_subcommand("predict", "predict one sample");
    pred->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
    pred->add_option("--sample", o.sample, "sample .dgrid file")->required();
    pred->add_option("--out", o.out, "output file")->required();

    auto* exp = app.add_subcommand("export-iv", "export an oracle and predicted gate sweep as CSV");
    exp->add_option("--checkpoint", o.checkpoint, "iv checkpoint file")->required();
    exp->add_option("--sweep", o.sweep, "sample=PATH,from=V,to=V,points=N[,drain=V]")->required();
    exp->add_option("--out", o.out, "CSV file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return exit_usage;
    }

    try {
        if (*gen) return cmd_generate(o, out, err);
        if (*enc) return cmd_encode(o, out, err);
        if (*trn) return cmd_train(o, out, err);
        if (*ev) return cmd_eval(o, out, err);
        if (*pred) return cmd_predict(o, out, err);
        return cmd_export_iv(o, out, err);
    } catch (const DivergenceError& e) {
        err << "error: " << e.what() << '\n';
        return exit_divergence;
    } catch (const ConvergenceError& e) {
        err << "error: " << e.what() << '\n';
        return exit_generation;
    } catch (const InvalidArgument& e) {
        err << "error: " << e.what() << '\n';
        if (*gen && std::string_view(e.what()).find("template") != std::string_view::npos)
            err << '\n' << gen->help();
        return exit_usage;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return exit_usage;
    }
}

} // namespace devgraph::cli
