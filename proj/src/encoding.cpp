#include "devgraph/encoding.hpp"

#include "devgraph/error.hpp"
#include "devgraph/text.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace devgraph::encoding {

std::string_view to_string(Task task) {
    switch (task) {
    case Task::none: return "none";
    case Task::poisson: return "poisson";
    case Task::iv: return "iv";
    }
    return "none";
}

Task parse_task(std::string_view name) {
    if (name == "none") return Task::none;
    if (name == "poisson") return Task::poisson;
    if (name == "iv") return Task::iv;
    throw InvalidArgument("unknown task '" + std::string(name) + "' (expected poisson or iv)");
}

std::size_t self_consistent_width(Task task) {
    switch (task) {
    case Task::none: return 0;
    case Task::poisson: return 1;
    case Task::iv: return 2;
    }
    return 0;
}

NodeFeatureLayout NodeFeatureLayout::v1(Task task) {
    NodeFeatureLayout layout;
    const std::vector<std::tuple<const char*, std::size_t, bool>> blocks{
        {"material_class", 3, true}, {"material_params", 8, false}, {"coordinates", 2, false},
        {"bias", 4, false},          {"region", 4, true},           {"contact", 3, false},
        {"doping", 2, false},        {"temperature", 1, false},
        {"self_consistent", self_consistent_width(task), false}};
    std::size_t offset = 0;
    for (const auto& [name, width, one_hot] : blocks) {
        layout.blocks.push_back({name, offset, width, one_hot});
        offset += width;
    }
    return layout;
}

std::size_t NodeFeatureLayout::width() const {
    return blocks.empty() ? 0 : blocks.back().offset + blocks.back().width;
}

const FeatureBlock& NodeFeatureLayout::block(std::string_view name) const {
    for (const auto& b : blocks)
        if (b.name == name) return b;
    throw InvalidArgument("layout has no block named '" + std::string(name) + "'");
}

std::vector<bool> NodeFeatureLayout::one_hot_mask() const {
    std::vector<bool> mask(width(), false);
    for (const auto& b : blocks)
        for (std::size_t c = 0; c < b.width; ++c) mask[b.offset + c] = b.one_hot;
    return mask;
}

std::array<double, 3> relative_position(const Point2D& u, const Point2D& v) {
    const double dx = v.x - u.x, dy = v.y - u.y;
    return {dx, dy, std::hypot(dx, dy)};
}

double log_compress(double value, double reference) {
    const double m = std::log10(1.0 + std::abs(value) / reference);
    return value < 0.0 ? -m : m;
}

DeviceGraph encode_device(const physics::Device& device, const physics::BiasPoint& bias) {
    const DeviceMesh& mesh = device.mesh;
    const std::size_t n = mesh.vertex_count();
    if (device.doping.donors.size() != n || device.doping.acceptors.size() != n)
        throw InvalidArgument("encode_device: doping has " + std::to_string(device.doping.donors.size()) +
                              " entries for " + std::to_string(n) + " vertices");
    if (mesh.region_of_vertex.size() != n) throw InvalidArgument("encode_device: region_of_vertex length mismatch");

    const auto layout = NodeFeatureLayout::v1();
    DeviceGraph g;
    g.x = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(layout.width()));

    double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
    for (const auto& p : mesh.vertices) {
        xmin = std::min(xmin, p.x), xmax = std::max(xmax, p.x);
        ymin = std::min(ymin, p.y), ymax = std::max(ymax, p.y);
    }
    const double sx = xmax > xmin ? xmax - xmin : 1.0, sy = ymax > ymin ? ymax - ymin : 1.0;
    std::vector<Point2D> unit(n);
    for (std::size_t v = 0; v < n; ++v) unit[v] = {(mesh.vertices[v].x - xmin) / sx, (mesh.vertices[v].y - ymin) / sy};

    // contact membership in one-hot order
    const std::array<const char*, 4> region_names{"gate", "drain", "source", "body"};
    std::vector<int> region_slot(n, 3);
    std::vector<double> work_function(n, 0.0);
    for (int r = 0; r < 4; ++r) {
        auto it = mesh.contacts.find(region_names[static_cast<std::size_t>(r)]);
        if (it == mesh.contacts.end()) continue;
        double wf = 0.0;
        if (auto c = device.contacts.find(it->first); c != device.contacts.end() && c->second.kind == physics::ContactKind::gate)
            wf = c->second.work_function_offset;
        for (auto v : it->second) region_slot[v] = r, work_function[v] = wf;
    }

    const double vg = bias.voltage("gate"), vd = bias.voltage("drain"), vs = bias.voltage("source"),
                 vb = bias.voltage("body");
    for (std::size_t v = 0; v < n; ++v) {
        const int region = mesh.region_of_vertex[v];
        if (region < 0 || static_cast<std::size_t>(region) >= mesh.regions.size())
            throw InvalidArgument("encode_device: vertex " + std::to_string(v) + " has no region");
        const auto& mat = device.material_of_region(region);
        auto row = g.x.row(static_cast<Eigen::Index>(v));
        row(static_cast<Eigen::Index>(mat.material_class)) = 1.0; // metal, insulator, semiconductor
        const std::array<double, 8> params{mat.permittivity,
                                           mat.bandgap,
                                           mat.intrinsic_density > 0.0 ? std::log10(mat.intrinsic_density) : 0.0,
                                           mat.mobility_n,
                                           mat.mobility_p,
                                           mat.model_slots[0],
                                           mat.model_slots[1],
                                           mat.model_slots[2]};
        for (int k = 0; k < 8; ++k) row(3 + k) = params[static_cast<std::size_t>(k)];
        row(11) = unit[v].x;
        row(12) = unit[v].y;
        row(13) = vg, row(14) = vd, row(15) = vs, row(16) = vb;
        row(17 + region_slot[v]) = 1.0;
        // contact resistance and Schottky barrier are zero for ideal contacts
        row(23) = work_function[v];
        row(24) = log_compress(device.doping.donors[v], kDopingReference);
        row(25) = log_compress(device.doping.acceptors[v], kDopingReference);
        row(26) = bias.temperature;
    }

    const std::size_t e = 2 * mesh.edge_count() + n;
    g.src.reserve(e);
    g.dst.reserve(e);
    g.edge_attr.resize(static_cast<Eigen::Index>(e), 3);
    auto push = [&](std::size_t u, std::size_t v) {
        const auto r = relative_position(unit[u], unit[v]);
        const auto k = static_cast<Eigen::Index>(g.src.size());
        g.edge_attr.row(k) << r[0], r[1], r[2];
        g.src.push_back(static_cast<int>(u));
        g.dst.push_back(static_cast<int>(v));
    };
    for (const auto& [a, b] : mesh.edges) {
        push(a, b);
        push(b, a);
    }
    for (std::size_t v = 0; v < n; ++v) push(v, v);
    return g;
}

DeviceGraph attach_self_consistent(DeviceGraph graph, const physics::SolutionFields& fields, Task task) {
    const std::size_t n = graph.node_count();
    if (graph.task != Task::none) throw InvalidArgument("attach_self_consistent: graph already carries a task");
    if (fields.charge.size() != n || (task == Task::iv && fields.potential.size() != n) ||
        (task == Task::poisson && fields.potential.size() != n))
        throw InvalidArgument("attach_self_consistent: fields have " + std::to_string(fields.charge.size()) +
                              " values for " + std::to_string(n) + " nodes");
    if (task == Task::none) return graph;
    const auto w = static_cast<Eigen::Index>(self_consistent_width(task));
    Matrix x(graph.x.rows(), graph.x.cols() + w);
    x.leftCols(graph.x.cols()) = graph.x;
    const Eigen::Index base = graph.x.cols();
    for (std::size_t v = 0; v < n; ++v) {
        const auto r = static_cast<Eigen::Index>(v);
        const double rho = log_compress(fields.charge[v], kChargeReference);
        if (task == Task::poisson) {
            x(r, base) = rho;
        } else {
            x(r, base) = fields.potential[v];
            x(r, base + 1) = rho;
        }
    }
    graph.x = std::move(x);
    graph.task = task;
    if (task == Task::poisson) {
        graph.node_label = fields.potential;
    } else {
        auto it = fields.currents.find("drain");
        if (it == fields.currents.end()) throw InvalidArgument("attach_self_consistent: no drain current");
        if (!(it->second > 0.0))
            throw InvalidArgument("attach_self_consistent: sample rejected, drain current " +
                                  text::format_double(it->second) + " A/m is not positive");
        graph.graph_label = std::log10(it->second);
    }
    return graph;
}

DeviceGraph Normalizer::apply(const DeviceGraph& graph) const {
    if (static_cast<std::size_t>(graph.x.cols()) != shift.size())
        throw InvalidArgument("normalizer expects " + std::to_string(shift.size()) + " feature columns, graph has " +
                              std::to_string(graph.x.cols()));
    DeviceGraph out = graph;
    for (Eigen::Index c = 0; c < out.x.cols(); ++c) {
        const auto k = static_cast<std::size_t>(c);
        out.x.col(c) = (out.x.col(c).array() - shift[k]) / scale[k];
    }
    out.edge_attr /= edge_scale;
    for (double& y : out.node_label) y = label_to_model(y);
    if (graph.task == Task::iv) out.graph_label = label_to_model(graph.graph_label);
    return out;
}

namespace {

// Shift and population standard deviation with a degenerate-scale fallback.
std::pair<double, double> affine_of(double mean, double centred_sq, double count) {
    const double sd = std::sqrt(centred_sq / count);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) return {mean, 1.0};
    return {mean, sd};
}

} // namespace

Normalizer fit_normalizer(const std::vector<const DeviceGraph*>& training, const NodeFeatureLayout& layout) {
    if (training.empty()) throw InvalidArgument("fit_normalizer: empty training set");
    const std::size_t f = layout.width();
    const auto mask = layout.one_hot_mask();
    Normalizer norm;
    norm.layout_version = layout.version;
    norm.task = training.front()->task;
    norm.shift.assign(f, 0.0);
    norm.scale.assign(f, 1.0);

    // two passes (mean, then centred second moment) for accuracy
    std::vector<double> sum(f, 0.0);
    double rows = 0.0, dist_sum = 0.0, dist_count = 0.0, label_sum = 0.0, label_count = 0.0;
    for (const auto* g : training) {
        if (static_cast<std::size_t>(g->x.cols()) != f)
            throw InvalidArgument("fit_normalizer: graph '" + g->id + "' has " + std::to_string(g->x.cols()) +
                                  " columns, layout has " + std::to_string(f));
        for (std::size_t c = 0; c < f; ++c) sum[c] += g->x.col(static_cast<Eigen::Index>(c)).sum();
        rows += static_cast<double>(g->x.rows());
        for (Eigen::Index e = 0; e < g->edge_attr.rows(); ++e)
            if (g->edge_attr(e, 2) > 0.0) dist_sum += g->edge_attr(e, 2), dist_count += 1.0;
        if (g->task == Task::poisson)
            for (double y : g->node_label) label_sum += y, label_count += 1.0;
        if (g->task == Task::iv) label_sum += g->graph_label, label_count += 1.0;
    }
    std::vector<double> mean(f);
    for (std::size_t c = 0; c < f; ++c) mean[c] = sum[c] / rows;
    std::vector<double> sq(f, 0.0);
    const double label_mean = label_count > 0 ? label_sum / label_count : 0.0;
    double label_sq = 0.0;
    for (const auto* g : training) {
        for (std::size_t c = 0; c < f; ++c)
            sq[c] += (g->x.col(static_cast<Eigen::Index>(c)).array() - mean[c]).square().sum();
        if (g->task == Task::poisson)
            for (double y : g->node_label) label_sq += (y - label_mean) * (y - label_mean);
        if (g->task == Task::iv) label_sq += (g->graph_label - label_mean) * (g->graph_label - label_mean);
    }
    for (std::size_t c = 0; c < f; ++c) {
        if (mask[c]) continue;
        auto [m, s] = affine_of(mean[c], sq[c], rows);
        norm.shift[c] = m;
        norm.scale[c] = s;
    }
    if (dist_count > 0.0) norm.edge_scale = dist_sum / dist_count;
    if (label_count > 0.0) {
        auto [m, s] = affine_of(label_mean, label_sq, label_count);
        norm.label_shift = m;
        norm.label_scale = s;
    }
    return norm;
}

Normalizer fit_normalizer(const std::vector<DeviceGraph>& training, const NodeFeatureLayout& layout) {
    std::vector<const DeviceGraph*> ptrs;
    for (const auto& g : training) ptrs.push_back(&g);
    return fit_normalizer(ptrs, layout);
}

// ---- text container ------------------------------------------------------

namespace {

using text::format_double;

void append_values(std::string& out, const std::vector<double>& values) {
    for (double v : values) out += " " + format_double(v);
}

void append_indices(std::string& out, const std::vector<std::size_t>& values) {
    for (auto v : values) out += " " + std::to_string(v);
}

class Reader {
public:
    explicit Reader(std::string_view src) : lines_(src) {}

    std::vector<std::string_view> record(std::string_view key, std::size_t min_tokens = 1) {
        auto line = lines_.next();
        if (!line) throw ParseError(lines_.line_number() + 1, "missing '" + std::string(key) + "' record");
        auto tok = text::split_ws(*line);
        if (tok.empty() || tok[0] != key || tok.size() < min_tokens)
            throw ParseError(lines_.line_number(), "expected '" + std::string(key) + "' record");
        return tok;
    }
    std::vector<std::string_view> tokens() {
        auto line = lines_.next();
        if (!line) throw ParseError(lines_.line_number() + 1, "unexpected end of input");
        return text::split_ws(*line);
    }
    bool at_end() { return !lines_.next(); }
    double number(std::string_view tok) {
        auto v = text::parse_double(tok);
        if (!v || !std::isfinite(*v)) throw ParseError(line(), "invalid number '" + std::string(tok) + "'");
        return *v;
    }
    long long integer(std::string_view tok, long long lo = 0) {
        auto v = text::parse_int(tok);
        if (!v || *v < lo) throw ParseError(line(), "invalid integer '" + std::string(tok) + "'");
        return *v;
    }
    std::size_t line() const { return lines_.line_number(); }

private:
    text::LineReader lines_;
};

std::vector<double> numbers_after(Reader& r, const std::vector<std::string_view>& tok, std::size_t expected) {
    if (tok.size() != expected + 1)
        throw ParseError(r.line(), "'" + std::string(tok[0]) + "' expects " + std::to_string(expected) + " values");
    std::vector<double> out;
    for (std::size_t k = 1; k < tok.size(); ++k) out.push_back(r.number(tok[k]));
    return out;
}

void write_normalizer_records(std::string& out, const Normalizer& n) {
    out += "normalizer " + std::to_string(n.layout_version) + " " + std::string(to_string(n.task)) + " " +
           std::to_string(n.shift.size()) + "\n";
    out += "shift";
    append_values(out, n.shift);
    out += "\nscale";
    append_values(out, n.scale);
    out += "\nedge_scale " + format_double(n.edge_scale) + "\n";
    out += "label " + format_double(n.label_shift) + " " + format_double(n.label_scale) + "\n";
}

Normalizer read_normalizer_records(Reader& r) {
    auto head = r.record("normalizer", 4);
    if (head.size() != 4) throw ParseError(r.line(), "expected 'normalizer <version> <task> <width>'");
    Normalizer n;
    n.layout_version = static_cast<int>(r.integer(head[1], 1));
    try {
        n.task = parse_task(head[2]);
    } catch (const InvalidArgument& e) {
        throw ParseError(r.line(), e.what());
    }
    const auto f = static_cast<std::size_t>(r.integer(head[3]));
    n.shift = numbers_after(r, r.record("shift"), f);
    n.scale = numbers_after(r, r.record("scale"), f);
    for (double s : n.scale)
        if (!(s > 0.0)) throw ParseError(r.line(), "scale values must be > 0");
    n.edge_scale = numbers_after(r, r.record("edge_scale"), 1)[0];
    auto label = numbers_after(r, r.record("label"), 2);
    n.label_shift = label[0];
    n.label_scale = label[1];
    if (!(n.edge_scale > 0.0) || !(n.label_scale > 0.0)) throw ParseError(r.line(), "scales must be > 0");
    return n;
}

} // namespace

std::string write_normalizer(const Normalizer& normalizer) {
    std::string out;
    write_normalizer_records(out, normalizer);
    return out;
}

Normalizer parse_normalizer(std::string_view src) {
    Reader r(src);
    auto n = read_normalizer_records(r);
    if (!r.at_end()) throw ParseError(r.line(), "trailing content after normalizer");
    return n;
}

std::string write_bundle(const GraphBundle& b) {
    std::string out = "dbundle 1\n";
    out += "layout " + std::to_string(b.layout.version) + " " + std::to_string(b.layout.blocks.size()) + "\n";
    for (const auto& blk : b.layout.blocks)
        out += "block " + blk.name + " " + std::to_string(blk.offset) + " " + std::to_string(blk.width) + " " +
               (blk.one_hot ? "1" : "0") + "\n";
    out += "task " + std::string(to_string(b.task)) + "\n";
    for (const auto& [name, split] : {std::pair{"train", &b.train}, {"validation", &b.validation}, {"test", &b.test}}) {
        out += "split " + std::string(name) + " " + std::to_string(split->size());
        append_indices(out, *split);
        out += "\n";
    }
    write_normalizer_records(out, b.normalizer);
    out += "graphs " + std::to_string(b.graphs.size()) + "\n";
    const std::size_t f = b.layout.width();
    for (const auto& g : b.graphs) {
        if (static_cast<std::size_t>(g.x.cols()) != f)
            throw InvalidArgument("write_bundle: graph '" + g.id + "' width does not match the layout");
        if (g.task == Task::poisson && g.node_label.size() != g.node_count())
            throw InvalidArgument("write_bundle: graph '" + g.id + "' label length mismatch");
        out += "graph " + (g.id.empty() ? std::string("-") : g.id) + " " + std::string(to_string(g.task)) + " " +
               std::to_string(g.node_count()) + " " + std::to_string(g.edge_count()) + " " +
               format_double(g.graph_label) + "\n";
        for (Eigen::Index v = 0; v < g.x.rows(); ++v) {
            out += "n";
            for (Eigen::Index c = 0; c < g.x.cols(); ++c) out += " " + format_double(g.x(v, c));
            if (g.task == Task::poisson) out += " " + format_double(g.node_label[static_cast<std::size_t>(v)]);
            out += "\n";
        }
        for (std::size_t e = 0; e < g.edge_count(); ++e) {
            const auto k = static_cast<Eigen::Index>(e);
            out += "e " + std::to_string(g.src[e]) + " " + std::to_string(g.dst[e]) + " " +
                   format_double(g.edge_attr(k, 0)) + " " + format_double(g.edge_attr(k, 1)) + " " +
                   format_double(g.edge_attr(k, 2)) + "\n";
        }
    }
    return out;
}

GraphBundle parse_bundle(std::string_view src) {
    Reader r(src);
    auto head = r.record("dbundle", 2);
    if (head.size() != 2 || head[1] != "1") throw ParseError(r.line(), "unsupported bundle version");
    GraphBundle b;
    auto lay = r.record("layout", 3);
    b.layout.version = static_cast<int>(r.integer(lay[1], 1));
    const auto nblocks = r.integer(lay[2]);
    std::size_t expected_offset = 0;
    for (long long k = 0; k < nblocks; ++k) {
        auto t = r.record("block", 5);
        if (t.size() != 5) throw ParseError(r.line(), "expected 'block <name> <offset> <width> <one_hot>'");
        FeatureBlock blk{std::string(t[1]), static_cast<std::size_t>(r.integer(t[2])),
                         static_cast<std::size_t>(r.integer(t[3])), t[4] == "1"};
        if (blk.offset != expected_offset) throw ParseError(r.line(), "block offsets are not contiguous");
        expected_offset += blk.width;
        b.layout.blocks.push_back(blk);
    }
    auto task = r.record("task", 2);
    try {
        b.task = parse_task(task[1]);
    } catch (const InvalidArgument& e) {
        throw ParseError(r.line(), e.what());
    }
    for (auto* split : {&b.train, &b.validation, &b.test}) {
        auto t = r.record("split", 3);
        const auto count = static_cast<std::size_t>(r.integer(t[2]));
        if (t.size() != count + 3) throw ParseError(r.line(), "split " + std::string(t[1]) + " count mismatch");
        for (std::size_t k = 0; k < count; ++k) split->push_back(static_cast<std::size_t>(r.integer(t[k + 3])));
    }
    b.normalizer = read_normalizer_records(r);
    const auto ngraphs = static_cast<std::size_t>(r.integer(r.record("graphs", 2)[1]));
    const std::size_t f = b.layout.width();
    std::set<std::size_t> seen;
    for (auto* split : {&b.train, &b.validation, &b.test})
        for (auto i : *split)
            if (i >= ngraphs || !seen.insert(i).second) throw ParseError(r.line(), "split index out of range or repeated");
    for (std::size_t k = 0; k < ngraphs; ++k) {
        auto t = r.record("graph", 6);
        if (t.size() != 6) throw ParseError(r.line(), "expected 'graph <id> <task> <nodes> <edges> <label>'");
        DeviceGraph g;
        g.id = t[1] == "-" ? "" : std::string(t[1]);
        try {
            g.task = parse_task(t[2]);
        } catch (const InvalidArgument& e) {
            throw ParseError(r.line(), e.what());
        }
        const auto nodes = static_cast<std::size_t>(r.integer(t[3]));
        const auto edges = static_cast<std::size_t>(r.integer(t[4]));
        g.graph_label = r.number(t[5]);
        g.x.resize(static_cast<Eigen::Index>(nodes), static_cast<Eigen::Index>(f));
        const std::size_t ntok = f + 1 + (g.task == Task::poisson ? 1 : 0);
        for (std::size_t v = 0; v < nodes; ++v) {
            auto row = r.tokens();
            if (row.size() != ntok || row[0] != "n")
                throw ParseError(r.line(), "node record " + std::to_string(v + 1) + " of graph " + std::to_string(k + 1) +
                                               " needs " + std::to_string(ntok - 1) + " values");
            for (std::size_t c = 0; c < f; ++c)
                g.x(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(c)) = r.number(row[c + 1]);
            if (g.task == Task::poisson) g.node_label.push_back(r.number(row[f + 1]));
        }
        g.edge_attr.resize(static_cast<Eigen::Index>(edges), 3);
        for (std::size_t e = 0; e < edges; ++e) {
            auto row = r.tokens();
            if (row.size() != 6 || row[0] != "e") throw ParseError(r.line(), "malformed edge record");
            const auto s = r.integer(row[1]), d = r.integer(row[2]);
            if (static_cast<std::size_t>(s) >= nodes || static_cast<std::size_t>(d) >= nodes)
                throw ParseError(r.line(), "edge endpoint out of range");
            g.src.push_back(static_cast<int>(s));
            g.dst.push_back(static_cast<int>(d));
            for (int c = 0; c < 3; ++c) g.edge_attr(static_cast<Eigen::Index>(e), c) = r.number(row[static_cast<std::size_t>(c) + 3]);
        }
        b.graphs.push_back(std::move(g));
    }
    if (!r.at_end()) throw ParseError(r.line(), "trailing content after the last graph");
    return b;
}

} // namespace devgraph::encoding
