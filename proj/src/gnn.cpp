#include "devgraph/gnn.hpp"

#include "devgraph/error.hpp"
#include "devgraph/text.hpp"

#include <cmath>
#include <limits>

namespace devgraph::gnn {

using ad::Tensor;
using encoding::Task;

// ---- batching ------------------------------------------------------------

std::shared_ptr<const ad::SparseMatrix> normalized_adjacency(const std::vector<int>& src, const std::vector<int>& dst,
                                                             Eigen::Index node_count) {
    if (src.size() != dst.size()) throw InvalidArgument("normalized_adjacency: src and dst lengths differ");
    std::vector<double> degree(static_cast<std::size_t>(node_count), 0.0);
    for (int d : dst) {
        if (d < 0 || d >= node_count) throw InvalidArgument("normalized_adjacency: edge endpoint out of range");
        degree[static_cast<std::size_t>(d)] += 1.0;
    }
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(src.size());
    for (std::size_t e = 0; e < src.size(); ++e) {
        const auto s = static_cast<std::size_t>(src[e]), d = static_cast<std::size_t>(dst[e]);
        if (src[e] < 0 || src[e] >= node_count || degree[s] == 0.0)
            throw InvalidArgument("normalized_adjacency: node " + std::to_string(src[e]) + " has no self-loop");
        triplets.emplace_back(dst[e], src[e], 1.0 / std::sqrt(degree[d] * degree[s]));
    }
    auto s = std::make_shared<ad::SparseMatrix>(node_count, node_count);
    s->setFromTriplets(triplets.begin(), triplets.end());
    s->makeCompressed();
    return s;
}

GraphBatch make_batch(const std::vector<const encoding::DeviceGraph*>& graphs) {
    if (graphs.empty()) throw InvalidArgument("make_batch: no graphs");
    GraphBatch b;
    const Eigen::Index width = graphs.front()->x.cols();
    Eigen::Index nodes = 0, edges = 0;
    for (const auto* g : graphs) {
        if (g->x.cols() != width)
            throw InvalidArgument("make_batch: graph '" + g->id + "' has " + std::to_string(g->x.cols()) +
                                  " feature columns, expected " + std::to_string(width));
        nodes += g->x.rows();
        edges += static_cast<Eigen::Index>(g->edge_count());
    }
    b.x.resize(nodes, width);
    b.edge_attr.resize(edges, graphs.front()->edge_attr.cols());
    std::vector<int> src, dst, owner;
    src.reserve(static_cast<std::size_t>(edges));
    dst.reserve(static_cast<std::size_t>(edges));
    owner.reserve(static_cast<std::size_t>(nodes));
    Eigen::Index node_off = 0, edge_off = 0;
    b.node_offsets.push_back(0);
    for (std::size_t k = 0; k < graphs.size(); ++k) {
        const auto& g = *graphs[k];
        if (g.edge_attr.cols() != b.edge_attr.cols() || g.edge_attr.rows() != static_cast<Eigen::Index>(g.edge_count()))
            throw InvalidArgument("make_batch: graph '" + g.id + "' has inconsistent edge features");
        b.x.middleRows(node_off, g.x.rows()) = g.x;
        b.edge_attr.middleRows(edge_off, g.edge_attr.rows()) = g.edge_attr;
        for (std::size_t e = 0; e < g.edge_count(); ++e) {
            src.push_back(g.src[e] + static_cast<int>(node_off));
            dst.push_back(g.dst[e] + static_cast<int>(node_off));
        }
        owner.insert(owner.end(), static_cast<std::size_t>(g.x.rows()), static_cast<int>(k));
        node_off += g.x.rows();
        edge_off += g.edge_attr.rows();
        b.node_offsets.push_back(node_off);
    }
    b.node_count = nodes;
    b.graph_count = static_cast<Eigen::Index>(graphs.size());
    b.adjacency = normalized_adjacency(src, dst, nodes);
    b.src = ad::make_index(std::move(src));
    b.dst = ad::make_index(std::move(dst));
    b.node_graph = ad::make_index(std::move(owner));
    return b;
}

GraphBatch make_batch(const encoding::DeviceGraph& graph) { return make_batch(std::vector{&graph}); }

// ---- parameters ----------------------------------------------------------

double ParameterSet::uniform() {
    // splitmix64, so initialization is identical on every platform
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return static_cast<double>(z >> 11) * 0x1.0p-53;
}

Tensor ParameterSet::weight(const std::string& name, Eigen::Index fan_in, Eigen::Index fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix w(fan_in, fan_out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = (2.0 * uniform() - 1.0) * limit;
    auto t = ad::variable(std::move(w));
    items_.push_back({name, t, true});
    return t;
}

Tensor ParameterSet::filled(const std::string& name, Eigen::Index rows, Eigen::Index cols, double value, bool decay) {
    auto t = ad::variable(Matrix::Constant(rows, cols, value));
    items_.push_back({name, t, decay});
    return t;
}

std::size_t ParameterSet::count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += static_cast<std::size_t>(p.tensor.value().size());
    return n;
}

// ---- layers --------------------------------------------------------------

namespace {

void check_width(const Tensor& x, Eigen::Index expected, const char* layer) {
    if (x.cols() != expected)
        throw InvalidArgument(std::string(layer) + ": input width " + std::to_string(x.cols()) + ", layer expects " +
                              std::to_string(expected));
}

} // namespace

GcnLayer::GcnLayer(ParameterSet& params, const std::string& prefix, Eigen::Index in, Eigen::Index out)
    : weight(params.weight(prefix + ".weight", in, out)), bias(params.filled(prefix + ".bias", 1, out, 0.0, false)) {}

Tensor GcnLayer::forward(const Tensor& x, const GraphBatch& batch) const {
    check_width(x, weight.rows(), "gcn");
    if (x.rows() != batch.node_count) throw InvalidArgument("gcn: input rows do not match the batch node count");
    // apply the weight first when it narrows the features
    if (weight.cols() <= weight.rows()) return ad::add(ad::spmm(batch.adjacency, ad::matmul(x, weight)), bias);
    return ad::add(ad::matmul(ad::spmm(batch.adjacency, x), weight), bias);
}

RelGatLayer::RelGatLayer(ParameterSet& params, const std::string& prefix, Eigen::Index in, Eigen::Index out,
                         int heads_, bool concat_, Eigen::Index edge_width_)
    : heads(heads_), concat(concat_) {
    if (heads < 1) throw InvalidArgument("relgat: head count must be positive");
    if (concat && out % heads != 0)
        throw InvalidArgument("relgat: width " + std::to_string(out) + " is not divisible by " + std::to_string(heads) +
                              " heads");
    head_width = concat ? out / heads : out;
    edge_width = edge_width_ > 0 ? edge_width_ : head_width;
    weight = params.weight(prefix + ".weight", in, heads * head_width);
    for (int h = 0; h < heads; ++h) {
        const auto tag = prefix + ".head" + std::to_string(h);
        edge_weight.push_back(params.weight(tag + ".edge", 3, edge_width));
        auto a = params.weight(tag + ".attention", 2 * head_width + edge_width, 1);
        // stored as a row vector
        a.mutable_value() = Matrix(a.value().transpose());
        attention.push_back(a);
    }
}

Tensor RelGatLayer::transformed(const Tensor& x) const {
    check_width(x, weight.rows(), "relgat");
    return ad::matmul(x, weight);
}

Tensor RelGatLayer::weights_from(const Tensor& h, const GraphBatch& batch) const {
    if (batch.edge_attr.cols() != 3)
        throw InvalidArgument("relgat: edge features have width " + std::to_string(batch.edge_attr.cols()) +
                              ", expected 3");
    const auto r = ad::constant(batch.edge_attr);
    std::vector<Tensor> scores;
    for (int k = 0; k < heads; ++k) {
        const auto hk = ad::slice_cols(h, k * head_width, head_width);
        const auto& a = attention[static_cast<std::size_t>(k)];
        const auto a_dst = ad::transpose(ad::slice_cols(a, 0, head_width));
        const auto a_src = ad::transpose(ad::slice_cols(a, head_width, head_width));
        const auto a_edge = ad::transpose(ad::slice_cols(a, 2 * head_width, edge_width));
        const auto s_dst = ad::gather_rows(ad::matmul(hk, a_dst), batch.dst);
        const auto s_src = ad::gather_rows(ad::matmul(hk, a_src), batch.src);
        // (r U) a_edge evaluated as r (U a_edge)
        const auto s_edge = ad::matmul(r, ad::matmul(edge_weight[static_cast<std::size_t>(k)], a_edge));
        scores.push_back(ad::leaky_relu(ad::add(ad::add(s_dst, s_src), s_edge), slope));
    }
    const auto all = heads == 1 ? scores.front() : ad::concat_cols(scores);
    return ad::segment_softmax(all, batch.dst, batch.node_count);
}

Tensor RelGatLayer::weights(const Tensor& x, const GraphBatch& batch) const {
    return weights_from(transformed(x), batch);
}

Tensor RelGatLayer::forward(const Tensor& x, const GraphBatch& batch) const {
    const auto h = transformed(x);
    const auto alpha = weights_from(h, batch);
    const auto out = ad::weighted_aggregate(h, alpha, batch.src, batch.dst, batch.node_count);
    if (concat || heads == 1) return out;
    auto acc = ad::slice_cols(out, 0, head_width);
    for (int k = 1; k < heads; ++k) acc = ad::add(acc, ad::slice_cols(out, k * head_width, head_width));
    return ad::scale(acc, 1.0 / heads);
}

ResBlock::ResBlock(ParameterSet& params, const std::string& prefix, Eigen::Index in, Eigen::Index out)
    : gcn(params, prefix + ".gcn", in, out) {
    if (in != out) projection = params.weight(prefix + ".projection", in, out);
}

Tensor ResBlock::forward(const Tensor& x, const GraphBatch& batch) const {
    const auto main = ad::elu(gcn.forward(x, batch));
    return ad::add(main, projection.defined() ? ad::matmul(x, projection) : x);
}

Linear::Linear(ParameterSet& params, const std::string& prefix, Eigen::Index in, Eigen::Index out)
    : weight(params.weight(prefix + ".weight", in, out)), bias(params.filled(prefix + ".bias", 1, out, 0.0, false)) {}

Tensor Linear::forward(const Tensor& x) const {
    check_width(x, weight.rows(), "linear");
    return ad::add(ad::matmul(x, weight), bias);
}

LayerNorm::LayerNorm(ParameterSet& params, const std::string& prefix, Eigen::Index width)
    : gamma(params.filled(prefix + ".gamma", 1, width, 1.0, false)),
      beta(params.filled(prefix + ".beta", 1, width, 0.0, false)) {}

Tensor LayerNorm::forward(const Tensor& x) const { return ad::layer_norm(x, gamma, beta); }

Mlp::Mlp(ParameterSet& params, const std::string& prefix, Eigen::Index in, const std::vector<int>& widths,
         bool layer_norm) {
    Eigen::Index width = in;
    for (std::size_t k = 0; k < widths.size(); ++k) {
        const auto tag = prefix + std::to_string(k);
        layers.emplace_back(params, tag, width, widths[k]);
        width = widths[k];
        if (layer_norm && k + 1 < widths.size()) norms.emplace_back(params, tag + ".norm", width);
    }
}

Tensor Mlp::forward(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t k = 0; k < layers.size(); ++k) {
        h = layers[k].forward(h);
        if (k + 1 == layers.size()) break;
        h = ad::elu(h);
        if (!norms.empty()) h = norms[k].forward(h);
    }
    return h;
}

// ---- configurations ------------------------------------------------------

void ModelConfig::validate() const {
    auto fail = [&](const std::string& what) { throw InvalidArgument("model config '" + arch + "': " + what); };
    if (arch.empty()) fail("missing architecture name");
    if (task != Task::poisson && task != Task::iv) fail("task must be poisson or iv");
    if (input_width == 0) fail("input width must be positive");
    if (layer_widths.empty()) fail("at least one message-passing layer is required");
    for (int w : layer_widths)
        if (w <= 0) fail("layer widths must be positive");
    if (heads < 1) fail("head count must be positive");
    if (edge_width < 0) fail("edge width must be non-negative");
    if (kind == LayerKind::relgat) {
        if (residual) fail("residual blocks apply to GCN layers only");
        for (std::size_t k = 0; k + 1 < layer_widths.size(); ++k)
            if (layer_widths[k] % heads != 0)
                fail("width " + std::to_string(layer_widths[k]) + " is not divisible by " + std::to_string(heads) +
                     " heads");
    } else if (heads != 1) {
        fail("GCN layers have a single head");
    }
    if (pooling != "none" && pooling != "mean") fail("pooling must be none or mean");
    if (task == Task::iv && pooling != "mean") fail("graph regression needs mean pooling");
    if (task == Task::poisson && pooling != "none") fail("node regression takes no pooling");
    if (mlp_widths.empty() || mlp_widths.back() != 1) fail("the MLP head must end in a scalar output");
    for (int w : mlp_widths)
        if (w <= 0) fail("MLP widths must be positive");
}

namespace {

std::vector<int> repeated(std::initializer_list<std::pair<int, int>> runs) {
    std::vector<int> out;
    for (auto [count, width] : runs) out.insert(out.end(), static_cast<std::size_t>(count), width);
    return out;
}

ModelConfig base_config(std::string_view arch, Task task, std::size_t input_width) {
    ModelConfig c;
    c.arch = std::string(arch);
    c.task = task;
    c.input_width = input_width;
    if (arch == "relgat") c.kind = LayerKind::relgat;
    else if (arch == "resgcn") c.residual = true;
    else if (arch != "fatgcn" && arch != "deepgcn") throw InvalidArgument("unknown architecture '" + c.arch + "'");
    if (task == Task::iv) c.pooling = "mean";
    return c;
}

} // namespace

ModelConfig poisson_architecture(std::string_view arch, std::size_t input_width) {
    auto c = base_config(arch, Task::poisson, input_width);
    if (arch == "fatgcn") {
        c.layer_widths = repeated({{2, 128}, {2, 256}, {1, 512}});
        c.mlp_widths = repeated({{1, 512}, {2, 256}, {2, 128}, {1, 1}});
    } else if (arch == "relgat") {
        c.layer_widths = repeated({{3, 64}, {6, 128}, {3, 256}});
        c.heads = 2;
        c.mlp_widths = {1};
    } else {
        c.layer_widths = repeated({{3, 128}, {6, 256}, {3, 512}});
        c.mlp_widths = {1};
    }
    c.validate();
    return c;
}

ModelConfig iv_architecture(std::string_view arch, std::size_t input_width) {
    auto c = base_config(arch, Task::iv, input_width);
    if (arch != "fatgcn" && arch != "relgat")
        throw InvalidArgument("architecture '" + c.arch + "' has no IV predictor configuration");
    c.layer_widths = {64, 128, 256};
    c.mlp_widths = {256, 128, 64, 1};
    c.validate();
    return c;
}

ModelConfig scaled_architecture(std::string_view arch, Task task, std::size_t input_width, int layers, int width,
                                int heads) {
    auto c = base_config(arch, task, input_width);
    if (layers < 1 || width < 2) throw InvalidArgument("scaled architecture needs layers >= 1 and width >= 2");
    c.layer_widths.assign(static_cast<std::size_t>(layers), width);
    if (c.kind == LayerKind::relgat) c.heads = heads;
    c.mlp_widths = task == Task::iv ? std::vector<int>{width, width / 2, 1} : std::vector<int>{1};
    c.validate();
    return c;
}

ModelConfig scaled_fatgcn(Task task, std::size_t input_width, int base) {
    auto c = base_config("fatgcn", task, input_width);
    if (base < 1) throw InvalidArgument("scaled_fatgcn: base width must be positive");
    c.layer_widths = {base, base, 2 * base, 2 * base, 4 * base};
    c.mlp_widths = {4 * base, 2 * base, 2 * base, base, base, 1};
    c.validate();
    return c;
}

ModelConfig matched_fatgcn(Task task, std::size_t input_width, std::size_t target) {
    ModelConfig best;
    std::size_t best_gap = std::numeric_limits<std::size_t>::max();
    for (int base = 1; base <= 256; ++base) {
        auto c = scaled_fatgcn(task, input_width, base);
        const std::size_t count = Model(c).parameter_count();
        const std::size_t gap = count > target ? count - target : target - count;
        if (gap < best_gap) {
            best_gap = gap;
            best = std::move(c);
        }
        if (count > target) break;
    }
    return best;
}

// ---- model ---------------------------------------------------------------

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), params_(seed) {
    config_.validate();
    auto width = static_cast<Eigen::Index>(config_.input_width);
    for (std::size_t k = 0; k < config_.layer_widths.size(); ++k) {
        const auto tag = "layer" + std::to_string(k);
        const Eigen::Index out = config_.layer_widths[k];
        const bool last = k + 1 == config_.layer_widths.size();
        if (config_.kind == LayerKind::relgat)
            message_.emplace_back(
                std::in_place_type<RelGatLayer>, params_, tag, width, out, config_.heads, !last, config_.edge_width);
        else if (config_.residual)
            message_.emplace_back(std::in_place_type<ResBlock>, params_, tag, width, out);
        else
            message_.emplace_back(std::in_place_type<GcnLayer>, params_, tag, width, out);
        norms_.emplace_back(params_, tag + ".norm", out);
        width = out;
    }
    head_ = Mlp(params_, "mlp", width, config_.mlp_widths);
}

Tensor Model::embed(const GraphBatch& batch, std::size_t stop) const {
    if (batch.x.cols() != static_cast<Eigen::Index>(config_.input_width))
        throw InvalidArgument("layout mismatch: model expects " + std::to_string(config_.input_width) +
                              " feature columns, batch has " + std::to_string(batch.x.cols()));
    Tensor h = ad::constant(batch.x);
    for (std::size_t k = 0; k < stop; ++k) {
        h = std::visit(
            [&](const auto& layer) {
                auto y = layer.forward(h, batch);
                // residual blocks carry their own activation
                if constexpr (!std::is_same_v<std::decay_t<decltype(layer)>, ResBlock>) y = ad::elu(y);
                return y;
            },
            message_[k]);
        h = norms_[k].forward(h);
    }
    return h;
}

Tensor Model::forward(const GraphBatch& batch) const {
    auto h = embed(batch, message_.size());
    if (pooled()) h = ad::mean_pool_segments(h, batch.node_graph, batch.graph_count);
    return head_.forward(h);
}

Matrix Model::attention(const GraphBatch& batch, std::size_t layer) const {
    if (layer >= message_.size()) throw InvalidArgument("attention: layer index out of range");
    const auto* gat = std::get_if<RelGatLayer>(&message_[layer]);
    if (!gat) throw InvalidArgument("attention: layer " + std::to_string(layer) + " is not an attention layer");
    ad::NoGradGuard guard;
    return gat->weights(embed(batch, layer), batch).value();
}

// ---- prediction ----------------------------------------------------------

namespace {

Matrix predict(const Model& model, const encoding::Normalizer& normalizer, const encoding::DeviceGraph& graph,
               Task task) {
    if (model.config().task != task)
        throw InvalidArgument("model was built for the " + std::string(encoding::to_string(model.config().task)) +
                              " task");
    if (graph.x.cols() != static_cast<Eigen::Index>(model.config().input_width))
        throw InvalidArgument("layout mismatch: model expects " + std::to_string(model.config().input_width) +
                              " feature columns, graph has " + std::to_string(graph.x.cols()));
    const auto scaled = normalizer.apply(graph);
    ad::NoGradGuard guard;
    return model.forward(make_batch(scaled)).value();
}

} // namespace

std::vector<double> predict_potential(const Model& model, const encoding::Normalizer& normalizer,
                                      const encoding::DeviceGraph& graph) {
    const auto y = predict(model, normalizer, graph, Task::poisson);
    std::vector<double> out(static_cast<std::size_t>(y.rows()));
    for (Eigen::Index i = 0; i < y.rows(); ++i) out[static_cast<std::size_t>(i)] = normalizer.label_from_model(y(i, 0));
    return out;
}

double predict_current(const Model& model, const encoding::Normalizer& normalizer, const encoding::DeviceGraph& graph) {
    return normalizer.label_from_model(predict(model, normalizer, graph, Task::iv)(0, 0));
}

// ---- checkpoint ----------------------------------------------------------

namespace {

std::string join(const std::vector<int>& v) {
    std::string out = std::to_string(v.size());
    for (int x : v) out += " " + std::to_string(x);
    return out;
}

class Records {
public:
    explicit Records(std::string_view src) : lines_(src) {}

    std::vector<std::string_view> next(std::string_view key, std::size_t tokens) {
        auto line = lines_.next();
        if (!line) throw ParseError(lines_.line_number() + 1, "missing '" + std::string(key) + "' record");
        auto tok = text::split_ws(*line);
        if (tok.empty() || tok[0] != key) throw ParseError(lines_.line_number(), "expected '" + std::string(key) + "'");
        if (tokens && tok.size() != tokens)
            throw ParseError(lines_.line_number(), "'" + std::string(key) + "' expects " + std::to_string(tokens - 1) +
                                                       " values");
        return tok;
    }
    std::vector<std::string_view> raw() {
        auto line = lines_.next();
        if (!line) throw ParseError(lines_.line_number() + 1, "unexpected end of input");
        return text::split_ws(*line);
    }
    long long integer(std::string_view tok, long long lo = 0) {
        auto v = text::parse_int(tok);
        if (!v || *v < lo) throw ParseError(lines_.line_number(), "invalid integer '" + std::string(tok) + "'");
        return *v;
    }
    double number(std::string_view tok) {
        auto v = text::parse_double(tok);
        if (!v || !std::isfinite(*v)) throw ParseError(lines_.line_number(), "invalid number '" + std::string(tok) + "'");
        return *v;
    }
    std::vector<int> widths(std::string_view key) {
        auto tok = next(key, 0);
        if (tok.size() < 2) throw ParseError(lines_.line_number(), "'" + std::string(key) + "' expects a count");
        const auto n = static_cast<std::size_t>(integer(tok[1]));
        if (tok.size() != n + 2) throw ParseError(lines_.line_number(), "'" + std::string(key) + "' count mismatch");
        std::vector<int> out;
        for (std::size_t k = 0; k < n; ++k) out.push_back(static_cast<int>(integer(tok[k + 2], 1)));
        return out;
    }
    std::size_t line() const { return lines_.line_number(); }

private:
    text::LineReader lines_;
};

} // namespace

std::string write_checkpoint(const Model& model, const encoding::Normalizer& normalizer) {
    const auto& c = model.config();
    std::string out = "dcheckpoint 1\n";
    out += "arch " + c.arch + "\n";
    out += "task " + std::string(encoding::to_string(c.task)) + "\n";
    out += "input_width " + std::to_string(c.input_width) + "\n";
    out += std::string("kind ") + (c.kind == LayerKind::relgat ? "relgat" : "gcn") + "\n";
    out += "residual " + std::to_string(c.residual ? 1 : 0) + "\n";
    out += "heads " + std::to_string(c.heads) + "\n";
    out += "edge_width " + std::to_string(c.edge_width) + "\n";
    out += "layers " + join(c.layer_widths) + "\n";
    out += "pooling " + c.pooling + "\n";
    out += "mlp " + join(c.mlp_widths) + "\n";
    out += "layout " + std::to_string(normalizer.layout_version) + "\n";
    out += std::string("label_transform ") + (c.task == Task::iv ? "log10" : "identity") + "\n";
    out += "parameters " + std::to_string(model.parameters().size()) + "\n";
    for (const auto& p : model.parameters()) {
        const auto& v = p.tensor.value();
        out += "param " + p.name + " " + std::to_string(v.rows()) + " " + std::to_string(v.cols()) + " " +
               (p.decay ? "1" : "0") + "\n";
        for (Eigen::Index i = 0; i < v.rows(); ++i) {
            for (Eigen::Index j = 0; j < v.cols(); ++j) {
                if (j) out += ' ';
                out += text::format_double(v(i, j));
            }
            out += '\n';
        }
    }
    out += encoding::write_normalizer(normalizer);
    return out;
}

Checkpoint parse_checkpoint(std::string_view src) {
    const auto split = src.find("\nnormalizer ");
    if (split == std::string_view::npos) throw ParseError(1, "checkpoint has no normalizer block");
    Records r(src.substr(0, split + 1));
    auto head = r.next("dcheckpoint", 2);
    if (head[1] != "1") throw ParseError(r.line(), "unsupported checkpoint version '" + std::string(head[1]) + "'");
    ModelConfig c;
    c.arch = std::string(r.next("arch", 2)[1]);
    try {
        c.task = encoding::parse_task(r.next("task", 2)[1]);
    } catch (const InvalidArgument& e) {
        throw ParseError(r.line(), e.what());
    }
    c.input_width = static_cast<std::size_t>(r.integer(r.next("input_width", 2)[1], 1));
    const auto kind = r.next("kind", 2)[1];
    if (kind != "gcn" && kind != "relgat") throw ParseError(r.line(), "unknown layer kind '" + std::string(kind) + "'");
    c.kind = kind == "relgat" ? LayerKind::relgat : LayerKind::gcn;
    c.residual = r.integer(r.next("residual", 2)[1]) != 0;
    c.heads = static_cast<int>(r.integer(r.next("heads", 2)[1], 1));
    c.edge_width = static_cast<int>(r.integer(r.next("edge_width", 2)[1]));
    c.layer_widths = r.widths("layers");
    c.pooling = std::string(r.next("pooling", 2)[1]);
    c.mlp_widths = r.widths("mlp");
    const auto layout = r.integer(r.next("layout", 2)[1], 1);
    const auto transform = r.next("label_transform", 2)[1];
    if (transform != (c.task == Task::iv ? "log10" : "identity"))
        throw ParseError(r.line(), "label transform '" + std::string(transform) + "' does not match the task");
    try {
        c.validate();
    } catch (const InvalidArgument& e) {
        throw ParseError(r.line(), e.what());
    }

    Model model(c);
    auto& params = model.parameters();
    const auto count = static_cast<std::size_t>(r.integer(r.next("parameters", 2)[1]));
    if (count != params.size())
        throw ParseError(r.line(), "expected " + std::to_string(params.size()) + " parameters, found " +
                                       std::to_string(count));
    for (auto& p : params) {
        auto tok = r.next("param", 5);
        const auto rows = r.integer(tok[2]), cols = r.integer(tok[3]);
        if (tok[1] != p.name || rows != p.tensor.rows() || cols != p.tensor.cols())
            throw ParseError(r.line(), "parameter '" + std::string(tok[1]) + "' does not match '" + p.name + "' " +
                                           std::to_string(p.tensor.rows()) + "x" + std::to_string(p.tensor.cols()));
        if ((tok[4] == "1") != p.decay) throw ParseError(r.line(), "decay flag mismatch for '" + p.name + "'");
        auto& value = p.tensor.mutable_value();
        for (Eigen::Index i = 0; i < rows; ++i) {
            auto row = r.raw();
            if (static_cast<Eigen::Index>(row.size()) != cols)
                throw ParseError(r.line(), "parameter '" + p.name + "' row has " + std::to_string(row.size()) +
                                               " values, expected " + std::to_string(cols));
            for (Eigen::Index j = 0; j < cols; ++j) value(i, j) = r.number(row[static_cast<std::size_t>(j)]);
        }
    }
    auto normalizer = encoding::parse_normalizer(src.substr(split + 1));
    if (normalizer.layout_version != layout) throw ParseError(r.line(), "normalizer layout version mismatch");
    if (normalizer.task != c.task) throw ParseError(r.line(), "normalizer task does not match the model task");
    if (normalizer.shift.size() != c.input_width)
        throw ParseError(r.line(), "normalizer width " + std::to_string(normalizer.shift.size()) +
                                       " does not match input width " + std::to_string(c.input_width));
    return Checkpoint{std::move(model), std::move(normalizer)};
}

} // namespace devgraph::gnn
