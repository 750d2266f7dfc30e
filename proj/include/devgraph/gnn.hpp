#pragma once

#include "devgraph/autodiff.hpp"
#include "devgraph/encoding.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace devgraph::gnn {

/// Disjoint union of one or more graphs, ready for a forward pass.
struct GraphBatch {
    Matrix x;
    Matrix edge_attr;
    ad::Index src, dst;
    ad::Index node_graph; // graph of each node
    std::shared_ptr<const ad::SparseMatrix> adjacency; // D^-1/2 (A + I) D^-1/2
    Eigen::Index node_count = 0;
    Eigen::Index graph_count = 0;
    std::vector<Eigen::Index> node_offsets; // graph_count + 1 entries
};

GraphBatch make_batch(const std::vector<const encoding::DeviceGraph*>& graphs);
GraphBatch make_batch(const encoding::DeviceGraph& graph);

/// Symmetric normalization over the given directed edges, which must
/// already contain the self-loops. Row = destination.
std::shared_ptr<const ad::SparseMatrix> normalized_adjacency(const std::vector<int>& src, const std::vector<int>& dst,
                                                             Eigen::Index node_count);

struct Parameter {
    std::string name;
    ad::Tensor tensor;
    bool decay = true; // false for biases and normalization parameters
};

/// Owns named trainable tensors and the initialization stream.
class ParameterSet {
public:
    explicit ParameterSet(std::uint64_t seed = 0) : state_(seed) {}

    /// Glorot-uniform weight.
    ad::Tensor weight(const std::string& name, Eigen::Index fan_in, Eigen::Index fan_out);
    ad::Tensor filled(const std::string& name, Eigen::Index rows, Eigen::Index cols, double value, bool decay);

    std::vector<Parameter>& items() { return items_; }
    const std::vector<Parameter>& items() const { return items_; }
    std::size_t count() const;

private:
    double uniform();

    std::uint64_t state_;
    std::vector<Parameter> items_;
};

struct GcnLayer {
    ad::Tensor weight, bias;

    GcnLayer(ParameterSet& params, const std::string& prefix, Eigen::Index in, Eigen::Index out);
    ad::Tensor forward(const ad::Tensor& x, const GraphBatch& batch) const;
};

/// Graph attention with relative-position edge features in the score.
struct RelGatLayer {
    int heads = 1;
    Eigen::Index head_width = 0;
    Eigen::Index edge_width = 0;
    bool concat = true; // false averages the heads
    double slope = 0.2;
    ad::Tensor weight;                  // F_in x (heads * head_width), one block per head
    std::vector<ad::Tensor> edge_weight; // per head, 3 x edge_width
    std::vector<ad::Tensor> attention;   // per head, 1 x (2 head_width + edge_width)

    /// `out` is the concatenated width when `concat`, the per-head width otherwise.
    RelGatLayer(ParameterSet& params, const std::string& prefix, Eigen::Index in, Eigen::Index out, int heads,
                bool concat, Eigen::Index edge_width = 0);
    ad::Tensor forward(const ad::Tensor& x, const GraphBatch& batch) const;
    /// Attention weights, one column per head (E x heads).
    ad::Tensor weights(const ad::Tensor& x, const GraphBatch& batch) const;
    Eigen::Index out_width() const { return concat ? heads * head_width : head_width; }

private:
    ad::Tensor transformed(const ad::Tensor& x) const;
    ad::Tensor weights_from(const ad::Tensor& h, const GraphBatch& batch) const;
};

/// elu(gcn(x)) + skip(x); the skip is a learned projection when widths differ.
struct ResBlock {
    GcnLayer gcn;
    ad::Tensor projection; // undefined for the identity skip

    ResBlock(ParameterSet& params, const std::string& prefix, Eigen::Index in, Eigen::Index out);
    ad::Tensor forward(const ad::Tensor& x, const GraphBatch& batch) const;
};

struct Linear {
    ad::Tensor weight, bias;

    Linear(ParameterSet& params, const std::string& prefix, Eigen::Index in, Eigen::Index out);
    ad::Tensor forward(const ad::Tensor& x) const;
};

struct LayerNorm {
    ad::Tensor gamma, beta;

    LayerNorm(ParameterSet& params, const std::string& prefix, Eigen::Index width);
    ad::Tensor forward(const ad::Tensor& x) const;
};

/// Linear layers; hidden layers use ELU and, optionally, layer norm. The last layer is linear.
struct Mlp {
    std::vector<Linear> layers;
    std::vector<LayerNorm> norms;

    Mlp() = default;
    Mlp(ParameterSet& params, const std::string& prefix, Eigen::Index in, const std::vector<int>& widths,
        bool layer_norm = true);
    ad::Tensor forward(const ad::Tensor& x) const;
};

enum class LayerKind { gcn, relgat };

struct ModelConfig {
    std::string arch;                  // fatgcn, deepgcn, resgcn, relgat
    encoding::Task task = encoding::Task::poisson;
    std::size_t input_width = 0;
    LayerKind kind = LayerKind::gcn;
    bool residual = false;
    int heads = 1;
    int edge_width = 0;                // 0: per-head width
    std::vector<int> layer_widths;     // message-passing layers
    std::string pooling = "none";      // "mean" for the IV task
    std::vector<int> mlp_widths;       // ends in 1

    /// Throws InvalidArgument describing the first inconsistency.
    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Node-regression architectures of the Poisson emulator.
ModelConfig poisson_architecture(std::string_view arch, std::size_t input_width);
/// Graph-regression architectures of the IV predictor (fatgcn, relgat).
ModelConfig iv_architecture(std::string_view arch, std::size_t input_width);
/// Scaled-down configuration: `layers` message layers of `width` with the
/// arch's layer kind and a one-layer node head or a width/2 graph head.
ModelConfig scaled_architecture(std::string_view arch, encoding::Task task, std::size_t input_width, int layers,
                                int width, int heads = 2);
/// FatGCN shape with base width `base`: GCN base,base,2b,2b,4b then MLP 4b,2b,2b,b,b,1.
ModelConfig scaled_fatgcn(encoding::Task task, std::size_t input_width, int base);
/// scaled_fatgcn with the base width whose parameter count is closest to `target`.
ModelConfig matched_fatgcn(encoding::Task task, std::size_t input_width, std::size_t target);

class Model {
public:
    explicit Model(ModelConfig config, std::uint64_t seed = 0);
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return config_; }
    /// Model-space output: node_count x 1 (Poisson) or graph_count x 1 (IV).
    ad::Tensor forward(const GraphBatch& batch) const;
    /// Attention weights of message layer `layer` (RelGAT only), E x heads.
    Matrix attention(const GraphBatch& batch, std::size_t layer) const;

    std::vector<Parameter>& parameters() { return params_.items(); }
    const std::vector<Parameter>& parameters() const { return params_.items(); }
    std::size_t parameter_count() const { return params_.count(); }

    std::size_t message_layer_count() const { return message_.size(); }
    std::size_t mlp_layer_count() const { return head_.layers.size(); }
    std::size_t total_layer_count() const { return message_layer_count() + mlp_layer_count(); }
    bool pooled() const { return config_.pooling == "mean"; }

private:
    using MessageLayer = std::variant<GcnLayer, ResBlock, RelGatLayer>;

    ad::Tensor embed(const GraphBatch& batch, std::size_t stop) const;

    ModelConfig config_;
    ParameterSet params_;
    std::vector<MessageLayer> message_;
    std::vector<LayerNorm> norms_;
    Mlp head_;
};

/// Per-node potentials (V) for a graph encoded with the Poisson layout, before normalization.
std::vector<double> predict_potential(const Model& model, const encoding::Normalizer& normalizer,
                                      const encoding::DeviceGraph& graph);
/// log10 drain current for a graph encoded with the IV layout, before normalization.
double predict_current(const Model& model, const encoding::Normalizer& normalizer, const encoding::DeviceGraph& graph);

struct Checkpoint {
    Model model;
    encoding::Normalizer normalizer;
};

/// Text checkpoint: config, layout version, named parameters and normalizer.
std::string write_checkpoint(const Model& model, const encoding::Normalizer& normalizer);
Checkpoint parse_checkpoint(std::string_view text);

} // namespace devgraph::gnn
