#pragma once

#include "devgraph/matrix.hpp"
#include "devgraph/physics.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace devgraph::encoding {

inline constexpr int kLayoutVersion = 1;
/// Reference density for the log compression of doping, 1/m^3.
inline constexpr double kDopingReference = 1e18;
/// Reference charge density for the log compression of rho, C/m^3.
inline constexpr double kChargeReference = physics::kElementaryCharge * kDopingReference;

enum class Task { none, poisson, iv };

std::string_view to_string(Task task);
Task parse_task(std::string_view name);

/// Self-consistent columns appended for a task: 0, 1 (rho) or 2 (phi, rho).
std::size_t self_consistent_width(Task task);

struct FeatureBlock {
    std::string name;
    std::size_t offset = 0;
    std::size_t width = 0;
    bool one_hot = false;

    friend bool operator==(const FeatureBlock&, const FeatureBlock&) = default;
};

/// Ordered, contiguous node-feature blocks.
struct NodeFeatureLayout {
    int version = kLayoutVersion;
    std::vector<FeatureBlock> blocks;

    static NodeFeatureLayout v1(Task task = Task::none);

    std::size_t width() const;
    const FeatureBlock& block(std::string_view name) const;
    /// One flag per column, true for one-hot columns.
    std::vector<bool> one_hot_mask() const;

    friend bool operator==(const NodeFeatureLayout&, const NodeFeatureLayout&) = default;
};

/// Dense node features, directed edges (both directions per mesh edge plus
/// one self-loop per node) and relative-position edge features.
struct DeviceGraph {
    std::string id;
    Task task = Task::none;
    int layout_version = kLayoutVersion;
    Matrix x;                      // N x F
    std::vector<int> src;          // edge sources
    std::vector<int> dst;          // edge destinations
    Matrix edge_attr;              // E x 3: dx, dy, distance (dst minus src)
    std::vector<double> node_label; // Poisson task: potential per node (V)
    double graph_label = 0.0;       // IV task: log10 drain current

    std::size_t node_count() const { return static_cast<std::size_t>(x.rows()); }
    std::size_t edge_count() const { return src.size(); }

    friend bool operator==(const DeviceGraph&, const DeviceGraph&) = default;
};

/// Edge feature of the directed edge u -> v.
std::array<double, 3> relative_position(const Point2D& u, const Point2D& v);

/// sign(v) log10(1 + |v| / reference).
double log_compress(double value, double reference);

/// Encodes a device at a bias point with the base (task-free) layout.
DeviceGraph encode_device(const physics::Device& device, const physics::BiasPoint& bias);

/// Appends the task's self-consistent columns and sets the label.
/// Throws InvalidArgument on length mismatch or a non-positive drain current (IV task).
DeviceGraph attach_self_consistent(DeviceGraph graph, const physics::SolutionFields& fields, Task task);

/// Per-column affine transform fitted on training graphs. One-hot columns and
/// degenerate columns keep unit scale; labels share one global affine.
struct Normalizer {
    int layout_version = kLayoutVersion;
    Task task = Task::none;
    std::vector<double> shift;
    std::vector<double> scale;
    double edge_scale = 1.0; // common scale of all three edge-feature columns
    double label_shift = 0.0;
    double label_scale = 1.0;

    /// Transforms features, edge features and labels into model space.
    DeviceGraph apply(const DeviceGraph& graph) const;
    double label_to_model(double label) const { return (label - label_shift) / label_scale; }
    double label_from_model(double y) const { return y * label_scale + label_shift; }

    friend bool operator==(const Normalizer&, const Normalizer&) = default;
};

Normalizer fit_normalizer(const std::vector<const DeviceGraph*>& training, const NodeFeatureLayout& layout);
Normalizer fit_normalizer(const std::vector<DeviceGraph>& training, const NodeFeatureLayout& layout);

/// Text container bundling graphs, the layout, the split and the normalizer.
struct GraphBundle {
    NodeFeatureLayout layout;
    Task task = Task::none;
    std::vector<DeviceGraph> graphs;
    std::vector<std::size_t> train, validation, test;
    Normalizer normalizer;

    friend bool operator==(const GraphBundle&, const GraphBundle&) = default;
};

std::string write_bundle(const GraphBundle& bundle);
GraphBundle parse_bundle(std::string_view text);

std::string write_normalizer(const Normalizer& normalizer);
/// Parses a standalone normalizer block as written by write_normalizer.
Normalizer parse_normalizer(std::string_view text);

} // namespace devgraph::encoding
