#pragma once

#include "devgraph/encoding.hpp"
#include "devgraph/gnn.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace devgraph::train {

struct Breakpoint {
    double epoch = 0.0;
    double lr = 0.0;

    friend bool operator==(const Breakpoint&, const Breakpoint&) = default;
};

/// Piecewise-linear learning-rate schedule over epochs.
using Schedule = std::vector<Breakpoint>;

/// (0, lr), (E/2, lr/2), (E, lr/100); with lr = 1e-3 this is 1e-3, 5e-4, 1e-5.
Schedule default_schedule(int epochs, double lr = 1e-3);
/// Linear interpolation, clamped at both ends. Throws on unordered breakpoints.
double lr_at(double epoch, const Schedule& schedule);

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;
    std::vector<Matrix> m, v;
};

/// One bias-corrected Adam update from the parameters' accumulated gradients.
/// Decoupled decay w -= lr * weight_decay * w is applied first, only to
/// parameters flagged for decay.
void adam_step(std::vector<gnn::Parameter>& params, AdamState& state, double lr, double weight_decay);

struct Split {
    std::vector<std::size_t> train, validation, test;
};

/// Seeded shuffle, floor allocation of validation and test, remainder to train.
Split split_dataset(std::size_t n, std::array<double, 3> fractions = {0.7, 0.2, 0.1}, std::uint64_t seed = 0);

/// log10(I); throws InvalidArgument for I <= 0.
double transform_current_label(double current);
double invert_current_label(double label);

double mse(const std::vector<double>& y, const std::vector<double>& predicted);
/// 1 - SS_res / SS_tot; throws InvalidArgument for constant y.
double r_square(const std::vector<double>& y, const std::vector<double>& predicted);
/// 100 (1 - model / baseline).
double improvement_pct(double baseline_mse, double model_mse);

struct TrainConfig {
    double learning_rate = 1e-3;
    Schedule schedule;          // empty: default_schedule(epochs, learning_rate)
    double weight_decay = 0.0;  // 1e-4 for the IV task
    int epochs = 100;
    int patience = 50;
    std::size_t batch_size = 32; // graphs per step; 0 = whole training set
    std::uint64_t seed = 0;
    std::array<double, 3> fractions = {0.7, 0.2, 0.1};

    static TrainConfig for_task(encoding::Task task);
    void validate() const;
    Schedule effective_schedule() const;
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_mse = 0.0; // model space
    double val_mse = 0.0;   // model space, NaN without a validation set
};

/// Patience on validation loss with a snapshot of the best parameters.
class EarlyStopping {
public:
    explicit EarlyStopping(int patience);

    /// Records an epoch's validation loss; returns true when it improved.
    bool observe(int epoch, double val_loss, const std::vector<gnn::Parameter>& params);
    bool should_stop() const { return since_best_ >= patience_; }
    int best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_loss_; }
    /// Writes the best snapshot back into the parameters.
    void restore(std::vector<gnn::Parameter>& params) const;

private:
    int patience_;
    int best_epoch_ = -1;
    int since_best_ = 0;
    double best_loss_;
    std::vector<Matrix> snapshot_;
};

struct TrainRun {
    std::vector<EpochRecord> history;
    int best_epoch = -1;
    bool stopped_early = false;
};

/// Trains on normalized graphs (see Normalizer::apply). Throws DivergenceError
/// on a non-finite loss.
TrainRun train(gnn::Model& model, const std::vector<const encoding::DeviceGraph*>& training,
               const std::vector<const encoding::DeviceGraph*>& validation, const TrainConfig& config,
               const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Labels and predictions in physical units (V, or log10 A for the IV task).
struct Predictions {
    std::vector<double> label, predicted;
};

Predictions predict_set(const gnn::Model& model, const std::vector<const encoding::DeviceGraph*>& graphs,
                        const encoding::Normalizer& normalizer, std::size_t batch_size = 32);

struct SplitMetrics {
    std::size_t count = 0;
    double mse = 0.0;
    double r2 = 0.0;
    double linear_r2 = 0.0; // IV task: R^2 of 10^label; NaN for the Poisson task
};

SplitMetrics evaluate(const gnn::Model& model, const std::vector<const encoding::DeviceGraph*>& graphs,
                      const encoding::Normalizer& normalizer);

struct BundleRun {
    gnn::Model model;
    TrainRun run;
    SplitMetrics train, validation, test; // empty splits report count 0
};

/// Normalizes the bundle with its stored normalizer, trains on its train split
/// with early stopping on the validation split and evaluates every split.
BundleRun train_bundle(const encoding::GraphBundle& bundle, const gnn::ModelConfig& model_config,
                       const TrainConfig& config, std::uint64_t model_seed,
                       const std::function<void(const EpochRecord&)>& on_epoch = {});

std::string history_csv(const std::vector<EpochRecord>& history);

} // namespace devgraph::train
