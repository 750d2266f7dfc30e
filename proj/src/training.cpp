#include "devgraph/training.hpp"

#include "devgraph/error.hpp"
#include "devgraph/text.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace devgraph::train {

using encoding::DeviceGraph;
using encoding::Task;

Schedule default_schedule(int epochs, double lr) {
    const double e = std::max(epochs, 1);
    return {{0.0, lr}, {e / 2.0, lr / 2.0}, {e, lr / 100.0}};
}

double lr_at(double epoch, const Schedule& schedule) {
    if (schedule.empty()) throw InvalidArgument("lr_at: empty schedule");
    for (std::size_t k = 1; k < schedule.size(); ++k)
        if (!(schedule[k].epoch > schedule[k - 1].epoch))
            throw InvalidArgument("lr_at: breakpoints must have strictly increasing epochs");
    if (epoch <= schedule.front().epoch) return schedule.front().lr;
    for (std::size_t k = 1; k < schedule.size(); ++k) {
        const auto &a = schedule[k - 1], &b = schedule[k];
        if (epoch <= b.epoch) return a.lr + (b.lr - a.lr) * (epoch - a.epoch) / (b.epoch - a.epoch);
    }
    return schedule.back().lr;
}

void adam_step(std::vector<gnn::Parameter>& params, AdamState& state, double lr, double weight_decay) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
            state.v.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
        }
    }
    if (state.m.size() != params.size()) throw InvalidArgument("adam_step: state was built for a different parameter set");
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        auto& m = state.m[k];
        auto& v = state.v[k];
        if (m.rows() != p.tensor.rows() || m.cols() != p.tensor.cols())
            throw InvalidArgument("adam_step: moment shape does not match parameter '" + p.name + "'");
        const Matrix& g = p.tensor.grad();
        auto& w = p.tensor.mutable_value();
        if (p.decay && weight_decay > 0.0) w *= 1.0 - lr * weight_decay;
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v.array() = state.beta2 * v.array() + (1.0 - state.beta2) * g.array().square();
        w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
    }
}

Split split_dataset(std::size_t n, std::array<double, 3> fractions, std::uint64_t seed) {
    for (double f : fractions)
        if (f < 0.0) throw InvalidArgument("split_dataset: fractions must be non-negative");
    if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
        throw InvalidArgument("split_dataset: fractions must sum to 1");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    // Fisher-Yates with an explicit draw so the order does not depend on the standard library
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    // n * f evaluated in long double avoids 0.7 * 50000 landing just below an integer
    auto count = [n](double f) {
        return static_cast<std::size_t>(std::floor(static_cast<long double>(n) * static_cast<long double>(f) + 1e-9L));
    };
    const std::size_t n_val = count(fractions[1]), n_test = count(fractions[2]);
    Split s;
    s.train.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val + n_test));
    s.validation.assign(order.end() - static_cast<std::ptrdiff_t>(n_val + n_test),
                        order.end() - static_cast<std::ptrdiff_t>(n_test));
    s.test.assign(order.end() - static_cast<std::ptrdiff_t>(n_test), order.end());
    return s;
}

double transform_current_label(double current) {
    if (!(current > 0.0)) throw InvalidArgument("current label must be positive, got " + text::format_double(current));
    return std::log10(current);
}

double invert_current_label(double label) { return std::pow(10.0, label); }

namespace {

double pairwise_sum(const double* v, std::size_t n) {
    if (n <= 16) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += v[i];
        return s;
    }
    return pairwise_sum(v, n / 2) + pairwise_sum(v + n / 2, n - n / 2);
}

double pairwise_sum(const std::vector<double>& v) { return pairwise_sum(v.data(), v.size()); }

void check_lengths(const std::vector<double>& y, const std::vector<double>& p, const char* what) {
    if (y.size() != p.size())
        throw InvalidArgument(std::string(what) + ": lengths differ (" + std::to_string(y.size()) + " vs " +
                              std::to_string(p.size()) + ")");
    if (y.size() < 2) throw InvalidArgument(std::string(what) + ": at least two values are required");
}

double squared_residuals(const std::vector<double>& y, const std::vector<double>& p) {
    std::vector<double> sq(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) sq[i] = (y[i] - p[i]) * (y[i] - p[i]);
    return pairwise_sum(sq);
}

} // namespace

double mse(const std::vector<double>& y, const std::vector<double>& predicted) {
    check_lengths(y, predicted, "mse");
    return squared_residuals(y, predicted) / static_cast<double>(y.size());
}

double r_square(const std::vector<double>& y, const std::vector<double>& predicted) {
    check_lengths(y, predicted, "r_square");
    const double mean = pairwise_sum(y) / static_cast<double>(y.size());
    std::vector<double> dev(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) dev[i] = (y[i] - mean) * (y[i] - mean);
    const double ss_tot = pairwise_sum(dev);
    if (ss_tot == 0.0) throw InvalidArgument("r_square: labels are constant, R^2 is undefined");
    return 1.0 - squared_residuals(y, predicted) / ss_tot;
}

double improvement_pct(double baseline_mse, double model_mse) {
    if (!(baseline_mse > 0.0)) throw InvalidArgument("improvement_pct: baseline MSE must be positive");
    return 100.0 * (1.0 - model_mse / baseline_mse);
}

TrainConfig TrainConfig::for_task(Task task) {
    TrainConfig c;
    if (task == Task::iv) c.weight_decay = 1e-4;
    return c;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw InvalidArgument("train config: learning_rate must be positive");
    if (weight_decay < 0.0) throw InvalidArgument("train config: weight_decay must be non-negative");
    if (epochs < 1) throw InvalidArgument("train config: epochs must be at least 1");
    if (patience < 1) throw InvalidArgument("train config: patience must be at least 1");
    for (double f : fractions)
        if (f < 0.0) throw InvalidArgument("train config: split fractions must be non-negative");
    if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
        throw InvalidArgument("train config: split fractions must sum to 1");
    for (const auto& b : schedule)
        if (!(b.lr > 0.0)) throw InvalidArgument("train config: schedule learning rates must be positive");
    lr_at(0.0, effective_schedule());
}

Schedule TrainConfig::effective_schedule() const {
    return schedule.empty() ? default_schedule(epochs, learning_rate) : schedule;
}

EarlyStopping::EarlyStopping(int patience) : patience_(patience), best_loss_(std::numeric_limits<double>::infinity()) {
    if (patience < 1) throw InvalidArgument("early stopping: patience must be at least 1");
}

bool EarlyStopping::observe(int epoch, double val_loss, const std::vector<gnn::Parameter>& params) {
    if (val_loss < best_loss_) {
        best_loss_ = val_loss;
        best_epoch_ = epoch;
        since_best_ = 0;
        snapshot_.clear();
        for (const auto& p : params) snapshot_.push_back(p.tensor.value());
        return true;
    }
    ++since_best_;
    return false;
}

void EarlyStopping::restore(std::vector<gnn::Parameter>& params) const {
    if (snapshot_.empty()) return;
    if (snapshot_.size() != params.size()) throw InvalidArgument("early stopping: snapshot does not match parameters");
    for (std::size_t k = 0; k < params.size(); ++k) params[k].tensor.mutable_value() = snapshot_[k];
}

namespace {

Matrix targets(const std::vector<const DeviceGraph*>& graphs, bool pooled) {
    Eigen::Index rows = 0;
    for (const auto* g : graphs) rows += pooled ? 1 : static_cast<Eigen::Index>(g->node_count());
    Matrix t(rows, 1);
    Eigen::Index r = 0;
    for (const auto* g : graphs) {
        if (pooled) {
            t(r++, 0) = g->graph_label;
            continue;
        }
        if (g->node_label.size() != g->node_count())
            throw InvalidArgument("graph '" + g->id + "' has no per-node labels");
        for (double y : g->node_label) t(r++, 0) = y;
    }
    return t;
}

struct Batch {
    gnn::GraphBatch graph;
    Matrix target;
};

std::vector<Batch> make_batches(const std::vector<const DeviceGraph*>& graphs, const std::vector<std::size_t>& order,
                                std::size_t size, bool pooled) {
    std::vector<Batch> out;
    if (size == 0) size = order.size();
    for (std::size_t start = 0; start < order.size(); start += size) {
        std::vector<const DeviceGraph*> members;
        for (std::size_t k = start; k < std::min(order.size(), start + size); ++k) members.push_back(graphs[order[k]]);
        out.push_back({gnn::make_batch(members), targets(members, pooled)});
    }
    return out;
}

double batch_loss_sum(const gnn::Model& model, const std::vector<Batch>& batches, double& count) {
    ad::NoGradGuard guard;
    double total = 0.0;
    count = 0.0;
    for (const auto& b : batches) {
        const Matrix diff = model.forward(b.graph).value() - b.target;
        total += diff.squaredNorm();
        count += static_cast<double>(diff.rows());
    }
    return total;
}

} // namespace

TrainRun train(gnn::Model& model, const std::vector<const DeviceGraph*>& training,
               const std::vector<const DeviceGraph*>& validation, const TrainConfig& config,
               const std::function<void(const EpochRecord&)>& on_epoch) {
    config.validate();
    if (training.empty()) throw InvalidArgument("train: empty training set");
    const bool pooled = model.pooled();
    const auto schedule = config.effective_schedule();
    std::vector<std::size_t> val_order(validation.size());
    std::iota(val_order.begin(), val_order.end(), std::size_t{0});
    const auto val_batches = make_batches(validation, val_order, config.batch_size, pooled);

    std::vector<std::size_t> order(training.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(config.seed ^ 0x5eed5eedULL);
    AdamState adam;
    EarlyStopping stopper(config.patience);
    auto& params = model.parameters();
    TrainRun run;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_at(epoch, schedule);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
        double loss_sum = 0.0, loss_count = 0.0;
        for (const auto& b : make_batches(training, order, config.batch_size, pooled)) {
            for (auto& p : params) p.tensor.zero_grad();
            auto loss = ad::mse_loss(model.forward(b.graph), ad::constant(b.target));
            const double value = loss.item();
            if (!std::isfinite(value)) throw DivergenceError(epoch, lr);
            ad::backward(loss);
            adam_step(params, adam, lr, config.weight_decay);
            loss_sum += value * static_cast<double>(b.target.rows());
            loss_count += static_cast<double>(b.target.rows());
        }
        EpochRecord rec{epoch, lr, loss_sum / loss_count, std::numeric_limits<double>::quiet_NaN()};
        if (!val_batches.empty()) {
            double n = 0.0;
            rec.val_mse = batch_loss_sum(model, val_batches, n) / n;
            if (!std::isfinite(rec.val_mse)) throw DivergenceError(epoch, lr);
            stopper.observe(epoch, rec.val_mse, params);
        }
        run.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (!val_batches.empty() && stopper.should_stop()) {
            run.stopped_early = true;
            break;
        }
    }
    if (!val_batches.empty()) {
        stopper.restore(params);
        run.best_epoch = stopper.best_epoch();
    } else {
        run.best_epoch = static_cast<int>(run.history.size()) - 1;
    }
    return run;
}

Predictions predict_set(const gnn::Model& model, const std::vector<const DeviceGraph*>& graphs,
                        const encoding::Normalizer& normalizer, std::size_t batch_size) {
    Predictions out;
    std::vector<std::size_t> order(graphs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    ad::NoGradGuard guard;
    for (const auto& b : make_batches(graphs, order, batch_size, model.pooled())) {
        const Matrix y = model.forward(b.graph).value();
        for (Eigen::Index i = 0; i < y.rows(); ++i) {
            out.label.push_back(normalizer.label_from_model(b.target(i, 0)));
            out.predicted.push_back(normalizer.label_from_model(y(i, 0)));
        }
    }
    return out;
}

SplitMetrics evaluate(const gnn::Model& model, const std::vector<const DeviceGraph*>& graphs,
                      const encoding::Normalizer& normalizer) {
    const auto p = predict_set(model, graphs, normalizer);
    SplitMetrics m;
    m.count = graphs.size();
    m.mse = mse(p.label, p.predicted);
    m.r2 = r_square(p.label, p.predicted);
    m.linear_r2 = std::numeric_limits<double>::quiet_NaN();
    if (model.pooled()) {
        std::vector<double> a, b;
        for (double y : p.label) a.push_back(invert_current_label(y));
        for (double y : p.predicted) b.push_back(invert_current_label(y));
        m.linear_r2 = r_square(a, b);
    }
    return m;
}

BundleRun train_bundle(const encoding::GraphBundle& bundle, const gnn::ModelConfig& model_config,
                       const TrainConfig& config, std::uint64_t model_seed,
                       const std::function<void(const EpochRecord&)>& on_epoch) {
    if (bundle.task != model_config.task)
        throw InvalidArgument("bundle holds " + std::string(encoding::to_string(bundle.task)) + " graphs, model is for " +
                              std::string(encoding::to_string(model_config.task)));
    std::vector<DeviceGraph> scaled;
    scaled.reserve(bundle.graphs.size());
    for (const auto& g : bundle.graphs) scaled.push_back(bundle.normalizer.apply(g));
    auto pick = [&](const std::vector<std::size_t>& idx) {
        std::vector<const DeviceGraph*> out;
        for (auto i : idx) {
            if (i >= scaled.size()) throw InvalidArgument("bundle split index " + std::to_string(i) + " out of range");
            out.push_back(&scaled[i]);
        }
        return out;
    };
    const auto tr = pick(bundle.train), va = pick(bundle.validation), te = pick(bundle.test);
    BundleRun out{gnn::Model(model_config, model_seed), {}, {}, {}, {}};
    out.run = train(out.model, tr, va, config, on_epoch);
    auto metrics = [&](const std::vector<const DeviceGraph*>& set) {
        return set.size() < 2 ? SplitMetrics{set.size(), 0.0, 0.0, 0.0} : evaluate(out.model, set, bundle.normalizer);
    };
    out.train = metrics(tr);
    out.validation = metrics(va);
    out.test = metrics(te);
    return out;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
    std::string out = "epoch,lr,train_mse,val_mse\n";
    for (const auto& r : history)
        out += std::to_string(r.epoch) + "," + text::format_double(r.lr) + "," + text::format_double(r.train_mse) + "," +
               (std::isnan(r.val_mse) ? std::string() : text::format_double(r.val_mse)) + "\n";
    return out;
}

} // namespace devgraph::train
