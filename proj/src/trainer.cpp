#include "gridcast/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "gridcast/evaluator.hpp"
#include "gridcast/format.hpp"

namespace gridcast {

namespace {

void expect(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

constexpr double kStdFloor = 1e-8;

}  // namespace

std::string to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::adam: return "adam";
        case OptimizerKind::sgd: return "sgd";
    }
    throw std::logic_error("unreachable optimizer kind");
}

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "adam") return OptimizerKind::adam;
    if (name == "sgd") return OptimizerKind::sgd;
    throw std::invalid_argument("unknown optimizer '" + name + "' (expected adam or sgd)");
}

void TrainConfig::validate() const {
    expect(epochs >= 1, "train config: epochs must be >= 1");
    expect(batch_size >= 1, "train config: batch_size must be >= 1");
    expect(learning_rate >= 0, "train config: learning_rate must be nonnegative");
    double total = 0;
    for (double f : split) {
        expect(f >= 0, "train config: split fractions must be nonnegative");
        total += f;
    }
    expect(std::abs(total - 1.0) <= 1e-9, "train config: split fractions must sum to 1");
    expect(!eval_tolerances.empty(), "train config: eval_tolerances must not be empty");
    for (double t : eval_tolerances) expect(t > 0, "train config: tolerances must be positive");
}

bool TrainConfig::same_run_settings(const TrainConfig& other) const {
    return epochs == other.epochs && batch_size == other.batch_size &&
           learning_rate == other.learning_rate && optimizer == other.optimizer &&
           adam_beta1 == other.adam_beta1 && adam_beta2 == other.adam_beta2 &&
           adam_epsilon == other.adam_epsilon && split == other.split && seed == other.seed &&
           eval_tolerances == other.eval_tolerances;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

NormStats fit_norm(const Eigen::Ref<const MatrixRM>& training_rows) {
    expect(training_rows.rows() > 0, "fit_norm: no training rows");
    const Index rows = training_rows.rows(), cols = training_rows.cols();
    NormStats stats;
    stats.mean.resize(cols);
    stats.std.resize(cols);
    for (Index c = 0; c < cols; ++c) {
        double acc = 0;
        for (Index r = 0; r < rows; ++r) acc += training_rows(r, c);
        const double mean = acc / static_cast<double>(rows);
        double sq = 0;
        for (Index r = 0; r < rows; ++r) {
            const double d = training_rows(r, c) - mean;
            sq += d * d;
        }
        stats.mean[c] = mean;
        stats.std[c] = std::max(std::sqrt(sq / static_cast<double>(rows)), kStdFloor);
    }
    return stats;
}

MatrixRM apply_norm(const NormStats& stats, const Eigen::Ref<const MatrixRM>& rows) {
    if (!stats.fitted()) throw std::logic_error("apply_norm: statistics have not been fitted");
    expect(rows.cols() == stats.mean.size(), "apply_norm: column count mismatch");
    MatrixRM out = rows;
    for (Index c = 0; c < out.cols(); ++c)
        out.col(c) = (out.col(c).array() - stats.mean[c]) / stats.std[c];
    return out;
}

MatrixRM invert_norm(const NormStats& stats, const Eigen::Ref<const MatrixRM>& rows) {
    if (!stats.fitted()) throw std::logic_error("invert_norm: statistics have not been fitted");
    expect(rows.cols() == stats.mean.size(), "invert_norm: column count mismatch");
    MatrixRM out = rows;
    for (Index c = 0; c < out.cols(); ++c)
        out.col(c) = out.col(c).array() * stats.std[c] + stats.mean[c];
    return out;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

SplitRanges chronological_split(Index sample_count, const std::array<double, 3>& fractions) {
    double total = 0;
    for (double f : fractions) {
        expect(f >= 0, "split fractions must be nonnegative");
        total += f;
    }
    expect(std::abs(total - 1.0) <= 1e-9, "split fractions must sum to 1");
    const Index n_train = static_cast<Index>(std::floor(static_cast<double>(sample_count) * fractions[0]));
    const Index n_val = static_cast<Index>(std::floor(static_cast<double>(sample_count) * fractions[1]));
    const Index n_test = sample_count - n_train - n_val;
    expect(n_train > 0 && n_val > 0 && n_test > 0,
           "split leaves an empty partition (" + std::to_string(n_train) + "/" + std::to_string(n_val) +
               "/" + std::to_string(n_test) + ")");
    return {{0, n_train}, {n_train, n_val}, {n_train + n_val, n_test}};
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

Optimizer::Optimizer(std::vector<Tensor*> params, const TrainConfig& config)
    : params_(std::move(params)), config_(config) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Tensor* p : params_) {
        m_.push_back(Tensor::Array::Zero(p->numel()));
        v_.push_back(Tensor::Array::Zero(p->numel()));
    }
}

void Optimizer::step() {
    ++step_count_;
    const double lr = config_.learning_rate;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = *params_[i];
        if (p.grad().size() != p.numel()) continue;  // never touched by backward
        const Tensor::Array& g = p.grad();
        if (config_.optimizer == OptimizerKind::sgd) {
            p.value_mut() -= lr * g;
            continue;
        }
        const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
        m_[i] = b1 * m_[i] + (1.0 - b1) * g;
        v_[i] = b2 * v_[i] + (1.0 - b2) * g.square();
        const double bias1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
        const double bias2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
        p.value_mut() -= lr * (m_[i] / bias1) / ((v_[i] / bias2).sqrt() + config_.adam_epsilon);
    }
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

namespace {

Tensor make_batch_windows(const MatrixRM& data, const Index* samples, Index count, Index lookback) {
    const Index cols = data.cols();
    Tensor::Array a(count * lookback * cols);
    for (Index b = 0; b < count; ++b)
        std::memcpy(a.data() + b * lookback * cols, data.row(samples[b]).data(),
                    sizeof(double) * static_cast<std::size_t>(lookback * cols));
    return Tensor::from_array({count, lookback, cols}, std::move(a));
}

Tensor make_batch_targets(const MatrixRM& data, const Index* samples, Index count, Index lookback) {
    const Index cols = data.cols();
    Tensor::Array a(count * cols);
    for (Index b = 0; b < count; ++b)
        std::memcpy(a.data() + b * cols, data.row(samples[b] + lookback).data(),
                    sizeof(double) * static_cast<std::size_t>(cols));
    return Tensor::from_array({count, cols}, std::move(a));
}

}  // namespace

double train_epoch(ModelParams& params, const MatrixRM& normalized, const SplitRange& train_range,
                   Index lookback, const TrainConfig& config, int epoch, Optimizer& optimizer) {
    std::vector<Index> order(static_cast<std::size_t>(train_range.size));
    std::iota(order.begin(), order.end(), train_range.begin);
    std::mt19937_64 rng(mix_seed(config.seed, 0xE70C000000ULL + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    double sse = 0;
    Index entries = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(config.batch_size)) {
        const Index count = std::min<Index>(config.batch_size, static_cast<Index>(order.size() - at));
        Tensor windows = make_batch_windows(normalized, order.data() + at, count, lookback);
        Tensor targets = make_batch_targets(normalized, order.data() + at, count, lookback);

        params.zero_grads();
        Tensor loss = mse_loss(unroll_and_predict(params, windows), targets);
        const double loss_value = loss(0);
        if (!std::isfinite(loss_value))
            throw std::runtime_error("non-finite training loss in epoch " + std::to_string(epoch) +
                                     "; the learning rate is likely too high");
        backward(loss);
        optimizer.step();

        sse += loss_value * static_cast<double>(targets.numel());
        entries += targets.numel();
    }
    return sse / static_cast<double>(entries);
}

MatrixRM predict_range(const ModelParams& params, const NormStats& norm, const MatrixRM& normalized,
                       const SplitRange& range, Index lookback, Index batch_size) {
    expect(range.size > 0 && range.begin >= 0 && range.end() + lookback <= normalized.rows(),
           "predict_range: sample range out of bounds");
    ModelParams frozen = params.detached();
    const Index out_dim = params.config.head_dim();
    expect(out_dim == normalized.cols(), "predict_range: only single-step heads map back to feature columns");

    MatrixRM pred(range.size, out_dim);
    std::vector<Index> samples(static_cast<std::size_t>(range.size));
    std::iota(samples.begin(), samples.end(), range.begin);
    for (Index at = 0; at < range.size; at += batch_size) {
        const Index count = std::min<Index>(batch_size, range.size - at);
        Tensor windows = make_batch_windows(normalized, samples.data() + at, count, lookback);
        Tensor out = unroll_and_predict(frozen, windows);
        pred.middleRows(at, count) = Eigen::Map<const MatrixRM>(out.value().data(), count, out_dim);
    }
    return invert_norm(norm, pred);
}

MatrixRM target_rows(const MatrixRM& raw, const SplitRange& range, Index lookback) {
    expect(range.size > 0 && range.begin >= 0 && range.end() + lookback <= raw.rows(),
           "target_rows: sample range out of bounds");
    return raw.middleRows(range.begin + lookback, range.size);
}

// ---------------------------------------------------------------------------
// Full training run
// ---------------------------------------------------------------------------

FitResult fit(const ModelConfig& model_config, const LoadDataset& dataset,
              const DistributionNetwork* network, const TrainConfig& config) {
    config.validate();
    model_config.validate();
    expect(dataset.matrix.cols() == model_config.input_dim,
           "fit: dataset has " + std::to_string(dataset.matrix.cols()) + " feature columns, model expects " +
               std::to_string(model_config.input_dim));

    const Index lookback = model_config.lookback;
    WindowedSamples samples = window(dataset, lookback);
    SplitRanges split = chronological_split(samples.count(), config.split);

    // rows covered by training inputs and targets only
    NormStats norm = fit_norm(dataset.matrix.topRows(split.train.size + lookback));
    MatrixRM normalized = apply_norm(norm, dataset.matrix);

    MatrixRM a_hat;
    const MatrixRM* a_hat_ptr = nullptr;
    if (model_config.kind == ModelKind::a3tgcn && network) {
        a_hat = normalize_adjacency(network->edges, model_config.num_nodes);
        a_hat_ptr = &a_hat;
    }
    ModelParams params = init_params(model_config, config.seed, a_hat_ptr);
    Optimizer optimizer(params.trainable(), config);

    FitResult result;
    result.train_config = config;
    result.split = split;
    double best_mae = std::numeric_limits<double>::infinity();

    MatrixRM val_truth = target_rows(dataset.matrix, split.val, lookback);
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        const double train_mse =
            train_epoch(params, normalized, split.train, lookback, config, epoch, optimizer);

        MatrixRM val_pred = predict_range(params, norm, normalized, split.val, lookback);
        EpochRecord record;
        record.epoch = epoch;
        record.train_mse = train_mse;
        record.val_mae = mae(val_pred, val_truth);
        record.val_mse = mse(val_pred, val_truth);
        record.val_mape = mape(val_pred, val_truth);
        for (double tol : config.eval_tolerances)
            record.tolerance_accuracy.push_back(tolerance_accuracy(val_pred, val_truth, tol));
        record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.log.push_back(record);

        if (record.val_mae < best_mae) {
            best_mae = record.val_mae;
            result.best_params = params.clone();
            result.best_epoch = epoch;
        }
    }
    result.final_params = std::move(params);
    result.norm = std::move(norm);
    return result;
}

// ---------------------------------------------------------------------------
// Log file
// ---------------------------------------------------------------------------

void write_trainlog_csv(const std::string& path, const TrainLog& log, const std::vector<double>& tolerances,
                        const std::string& embedded_config_json) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open training log for writing: " + path);
    if (!embedded_config_json.empty()) os << "# config: " << embedded_config_json << "\n";
    os << "epoch,train_mse,val_mae,val_mse,val_mape";
    for (double tol : tolerances) os << ",tol_acc_" << detail::shortest_double(tol * 100.0);
    os << ",wall_seconds\n";
    for (const EpochRecord& r : log) {
        os << r.epoch << ',' << detail::shortest_double(r.train_mse) << ','
           << detail::shortest_double(r.val_mae) << ',' << detail::shortest_double(r.val_mse) << ','
           << detail::shortest_double(r.val_mape);
        for (double a : r.tolerance_accuracy) os << ',' << detail::shortest_double(a);
        os << ',' << detail::shortest_double(r.wall_seconds) << '\n';
    }
    if (!os) throw std::runtime_error("failed writing training log: " + path);
}

}  // namespace gridcast
