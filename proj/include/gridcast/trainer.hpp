#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gridcast/gridgen.hpp"
#include "gridcast/models.hpp"

namespace gridcast {

enum class OptimizerKind { adam, sgd };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& name);

struct TrainConfig {
    int epochs = 100;
    int batch_size = 64;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::array<double, 3> split{0.8, 0.1, 0.1};  // train/val/test, chronological
    std::uint64_t seed = 0;
    std::vector<double> eval_tolerances{0.10, 0.15, 0.20};

    void validate() const;
    bool same_run_settings(const TrainConfig& other) const;
};

/// Per-column z-score statistics, fitted on training rows only.
struct NormStats {
    Eigen::VectorXd mean;
    Eigen::VectorXd std;  // floored at 1e-8

    bool fitted() const { return mean.size() > 0; }
};

NormStats fit_norm(const Eigen::Ref<const MatrixRM>& training_rows);
MatrixRM apply_norm(const NormStats& stats, const Eigen::Ref<const MatrixRM>& rows);
MatrixRM invert_norm(const NormStats& stats, const Eigen::Ref<const MatrixRM>& rows);

struct SplitRange {
    Index begin = 0;
    Index size = 0;
    Index end() const { return begin + size; }
};

struct SplitRanges {
    SplitRange train, val, test;
};

/// Contiguous, ordered, non-overlapping sample ranges; throws when any
/// partition would be empty.
SplitRanges chronological_split(Index sample_count, const std::array<double, 3>& fractions);

struct EpochRecord {
    int epoch = 0;
    double train_mse = 0;  // normalized space
    double val_mae = 0;    // physical units from here on
    double val_mse = 0;
    double val_mape = 0;
    std::vector<double> tolerance_accuracy;  // percent, aligned with eval_tolerances
    double wall_seconds = 0;
};

using TrainLog = std::vector<EpochRecord>;

/// Mini-batch optimizer over a fixed parameter list. step() consumes the
/// accumulated gradients.
class Optimizer {
public:
    Optimizer(std::vector<Tensor*> params, const TrainConfig& config);
    void step();

private:
    std::vector<Tensor*> params_;
    TrainConfig config_;
    std::vector<Tensor::Array> m_, v_;
    long step_count_ = 0;
};

/// One pass over the shuffled training range; returns the epoch's
/// normalized-space MSE. Throws on a non-finite loss.
double train_epoch(ModelParams& params, const MatrixRM& normalized, const SplitRange& train_range,
                   Index lookback, const TrainConfig& config, int epoch, Optimizer& optimizer);

struct FitResult {
    ModelParams best_params;   // lowest validation MAE
    ModelParams final_params;  // state after the last epoch
    int best_epoch = 0;
    TrainLog log;
    NormStats norm;
    TrainConfig train_config;
    SplitRanges split;
};

/// Full training run: window, split, normalize, train `epochs` epochs with
/// per-epoch validation metrics, track the best checkpoint by validation MAE.
FitResult fit(const ModelConfig& model_config, const LoadDataset& dataset,
              const DistributionNetwork* network, const TrainConfig& config);

/// Frozen batched forward over a contiguous sample range; predictions are
/// denormalized back to physical units, one row per sample.
MatrixRM predict_range(const ModelParams& params, const NormStats& norm, const MatrixRM& normalized,
                       const SplitRange& range, Index lookback, Index batch_size = 256);

/// Ground-truth rows aligned with predict_range output.
MatrixRM target_rows(const MatrixRM& raw, const SplitRange& range, Index lookback);

/// CSV log: one row per epoch, deterministic metric columns plus wall_seconds.
void write_trainlog_csv(const std::string& path, const TrainLog& log, const std::vector<double>& tolerances,
                        const std::string& embedded_config_json = "");

}  // namespace gridcast
