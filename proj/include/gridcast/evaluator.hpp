#pragma once

#include <map>
#include <string>
#include <vector>

#include "gridcast/trainer.hpp"

namespace gridcast {

/// Entries with |truth| below this (kW) are excluded from relative metrics;
/// synthetic overnight loads can approach zero and would dominate otherwise.
inline constexpr double kMetricFloor = 1e-6;

double mae(const Eigen::Ref<const MatrixRM>& pred, const Eigen::Ref<const MatrixRM>& truth);
double mse(const Eigen::Ref<const MatrixRM>& pred, const Eigen::Ref<const MatrixRM>& truth);

/// 100 * mean(|p-y| / |y|) over entries with |y| >= floor; throws when every
/// entry is excluded.
double mape(const Eigen::Ref<const MatrixRM>& pred, const Eigen::Ref<const MatrixRM>& truth,
            double floor = kMetricFloor);

/// 100 * fraction of entries (|y| >= floor) with |p-y| <= tol * |y|.
double tolerance_accuracy(const Eigen::Ref<const MatrixRM>& pred, const Eigen::Ref<const MatrixRM>& truth,
                          double tol, double floor = kMetricFloor);

/// Per-column MAE breakdown for diagnosis.
Eigen::VectorXd mae_per_column(const Eigen::Ref<const MatrixRM>& pred,
                               const Eigen::Ref<const MatrixRM>& truth);

// ---------------------------------------------------------------------------
// Cross-model comparison
// ---------------------------------------------------------------------------

/// One trained (model, dataset-size) cell of the comparison grid.
struct CellResult {
    ModelKind kind = ModelKind::fnn;
    int years = 1;
    TrainConfig train_config;
    double mae_kw = 0;
    double mse_kw2 = 0;
    double mape_pct = 0;
    std::map<double, double> tolerance_accuracy_pct;
    double seconds_per_epoch = 0;
    TrainLog log;
};

struct ComparisonReport {
    std::vector<CellResult> cells;  // ordered by (years, kind)
};

/// Validate that all cells of a dataset size were trained under identical
/// settings and assemble the report; rejects mismatched configurations.
ComparisonReport compare(std::vector<CellResult> cells);

/// Evaluate a trained model on a sample range of a dataset.
CellResult evaluate_cell(const ModelParams& params, const NormStats& norm, const LoadDataset& dataset,
                         const SplitRange& range, const TrainConfig& train_config);

struct TraceRow {
    std::string timestamp;
    double p_true = 0, p_pred = 0, q_true = 0, q_pred = 0;
};

/// Contiguous span of predicted-vs-true loads for one bus over the test
/// range; bus b reads columns b (P) and 44+b (Q).
std::vector<TraceRow> per_bus_trace(const ModelParams& params, const NormStats& norm,
                                    const LoadDataset& dataset, const SplitRange& test_range, int bus,
                                    Index span_begin, Index span_len);

void write_report_csv(const std::string& path, const ComparisonReport& report,
                      const std::vector<double>& tolerances, const std::string& embedded_config_json = "");
void write_curves_json(const std::string& path, const ComparisonReport& report,
                       const std::string& embedded_config_json = "");
void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows,
                     const std::string& embedded_config_json = "");

}  // namespace gridcast
