#include "gridcast/evaluator.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "gridcast/format.hpp"

namespace gridcast {

namespace {

void check_pair(const Eigen::Ref<const MatrixRM>& pred, const Eigen::Ref<const MatrixRM>& truth,
                const char* op) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch [" + std::to_string(pred.rows()) +
                                    " x " + std::to_string(pred.cols()) + "] vs [" +
                                    std::to_string(truth.rows()) + " x " + std::to_string(truth.cols()) + "]");
    if (pred.size() == 0) throw std::invalid_argument(std::string(op) + ": empty input");
}

}  // namespace

double mae(const Eigen::Ref<const MatrixRM>& pred, const Eigen::Ref<const MatrixRM>& truth) {
    check_pair(pred, truth, "mae");
    double acc = 0;
    for (Index r = 0; r < pred.rows(); ++r)
        for (Index c = 0; c < pred.cols(); ++c) acc += std::abs(pred(r, c) - truth(r, c));
    return acc / static_cast<double>(pred.size());
}

double mse(const Eigen::Ref<const MatrixRM>& pred, const Eigen::Ref<const MatrixRM>& truth) {
    check_pair(pred, truth, "mse");
    double acc = 0;
    for (Index r = 0; r < pred.rows(); ++r)
        for (Index c = 0; c < pred.cols(); ++c) {
            const double d = pred(r, c) - truth(r, c);
            acc += d * d;
        }
    return acc / static_cast<double>(pred.size());
}

double mape(const Eigen::Ref<const MatrixRM>& pred, const Eigen::Ref<const MatrixRM>& truth, double floor) {
    check_pair(pred, truth, "mape");
    double acc = 0;
    long included = 0;
    for (Index r = 0; r < pred.rows(); ++r)
        for (Index c = 0; c < pred.cols(); ++c) {
            const double y = truth(r, c);
            if (std::abs(y) < floor) continue;
            acc += std::abs(pred(r, c) - y) / std::abs(y);
            ++included;
        }
    if (included == 0) throw std::domain_error("MAPE undefined: all truth entries below floor");
    return 100.0 * acc / static_cast<double>(included);
}

double tolerance_accuracy(const Eigen::Ref<const MatrixRM>& pred, const Eigen::Ref<const MatrixRM>& truth,
                          double tol, double floor) {
    check_pair(pred, truth, "tolerance_accuracy");
    if (tol <= 0) throw std::invalid_argument("tolerance_accuracy: tolerance must be positive");
    long within = 0, included = 0;
    for (Index r = 0; r < pred.rows(); ++r)
        for (Index c = 0; c < pred.cols(); ++c) {
            const double y = truth(r, c);
            if (std::abs(y) < floor) continue;
            ++included;
            if (std::abs(pred(r, c) - y) <= tol * std::abs(y)) ++within;
        }
    if (included == 0)
        throw std::domain_error("tolerance accuracy undefined: all truth entries below floor");
    return 100.0 * static_cast<double>(within) / static_cast<double>(included);
}

Eigen::VectorXd mae_per_column(const Eigen::Ref<const MatrixRM>& pred,
                               const Eigen::Ref<const MatrixRM>& truth) {
    check_pair(pred, truth, "mae_per_column");
    Eigen::VectorXd out(pred.cols());
    for (Index c = 0; c < pred.cols(); ++c) {
        double acc = 0;
        for (Index r = 0; r < pred.rows(); ++r) acc += std::abs(pred(r, c) - truth(r, c));
        out[c] = acc / static_cast<double>(pred.rows());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Comparison grid
// ---------------------------------------------------------------------------

ComparisonReport compare(std::vector<CellResult> cells) {
    if (cells.empty()) throw std::invalid_argument("compare: no cells");
    auto kind_rank = [](ModelKind k) {
        const auto kinds = all_model_kinds();
        return std::distance(kinds.begin(), std::find(kinds.begin(), kinds.end(), k));
    };
    std::sort(cells.begin(), cells.end(), [&](const CellResult& a, const CellResult& b) {
        if (a.years != b.years) return a.years < b.years;
        return kind_rank(a.kind) < kind_rank(b.kind);
    });
    for (std::size_t i = 1; i < cells.size(); ++i) {
        if (cells[i].years != cells[i - 1].years) continue;
        if (!cells[i].train_config.same_run_settings(cells[i - 1].train_config))
            throw std::invalid_argument("compare: cells for the " + std::to_string(cells[i].years) +
                                        "-year dataset were trained under different settings (" +
                                        to_string(cells[i - 1].kind) + " vs " + to_string(cells[i].kind) + ")");
    }
    return ComparisonReport{std::move(cells)};
}

CellResult evaluate_cell(const ModelParams& params, const NormStats& norm, const LoadDataset& dataset,
                         const SplitRange& range, const TrainConfig& train_config) {
    const Index lookback = params.config.lookback;
    MatrixRM normalized = apply_norm(norm, dataset.matrix);
    MatrixRM pred = predict_range(params, norm, normalized, range, lookback);
    MatrixRM truth = target_rows(dataset.matrix, range, lookback);

    CellResult cell;
    cell.kind = params.config.kind;
    cell.years = dataset.years;
    cell.train_config = train_config;
    cell.mae_kw = mae(pred, truth);
    cell.mse_kw2 = mse(pred, truth);
    cell.mape_pct = mape(pred, truth);
    for (double tol : train_config.eval_tolerances)
        cell.tolerance_accuracy_pct[tol] = tolerance_accuracy(pred, truth, tol);
    return cell;
}

std::vector<TraceRow> per_bus_trace(const ModelParams& params, const NormStats& norm,
                                    const LoadDataset& dataset, const SplitRange& test_range, int bus,
                                    Index span_begin, Index span_len) {
    if (bus < 0 || bus >= kFeederNodes)
        throw std::invalid_argument("per_bus_trace: bus " + std::to_string(bus) + " out of range [0, " +
                                    std::to_string(kFeederNodes) + ")");
    if (span_begin < 0 || span_len < 1 || span_begin + span_len > test_range.size)
        throw std::invalid_argument("per_bus_trace: span [" + std::to_string(span_begin) + ", " +
                                    std::to_string(span_begin + span_len) + ") outside the test range of " +
                                    std::to_string(test_range.size) + " samples");

    const Index lookback = params.config.lookback;
    const SplitRange span{test_range.begin + span_begin, span_len};
    MatrixRM normalized = apply_norm(norm, dataset.matrix);
    MatrixRM pred = predict_range(params, norm, normalized, span, lookback);
    MatrixRM truth = target_rows(dataset.matrix, span, lookback);

    std::vector<TraceRow> rows;
    rows.reserve(static_cast<std::size_t>(span_len));
    for (Index k = 0; k < span_len; ++k) {
        const Index dataset_row = span.begin + k + lookback;
        TraceRow row;
        row.timestamp = dataset.timestamps[static_cast<std::size_t>(dataset_row)];
        row.p_true = truth(k, bus);
        row.p_pred = pred(k, bus);
        row.q_true = truth(k, kFeederNodes + bus);
        row.q_pred = pred(k, kFeederNodes + bus);
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

void write_report_csv(const std::string& path, const ComparisonReport& report,
                      const std::vector<double>& tolerances, const std::string& embedded_config_json) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open report for writing: " + path);
    if (!embedded_config_json.empty()) os << "# config: " << embedded_config_json << "\n";
    os << "years,model,mae_kw,mse_kw2,mape_pct";
    for (double tol : tolerances) os << ",tol_acc_" << detail::shortest_double(tol * 100.0);
    os << ",seconds_per_epoch\n";
    for (const CellResult& cell : report.cells) {
        os << cell.years << ',' << to_string(cell.kind) << ',' << detail::shortest_double(cell.mae_kw) << ','
           << detail::shortest_double(cell.mse_kw2) << ',' << detail::shortest_double(cell.mape_pct);
        for (double tol : tolerances) {
            auto it = cell.tolerance_accuracy_pct.find(tol);
            if (it == cell.tolerance_accuracy_pct.end())
                throw std::invalid_argument("report cell missing tolerance " + std::to_string(tol));
            os << ',' << detail::shortest_double(it->second);
        }
        os << ',' << detail::shortest_double(cell.seconds_per_epoch) << '\n';
    }
    if (!os) throw std::runtime_error("failed writing report: " + path);
}

void write_curves_json(const std::string& path, const ComparisonReport& report,
                       const std::string& embedded_config_json) {
    nlohmann::json cells = nlohmann::json::array();
    for (const CellResult& cell : report.cells) {
        nlohmann::json epochs = nlohmann::json::array();
        for (const EpochRecord& r : cell.log) {
            // wall time is a measurement of the run, not a result; it lives in
            // the training log, keeping this file reproducible byte for byte
            epochs.push_back({{"epoch", r.epoch},
                              {"train_mse", r.train_mse},
                              {"val_mae", r.val_mae},
                              {"val_mse", r.val_mse},
                              {"val_mape", r.val_mape},
                              {"tolerance_accuracy", r.tolerance_accuracy}});
        }
        cells.push_back({{"model", to_string(cell.kind)},
                         {"years", cell.years},
                         {"mae_kw", cell.mae_kw},
                         {"mse_kw2", cell.mse_kw2},
                         {"mape_pct", cell.mape_pct},
                         {"epochs", epochs}});
    }
    nlohmann::json j{{"cells", cells},
                     {"config", embedded_config_json.empty() ? nlohmann::json(nullptr)
                                                             : nlohmann::json::parse(embedded_config_json)}};
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open curves file for writing: " + path);
    os << j.dump(2) << "\n";
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows,
                     const std::string& embedded_config_json) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open trace for writing: " + path);
    if (!embedded_config_json.empty()) os << "# config: " << embedded_config_json << "\n";
    os << "timestamp,p_true_kw,p_pred_kw,q_true_kvar,q_pred_kvar\n";
    for (const TraceRow& r : rows)
        os << r.timestamp << ',' << detail::shortest_double(r.p_true) << ','
           << detail::shortest_double(r.p_pred) << ',' << detail::shortest_double(r.q_true) << ','
           << detail::shortest_double(r.q_pred) << '\n';
}

}  // namespace gridcast
