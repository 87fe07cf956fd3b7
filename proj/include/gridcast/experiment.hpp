#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gridcast/evaluator.hpp"

namespace gridcast {

/// Fully resolved experiment description. Every run artifact embeds the
/// canonical JSON form of this structure so it can be reproduced from the
/// artifact alone.
struct ExperimentConfig {
    // run
    std::string name = "benchmark";
    std::string out_dir = "out";
    // dataset
    std::vector<int> years{1, 5};
    std::uint64_t dataset_seed = 7;
    std::string dataset_path;  // optional explicit CSV; generated when absent
    // model
    std::vector<ModelKind> kinds = all_model_kinds();
    int hidden_dim = 64;
    int gcn_dim = 8;
    int attention_dim = 32;
    int lookback = 24;
    int horizon = 1;
    // train
    TrainConfig train;
    // eval
    int trace_bus = 14;
    Index trace_begin = 0;
    Index trace_len = 168;
    std::string checkpoint;  // eval input; derived from out_dir when empty

    void validate() const;
    ModelConfig model_config(ModelKind kind) const;
};

/// Strict parser: unknown keys anywhere are rejected.
ExperimentConfig parse_experiment_json(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

/// Canonical single-line JSON; parse_experiment_json(to_json(c)) == c.
std::string to_json(const ExperimentConfig& config);

/// Recover the embedded config from any run artifact ('# config:' comment in
/// CSV files, "config" key in JSON files).
ExperimentConfig config_from_artifact(const std::string& path);

struct ConfigOverrides {
    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;  // sets dataset and training seeds
    std::optional<int> years;
    std::optional<std::string> model;
    std::optional<int> epochs;
    std::optional<std::string> out;
};

/// File config (when given) over defaults, then flags over file values.
ExperimentConfig resolve_config(const ConfigOverrides& overrides);

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct GenDataResult {
    std::string csv_path, meta_path, network_path;
    Index rows = 0, cols = 0;
};

GenDataResult run_gen_data(const ExperimentConfig& config, int years);

struct TrainArtifacts {
    std::string checkpoint_path, trainlog_path;
    CellResult cell;  // test-split metrics of the best checkpoint
};

TrainArtifacts run_train(const ExperimentConfig& config, ModelKind kind, int years);

struct EvalArtifacts {
    std::string report_path, trace_path;
    CellResult cell;
};

EvalArtifacts run_eval(const ExperimentConfig& config);

struct CompareArtifacts {
    std::string report_path, curves_path;
    std::vector<CellResult> cells;
    std::vector<std::string> failed_cells;  // "kind/years" labels
};

/// Full benchmark grid (years x kinds) under shared seeds; cells may run on
/// worker threads (jobs > 1). dry_run only prints the plan.
CompareArtifacts run_compare(const ExperimentConfig& config, int jobs, bool dry_run, std::ostream& log);

}  // namespace gridcast
