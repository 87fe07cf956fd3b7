#include "gridcast/experiment.hpp"

#include <json.hpp>

#include "gridcast/format.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace gridcast {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void expect(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

void reject_unknown_keys(const json& obj, const std::vector<std::string>& allowed, const std::string& where) {
    for (const auto& [key, value] : obj.items())
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw std::invalid_argument("unknown key '" + key + "' in " + where + " section");
}

std::vector<int> parse_years(const json& v) {
    if (v.is_number_integer()) return {v.get<int>()};
    return v.get<std::vector<int>>();
}

std::vector<ModelKind> parse_kinds(const json& v) {
    std::vector<std::string> names;
    if (v.is_string())
        names.push_back(v.get<std::string>());
    else
        names = v.get<std::vector<std::string>>();
    std::vector<ModelKind> kinds;
    for (const std::string& n : names) kinds.push_back(parse_model_kind(n));
    return kinds;
}

std::string cell_label(ModelKind kind, int years) {
    return to_string(kind) + "_" + std::to_string(years) + "yr";
}

}  // namespace

void ExperimentConfig::validate() const {
    expect(!name.empty(), "run.name must not be empty");
    expect(!out_dir.empty(), "run.out_dir must not be empty");
    expect(!years.empty(), "dataset.years must not be empty");
    for (int y : years) expect(y == 1 || y == 5, "dataset.years entries must be 1 or 5, got " + std::to_string(y));
    expect(!kinds.empty(), "model.kinds must not be empty");
    expect(hidden_dim >= 1 && gcn_dim >= 1 && attention_dim >= 1, "model dimensions must be positive");
    expect(lookback >= 1 && horizon >= 1, "model.lookback and model.horizon must be >= 1");
    train.validate();
    expect(trace_bus >= 0 && trace_bus < kFeederNodes,
           "eval.trace_bus must lie in [0, " + std::to_string(kFeederNodes) + ")");
    expect(trace_begin >= 0 && trace_len >= 1, "eval trace span must be nonempty");
}

ModelConfig ExperimentConfig::model_config(ModelKind kind) const {
    ModelConfig mc;
    mc.kind = kind;
    mc.num_nodes = kFeederNodes;
    mc.node_feature_dim = 2;
    mc.input_dim = kFeatureColumns;
    mc.output_dim = kFeatureColumns;
    mc.lookback = lookback;
    mc.horizon = horizon;
    mc.hidden_dim = hidden_dim;
    mc.gcn_dim = gcn_dim;
    mc.attention_dim = attention_dim;
    mc.validate();
    return mc;
}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

ExperimentConfig parse_experiment_json(const std::string& json_text) {
    json j = json::parse(json_text);
    reject_unknown_keys(j, {"run", "dataset", "model", "train", "eval"}, "top-level");

    ExperimentConfig c;
    if (j.contains("run")) {
        const json& r = j["run"];
        reject_unknown_keys(r, {"name", "out_dir"}, "run");
        if (r.contains("name")) c.name = r["name"].get<std::string>();
        if (r.contains("out_dir")) c.out_dir = r["out_dir"].get<std::string>();
    }
    if (j.contains("dataset")) {
        const json& d = j["dataset"];
        reject_unknown_keys(d, {"years", "seed", "path"}, "dataset");
        if (d.contains("years")) c.years = parse_years(d["years"]);
        if (d.contains("seed")) c.dataset_seed = d["seed"].get<std::uint64_t>();
        if (d.contains("path")) c.dataset_path = d["path"].get<std::string>();
    }
    if (j.contains("model")) {
        const json& m = j["model"];
        reject_unknown_keys(m, {"kinds", "hidden_dim", "gcn_dim", "attention_dim", "lookback", "horizon"},
                            "model");
        if (m.contains("kinds")) c.kinds = parse_kinds(m["kinds"]);
        if (m.contains("hidden_dim")) c.hidden_dim = m["hidden_dim"].get<int>();
        if (m.contains("gcn_dim")) c.gcn_dim = m["gcn_dim"].get<int>();
        if (m.contains("attention_dim")) c.attention_dim = m["attention_dim"].get<int>();
        if (m.contains("lookback")) c.lookback = m["lookback"].get<int>();
        if (m.contains("horizon")) c.horizon = m["horizon"].get<int>();
    }
    if (j.contains("train")) {
        const json& t = j["train"];
        reject_unknown_keys(t,
                            {"epochs", "batch_size", "learning_rate", "optimizer", "adam_beta1", "adam_beta2",
                             "adam_epsilon", "split", "seed", "eval_tolerances"},
                            "train");
        if (t.contains("epochs")) c.train.epochs = t["epochs"].get<int>();
        if (t.contains("batch_size")) c.train.batch_size = t["batch_size"].get<int>();
        if (t.contains("learning_rate")) c.train.learning_rate = t["learning_rate"].get<double>();
        if (t.contains("optimizer")) c.train.optimizer = parse_optimizer(t["optimizer"].get<std::string>());
        if (t.contains("adam_beta1")) c.train.adam_beta1 = t["adam_beta1"].get<double>();
        if (t.contains("adam_beta2")) c.train.adam_beta2 = t["adam_beta2"].get<double>();
        if (t.contains("adam_epsilon")) c.train.adam_epsilon = t["adam_epsilon"].get<double>();
        if (t.contains("split")) {
            auto s = t["split"].get<std::vector<double>>();
            expect(s.size() == 3, "train.split must have exactly 3 fractions");
            std::copy(s.begin(), s.end(), c.train.split.begin());
        }
        if (t.contains("seed")) c.train.seed = t["seed"].get<std::uint64_t>();
        if (t.contains("eval_tolerances")) c.train.eval_tolerances = t["eval_tolerances"].get<std::vector<double>>();
    }
    if (j.contains("eval")) {
        const json& e = j["eval"];
        reject_unknown_keys(e, {"trace_bus", "trace_begin", "trace_len", "checkpoint"}, "eval");
        if (e.contains("trace_bus")) c.trace_bus = e["trace_bus"].get<int>();
        if (e.contains("trace_begin")) c.trace_begin = e["trace_begin"].get<Index>();
        if (e.contains("trace_len")) c.trace_len = e["trace_len"].get<Index>();
        if (e.contains("checkpoint")) c.checkpoint = e["checkpoint"].get<std::string>();
    }
    c.validate();
    return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_experiment_json(ss.str());
}

std::string to_json(const ExperimentConfig& c) {
    json kinds = json::array();
    for (ModelKind k : c.kinds) kinds.push_back(to_string(k));
    json j{{"run", {{"name", c.name}, {"out_dir", c.out_dir}}},
           {"dataset", {{"years", c.years}, {"seed", c.dataset_seed}, {"path", c.dataset_path}}},
           {"model",
            {{"kinds", kinds},
             {"hidden_dim", c.hidden_dim},
             {"gcn_dim", c.gcn_dim},
             {"attention_dim", c.attention_dim},
             {"lookback", c.lookback},
             {"horizon", c.horizon}}},
           {"train",
            {{"epochs", c.train.epochs},
             {"batch_size", c.train.batch_size},
             {"learning_rate", c.train.learning_rate},
             {"optimizer", to_string(c.train.optimizer)},
             {"adam_beta1", c.train.adam_beta1},
             {"adam_beta2", c.train.adam_beta2},
             {"adam_epsilon", c.train.adam_epsilon},
             {"split", c.train.split},
             {"seed", c.train.seed},
             {"eval_tolerances", c.train.eval_tolerances}}},
           {"eval",
            {{"trace_bus", c.trace_bus},
             {"trace_begin", c.trace_begin},
             {"trace_len", c.trace_len},
             {"checkpoint", c.checkpoint}}}};
    return j.dump();
}

ExperimentConfig config_from_artifact(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open artifact: " + path);

    // JSON artifacts embed the config under "config" or "experiment"
    char first = 0;
    is >> first;
    is.seekg(0);
    if (first == '{') {
        json j = json::parse(is);
        for (const char* key : {"experiment", "config"})
            if (j.contains(key) && !j[key].is_null()) return parse_experiment_json(j[key].dump());
        throw std::runtime_error("artifact has no embedded config: " + path);
    }

    // CSV artifacts carry a '# config: ...' comment line
    std::string line;
    while (std::getline(is, line)) {
        const std::string prefix = "# config: ";
        if (line.rfind(prefix, 0) == 0) return parse_experiment_json(line.substr(prefix.size()));
        if (!line.empty() && line[0] != '#') break;
    }
    throw std::runtime_error("artifact has no embedded config: " + path);
}

ExperimentConfig resolve_config(const ConfigOverrides& o) {
    ExperimentConfig c;
    if (o.config_path) c = load_experiment_config(*o.config_path);
    if (o.seed) {
        c.dataset_seed = *o.seed;
        c.train.seed = *o.seed;
    }
    if (o.years) c.years = {*o.years};
    if (o.model) c.kinds = {parse_model_kind(*o.model)};
    if (o.epochs) c.train.epochs = *o.epochs;
    if (o.out) c.out_dir = *o.out;
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Command implementations
// ---------------------------------------------------------------------------

namespace {

struct DataBundle {
    LoadDataset dataset;
    DistributionNetwork network;
};

DataBundle acquire_dataset(const ExperimentConfig& config, int years) {
    DistributionNetwork net = build_network(config.dataset_seed);
    if (!config.dataset_path.empty() && fs::exists(config.dataset_path)) {
        LoadDataset ds = read_dataset_csv(config.dataset_path);
        if (ds.years != years)
            throw std::runtime_error("dataset at " + config.dataset_path + " spans " +
                                     std::to_string(ds.years) + " years, requested " + std::to_string(years));
        if (ds.seed != config.dataset_seed) net = build_network(ds.seed);
        return {std::move(ds), std::move(net)};
    }
    LoadDataset ds = generate_dataset(net, years, config.dataset_seed);
    return {std::move(ds), std::move(net)};
}

void write_config_snapshot(const ExperimentConfig& config) {
    std::ofstream os(fs::path(config.out_dir) / "config.json", std::ios::binary);
    if (!os) throw std::runtime_error("cannot write config snapshot in " + config.out_dir);
    os << to_json(config) << "\n";
}

std::string dataset_csv_path(const ExperimentConfig& config, int years) {
    if (!config.dataset_path.empty()) return config.dataset_path;
    return (fs::path(config.out_dir) / ("dataset_" + std::to_string(years) + "yr.csv")).string();
}

double mean_epoch_seconds(const TrainLog& log) {
    double total = 0;
    for (const EpochRecord& r : log) total += r.wall_seconds;
    return log.empty() ? 0.0 : total / static_cast<double>(log.size());
}

TrainArtifacts train_cell(const ExperimentConfig& config, ModelKind kind, int years, const LoadDataset& ds,
                          const DistributionNetwork& net) {
    const std::string embedded = to_json(config);
    FitResult fr = fit(config.model_config(kind), ds, &net, config.train);

    const fs::path dir(config.out_dir);
    TrainArtifacts out;
    out.checkpoint_path = (dir / (cell_label(kind, years) + "_checkpoint.json")).string();
    out.trainlog_path = (dir / (cell_label(kind, years) + "_trainlog.csv")).string();

    std::map<std::string, std::vector<double>> extras;
    extras["norm.mean"] = {fr.norm.mean.data(), fr.norm.mean.data() + fr.norm.mean.size()};
    extras["norm.std"] = {fr.norm.std.data(), fr.norm.std.data() + fr.norm.std.size()};
    save_checkpoint(out.checkpoint_path, fr.best_params, config.train.seed, extras, embedded);
    write_trainlog_csv(out.trainlog_path, fr.log, config.train.eval_tolerances, embedded);

    out.cell = evaluate_cell(fr.best_params, fr.norm, ds, fr.split.test, config.train);
    out.cell.years = years;
    out.cell.seconds_per_epoch = mean_epoch_seconds(fr.log);
    out.cell.log = fr.log;
    return out;
}

NormStats norm_from_extras(const std::map<std::string, std::vector<double>>& extras,
                           const std::string& path) {
    auto mean_it = extras.find("norm.mean");
    auto std_it = extras.find("norm.std");
    if (mean_it == extras.end() || std_it == extras.end())
        throw std::runtime_error("checkpoint lacks normalization statistics: " + path);
    NormStats norm;
    norm.mean = Eigen::Map<const Eigen::VectorXd>(mean_it->second.data(),
                                                  static_cast<Index>(mean_it->second.size()));
    norm.std = Eigen::Map<const Eigen::VectorXd>(std_it->second.data(),
                                                 static_cast<Index>(std_it->second.size()));
    return norm;
}

}  // namespace

GenDataResult run_gen_data(const ExperimentConfig& config, int years) {
    config.validate();
    expect(years == 1 || years == 5, "unsupported dataset length: " + std::to_string(years) + " years");
    fs::create_directories(config.out_dir);
    write_config_snapshot(config);

    DistributionNetwork net = build_network(config.dataset_seed);
    LoadDataset ds = generate_dataset(net, years, config.dataset_seed);

    const std::string embedded = to_json(config);
    GenDataResult out;
    out.csv_path = dataset_csv_path(config, years);
    out.meta_path = out.csv_path + ".meta.json";
    out.network_path = (fs::path(config.out_dir) / "network.json").string();
    out.rows = ds.matrix.rows();
    out.cols = ds.matrix.cols();

    write_dataset_csv(out.csv_path, ds, embedded);
    write_dataset_meta(out.meta_path, ds, embedded);
    write_network_json(out.network_path, net);
    return out;
}

TrainArtifacts run_train(const ExperimentConfig& config, ModelKind kind, int years) {
    config.validate();
    fs::create_directories(config.out_dir);
    write_config_snapshot(config);
    DataBundle data = acquire_dataset(config, years);
    return train_cell(config, kind, years, data.dataset, data.network);
}

EvalArtifacts run_eval(const ExperimentConfig& config) {
    config.validate();
    fs::create_directories(config.out_dir);

    const fs::path dir(config.out_dir);
    std::string checkpoint_path = config.checkpoint;
    if (checkpoint_path.empty())
        checkpoint_path = (dir / (cell_label(config.kinds.front(), config.years.front()) + "_checkpoint.json")).string();

    Checkpoint ck = load_checkpoint(checkpoint_path);
    NormStats norm = norm_from_extras(ck.extras, checkpoint_path);

    // the held-out test range is defined by the training-time split and data
    // identity; refuse to silently score a different slice
    if (!ck.experiment_json.empty()) {
        ExperimentConfig trained = parse_experiment_json(ck.experiment_json);
        if (trained.train.split != config.train.split)
            throw std::invalid_argument("eval split differs from the checkpoint's training split");
        if (trained.dataset_seed != config.dataset_seed || trained.dataset_path != config.dataset_path)
            throw std::invalid_argument("eval dataset (seed/path) differs from the checkpoint's training data");
    }

    const int years = config.years.front();
    DataBundle data = acquire_dataset(config, years);
    WindowedSamples samples = window(data.dataset, ck.params.config.lookback);
    SplitRanges split = chronological_split(samples.count(), config.train.split);

    CellResult cell = evaluate_cell(ck.params, norm, data.dataset, split.test, config.train);
    cell.years = years;

    const std::string embedded = to_json(config);
    EvalArtifacts out;
    out.cell = cell;
    out.report_path = (dir / (cell_label(cell.kind, years) + "_eval.json")).string();
    out.trace_path =
        (dir / (cell_label(cell.kind, years) + "_trace_bus" + std::to_string(config.trace_bus) + ".csv")).string();

    MatrixRM normalized = apply_norm(norm, data.dataset.matrix);
    MatrixRM pred = predict_range(ck.params, norm, normalized, split.test, ck.params.config.lookback);
    MatrixRM truth = target_rows(data.dataset.matrix, split.test, ck.params.config.lookback);
    Eigen::VectorXd per_column = mae_per_column(pred, truth);

    json tol = json::object();
    for (const auto& [t, acc] : cell.tolerance_accuracy_pct) tol[detail::shortest_double(t)] = acc;
    json j{{"model", to_string(cell.kind)}, {"years", years},
           {"mae_kw", cell.mae_kw},         {"mse_kw2", cell.mse_kw2},
           {"mape_pct", cell.mape_pct},     {"tolerance_accuracy_pct", tol},
           {"mae_per_column_kw", std::vector<double>(per_column.data(), per_column.data() + per_column.size())},
           {"checkpoint", checkpoint_path}, {"config", json::parse(embedded)}};
    std::ofstream os(out.report_path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write evaluation report: " + out.report_path);
    os << j.dump(2) << "\n";

    auto trace = per_bus_trace(ck.params, norm, data.dataset, split.test, config.trace_bus,
                               config.trace_begin, config.trace_len);
    write_trace_csv(out.trace_path, trace, embedded);
    return out;
}

CompareArtifacts run_compare(const ExperimentConfig& config, int jobs, bool dry_run, std::ostream& log) {
    config.validate();
    expect(jobs >= 1, "jobs must be >= 1");

    struct Cell {
        ModelKind kind;
        int years;
    };
    std::vector<Cell> plan;
    for (int years : config.years)
        for (ModelKind kind : config.kinds) plan.push_back({kind, years});

    CompareArtifacts out;
    const fs::path dir(config.out_dir);
    out.report_path = (dir / "report.csv").string();
    out.curves_path = (dir / "curves.json").string();

    if (dry_run) {
        log << "comparison plan: " << plan.size() << " cells, " << config.train.epochs << " epochs each\n";
        for (const Cell& cell : plan)
            log << "  train " << cell_label(cell.kind, cell.years) << " -> "
                << (dir / (cell_label(cell.kind, cell.years) + "_checkpoint.json")).string() << "\n";
        log << "  report -> " << out.report_path << "\n";
        log << "  curves -> " << out.curves_path << "\n";
        return out;
    }

    fs::create_directories(config.out_dir);
    write_config_snapshot(config);

    std::map<int, DataBundle> data;
    for (int years : config.years) {
        run_gen_data(config, years);
        data.emplace(years, acquire_dataset(config, years));
    }

    std::vector<CellResult> results(plan.size());
    std::vector<char> ok(plan.size(), 0);
    std::vector<std::string> failures(plan.size());
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;

    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= plan.size()) return;
            const Cell& cell = plan[i];
            try {
                {
                    std::lock_guard<std::mutex> lk(log_mutex);
                    log << "training " << cell_label(cell.kind, cell.years) << " (" << config.train.epochs
                        << " epochs)\n"
                        << std::flush;
                }
                const DataBundle& bundle = data.at(cell.years);
                TrainArtifacts art = train_cell(config, cell.kind, cell.years, bundle.dataset, bundle.network);
                results[i] = std::move(art.cell);
                ok[i] = 1;
            } catch (const std::exception& e) {
                failures[i] = cell_label(cell.kind, cell.years) + ": " + e.what();
            }
        }
    };

    const int workers = std::min<int>(jobs, static_cast<int>(plan.size()));
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    std::vector<CellResult> completed;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        if (ok[i])
            completed.push_back(std::move(results[i]));
        else
            out.failed_cells.push_back(failures[i]);
    }

    if (!completed.empty()) {
        ComparisonReport report = compare(std::move(completed));
        const std::string embedded = to_json(config);
        write_report_csv(out.report_path, report, config.train.eval_tolerances, embedded);
        write_curves_json(out.curves_path, report, embedded);
        out.cells = std::move(report.cells);
    }
    return out;
}

}  // namespace gridcast
