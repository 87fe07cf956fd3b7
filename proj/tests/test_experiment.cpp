#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "gridcast/experiment.hpp"

using namespace gridcast;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

ExperimentConfig small_config(const std::string& out_dir) {
    ExperimentConfig c;
    c.out_dir = out_dir;
    c.years = {1};
    c.kinds = {ModelKind::fnn};
    c.hidden_dim = 4;
    c.gcn_dim = 2;
    c.attention_dim = 2;
    c.train.epochs = 1;
    c.train.seed = 3;
    c.dataset_seed = 3;
    c.trace_len = 24;
    return c;
}

}  // namespace

TEST_CASE("experiment config round-trips through its canonical JSON") {
    ExperimentConfig c = small_config("/tmp/gridcast_cfg_rt");
    const std::string a = to_json(c);
    ExperimentConfig back = parse_experiment_json(a);
    CHECK(to_json(back) == a);
    CHECK(back.kinds == c.kinds);
    CHECK(back.years == c.years);
    CHECK(back.train.seed == c.train.seed);
}

TEST_CASE("unknown config keys are rejected at every level") {
    CHECK_THROWS_AS(parse_experiment_json(R"({"bogus": 1})"), std::invalid_argument);
    CHECK_THROWS_AS(parse_experiment_json(R"({"run": {"nombre": "x"}})"), std::invalid_argument);
    CHECK_THROWS_AS(parse_experiment_json(R"({"dataset": {"year": 1}})"), std::invalid_argument);
    CHECK_THROWS_AS(parse_experiment_json(R"({"model": {"width": 3}})"), std::invalid_argument);
    CHECK_THROWS_AS(parse_experiment_json(R"({"train": {"lr": 0.1}})"), std::invalid_argument);
    CHECK_THROWS_AS(parse_experiment_json(R"({"eval": {"bus": 14}})"), std::invalid_argument);
}

TEST_CASE("scalar and list forms of years and kinds both parse") {
    ExperimentConfig a = parse_experiment_json(R"({"dataset": {"years": 1}, "model": {"kinds": "gru"}})");
    CHECK(a.years == std::vector<int>{1});
    CHECK(a.kinds == std::vector<ModelKind>{ModelKind::gru});

    ExperimentConfig b =
        parse_experiment_json(R"({"dataset": {"years": [1, 5]}, "model": {"kinds": ["fnn", "lstm"]}})");
    CHECK(b.years == std::vector<int>({1, 5}));
    CHECK(b.kinds == std::vector<ModelKind>({ModelKind::fnn, ModelKind::lstm}));

    CHECK_THROWS(parse_experiment_json(R"({"dataset": {"years": 3}})"));
}

TEST_CASE("flags override file values") {
    const std::string cfg_path = "/tmp/gridcast_test_cfg.json";
    {
        std::ofstream os(cfg_path);
        os << R"({"dataset": {"seed": 5}, "train": {"epochs": 50, "seed": 5}, "run": {"out_dir": "fileout"}})";
    }
    ConfigOverrides o;
    o.config_path = cfg_path;
    o.epochs = 7;
    o.seed = 99;
    ExperimentConfig c = resolve_config(o);
    CHECK(c.train.epochs == 7);
    CHECK(c.train.seed == 99);
    CHECK(c.dataset_seed == 99);
    CHECK(c.out_dir == "fileout");
}

TEST_CASE("gen-data writes dataset, metadata and network; reruns are byte-identical") {
    const std::string dir = "/tmp/gridcast_test_gen";
    fs::remove_all(dir);
    ExperimentConfig cfg = small_config(dir);

    GenDataResult first = run_gen_data(cfg, 1);
    CHECK(first.rows == 8760);
    CHECK(first.cols == 88);
    CHECK(fs::exists(first.csv_path));
    CHECK(fs::exists(first.meta_path));
    CHECK(fs::exists(first.network_path));

    const std::string csv = slurp(first.csv_path);
    const std::string meta = slurp(first.meta_path);
    const std::string net = slurp(first.network_path);

    GenDataResult second = run_gen_data(cfg, 1);
    CHECK(slurp(second.csv_path) == csv);
    CHECK(slurp(second.meta_path) == meta);
    CHECK(slurp(second.network_path) == net);

    CHECK_THROWS(run_gen_data(cfg, 3));
}

TEST_CASE("train then eval produce linked artifacts with recoverable configs") {
    const std::string dir = "/tmp/gridcast_test_train";
    fs::remove_all(dir);
    ExperimentConfig cfg = small_config(dir);

    TrainArtifacts art = run_train(cfg, ModelKind::fnn, 1);
    CHECK(fs::exists(art.checkpoint_path));
    CHECK(fs::exists(art.trainlog_path));
    CHECK(art.cell.kind == ModelKind::fnn);
    CHECK(art.cell.years == 1);
    CHECK(art.cell.mae_kw > 0);

    // every artifact embeds the full resolved config
    CHECK(to_json(config_from_artifact(art.checkpoint_path)) == to_json(cfg));
    CHECK(to_json(config_from_artifact(art.trainlog_path)) == to_json(cfg));

    EvalArtifacts ev = run_eval(cfg);
    CHECK(fs::exists(ev.report_path));
    CHECK(fs::exists(ev.trace_path));
    CHECK(ev.cell.mae_kw == doctest::Approx(art.cell.mae_kw).epsilon(1e-12));
    CHECK(to_json(config_from_artifact(ev.report_path)) == to_json(cfg));
    CHECK(to_json(config_from_artifact(ev.trace_path)) == to_json(cfg));

    // trace length honors the configured span
    std::ifstream is(ev.trace_path);
    std::string line;
    int rows = 0;
    while (std::getline(is, line))
        if (!line.empty() && line[0] != '#' && line.rfind("timestamp", 0) != 0) ++rows;
    CHECK(rows == 24);
}

TEST_CASE("eval refuses a split or dataset different from the checkpoint's") {
    const std::string dir = "/tmp/gridcast_test_evalguard";
    fs::remove_all(dir);
    ExperimentConfig cfg = small_config(dir);
    run_train(cfg, ModelKind::fnn, 1);

    ExperimentConfig other_split = cfg;
    other_split.train.split = {0.7, 0.2, 0.1};
    CHECK_THROWS_AS(run_eval(other_split), std::invalid_argument);

    ExperimentConfig other_data = cfg;
    other_data.dataset_seed = 99;
    CHECK_THROWS_AS(run_eval(other_data), std::invalid_argument);
}

TEST_CASE("compare dry run prints the full default grid without training") {
    ExperimentConfig cfg;  // defaults: 5 kinds x 2 years
    cfg.out_dir = "/tmp/gridcast_test_dry";
    std::ostringstream plan;
    CompareArtifacts res = run_compare(cfg, 1, true, plan);
    CHECK(res.cells.empty());

    int cells = 0;
    std::istringstream is(plan.str());
    std::string line;
    while (std::getline(is, line))
        if (line.find("  train ") == 0) ++cells;
    CHECK(cells == 10);
    CHECK(!fs::exists(cfg.out_dir + "/report.csv"));
}

TEST_CASE("gen-data CSV literally has 8760 data rows of 89 fields") {
    const std::string dir = "/tmp/gridcast_test_gencsv";
    fs::remove_all(dir);
    ExperimentConfig cfg = small_config(dir);
    GenDataResult res = run_gen_data(cfg, 1);

    std::ifstream is(res.csv_path);
    std::string line;
    long data_rows = 0;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("timestamp", 0) == 0) continue;
        ++data_rows;
        if (data_rows == 1) {
            long fields = 1 + static_cast<long>(std::count(line.begin(), line.end(), ','));
            CHECK(fields == 89);
        }
    }
    CHECK(data_rows == 8760);
}

TEST_CASE("compare trains the grid on worker threads and writes the report") {
    const std::string dir = "/tmp/gridcast_test_compare";
    fs::remove_all(dir);
    ExperimentConfig cfg = small_config(dir);
    cfg.kinds = {ModelKind::fnn, ModelKind::rnn};

    std::ostringstream log;
    CompareArtifacts res = run_compare(cfg, 2, false, log);
    CHECK(res.failed_cells.empty());
    REQUIRE(res.cells.size() == 2);
    CHECK(res.cells[0].kind == ModelKind::fnn);
    CHECK(res.cells[1].kind == ModelKind::rnn);
    CHECK(fs::exists(res.report_path));
    CHECK(fs::exists(res.curves_path));
    CHECK(fs::exists(dir + "/fnn_1yr_checkpoint.json"));
    CHECK(fs::exists(dir + "/rnn_1yr_checkpoint.json"));
    CHECK(to_json(config_from_artifact(res.report_path)) == to_json(cfg));

    // curves carry one record per epoch per cell
    std::string curves = slurp(res.curves_path);
    CHECK(curves.find("\"model\": \"fnn\"") != std::string::npos);
    CHECK(curves.find("\"model\": \"rnn\"") != std::string::npos);
}

TEST_CASE("dataset path in the config is honored by training") {
    const std::string dir = "/tmp/gridcast_test_dspath";
    fs::remove_all(dir);
    ExperimentConfig cfg = small_config(dir);
    run_gen_data(cfg, 1);

    ExperimentConfig reuse = cfg;
    reuse.dataset_path = dir + "/dataset_1yr.csv";
    TrainArtifacts art = run_train(reuse, ModelKind::fnn, 1);
    CHECK(fs::exists(art.checkpoint_path));
}
