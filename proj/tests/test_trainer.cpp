#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "gridcast/evaluator.hpp"
#include "gridcast/trainer.hpp"

using namespace gridcast;

namespace {

MatrixRM random_matrix(Index rows, Index cols, std::uint64_t seed, double lo = 0.5, double hi = 10.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    MatrixRM m(rows, cols);
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
    return m;
}

LoadDataset toy_dataset(Index rows, Index cols, std::uint64_t seed) {
    LoadDataset ds;
    ds.matrix = random_matrix(rows, cols, seed);
    for (Index r = 0; r < rows; ++r) ds.timestamps.push_back("t" + std::to_string(r));
    ds.years = 1;
    ds.seed = seed;
    return ds;
}

ModelConfig toy_config(ModelKind kind, int lookback = 4, int hidden = 8) {
    ModelConfig c;
    c.kind = kind;
    c.num_nodes = 2;
    c.node_feature_dim = 2;
    c.input_dim = 4;
    c.output_dim = 4;
    c.lookback = lookback;
    c.hidden_dim = hidden;
    c.gcn_dim = 2;
    c.attention_dim = 2;
    return c;
}

}  // namespace

TEST_CASE("fit_norm floors constant channels and centers the rest") {
    MatrixRM m(50, 3);
    m.col(0).setConstant(7.0);
    m.col(1) = Eigen::VectorXd::LinSpaced(50, -4.0, 4.0);
    m.col(2) = Eigen::VectorXd::LinSpaced(50, 100.0, 300.0);

    NormStats stats = fit_norm(m);
    CHECK(stats.std[0] == 1e-8);
    MatrixRM z = apply_norm(stats, m);
    CHECK(z.col(0).cwiseAbs().maxCoeff() == 0.0);
    for (Index c = 1; c < 3; ++c) CHECK(std::abs(z.col(c).mean()) < 1e-9);
}

TEST_CASE("normalization round-trips within 1e-9") {
    MatrixRM m = random_matrix(120, 8, 3);
    NormStats stats = fit_norm(m);
    MatrixRM back = invert_norm(stats, apply_norm(stats, m));
    CHECK((back - m).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("applying unfitted statistics is an error") {
    NormStats empty;
    MatrixRM m = random_matrix(5, 2, 1);
    CHECK_THROWS_AS(apply_norm(empty, m), std::logic_error);
    CHECK_THROWS_AS(invert_norm(empty, m), std::logic_error);
}

TEST_CASE("fit_norm matches a naive recomputation exactly") {
    MatrixRM m = random_matrix(64, 5, 77);
    NormStats stats = fit_norm(m);
    for (Index c = 0; c < 5; ++c) {
        double acc = 0;
        for (Index r = 0; r < 64; ++r) acc += m(r, c);
        const double mean = acc / 64.0;
        double sq = 0;
        for (Index r = 0; r < 64; ++r) sq += (m(r, c) - mean) * (m(r, c) - mean);
        CHECK(stats.mean[c] == mean);
        CHECK(stats.std[c] == std::max(std::sqrt(sq / 64.0), 1e-8));
    }
}

TEST_CASE("chronological_split counting and ordering") {
    SplitRanges s = chronological_split(100, {0.8, 0.1, 0.1});
    CHECK(s.train.size == 80);
    CHECK(s.val.size == 10);
    CHECK(s.test.size == 10);
    CHECK(s.train.end() - 1 < s.val.begin);
    CHECK(s.val.begin < s.test.begin);
    CHECK(s.val.end() == s.test.begin);
    CHECK(s.test.end() == 100);

    CHECK_THROWS_AS(chronological_split(100, {1.0, 0.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(chronological_split(5, {0.9, 0.05, 0.05}), std::invalid_argument);  // empty val
    CHECK_THROWS_AS(chronological_split(100, {0.5, 0.3, 0.3}), std::invalid_argument);  // fractions > 1
}

TEST_CASE("zero learning rate leaves parameters and loss unchanged") {
    ModelConfig mc = toy_config(ModelKind::fnn);
    MatrixRM data = random_matrix(40, 4, 9, -1.0, 1.0);
    TrainConfig tc;
    tc.learning_rate = 0.0;
    tc.batch_size = 8;
    tc.seed = 5;

    ModelParams params = init_params(mc, tc.seed);
    std::vector<Tensor::Array> before;
    params.visit([&](const std::string&, Tensor& t) { before.push_back(t.value()); });

    Optimizer opt(params.trainable(), tc);
    const double first = train_epoch(params, data, {0, 30}, mc.lookback, tc, 1, opt);
    const double second = train_epoch(params, data, {0, 30}, mc.lookback, tc, 1, opt);

    std::size_t i = 0;
    params.visit([&](const std::string&, Tensor& t) { CHECK((t.value() == before[i++]).all()); });
    CHECK(first == second);
}

TEST_CASE("adam step with all-zero gradients is a no-op") {
    ModelConfig mc = toy_config(ModelKind::rnn);
    ModelParams params = init_params(mc, 3);
    TrainConfig tc;
    Optimizer opt(params.trainable(), tc);

    std::vector<Tensor::Array> before;
    params.visit([&](const std::string&, Tensor& t) { before.push_back(t.value()); });
    params.zero_grads();
    opt.step();
    std::size_t i = 0;
    params.visit([&](const std::string&, Tensor& t) { CHECK((t.value() == before[i++]).all()); });
}

TEST_CASE("a single sample is memorized") {
    ModelConfig mc = toy_config(ModelKind::fnn, 2, 8);
    MatrixRM data = random_matrix(3, 4, 21, -1.0, 1.0);  // exactly one window
    TrainConfig tc;
    tc.learning_rate = 0.02;
    tc.batch_size = 1;
    tc.seed = 2;

    ModelParams params = init_params(mc, tc.seed);
    Optimizer opt(params.trainable(), tc);
    double last = 0;
    for (int epoch = 1; epoch <= 200; ++epoch)
        last = train_epoch(params, data, {0, 1}, mc.lookback, tc, epoch, opt);
    CHECK(last < 1e-3);
}

TEST_CASE("non-finite loss aborts with a learning-rate diagnostic") {
    ModelConfig mc = toy_config(ModelKind::fnn);
    MatrixRM data = MatrixRM::Constant(20, 4, 1e160);  // squared error overflows
    TrainConfig tc;
    ModelParams params = init_params(mc, 1);
    Optimizer opt(params.trainable(), tc);
    try {
        train_epoch(params, data, {0, 10}, mc.lookback, tc, 1, opt);
        FAIL("expected non-finite loss abort");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("learning rate") != std::string::npos);
    }
}

TEST_CASE("fit: log length, best checkpoint, determinism, no leakage") {
    ModelConfig mc = toy_config(ModelKind::gru, 4, 6);
    LoadDataset ds = toy_dataset(220, 4, 31);
    TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 16;
    tc.seed = 11;

    FitResult a = fit(mc, ds, nullptr, tc);
    CHECK(a.log.size() == 4);
    for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].epoch == static_cast<int>(i) + 1);

    double best = std::numeric_limits<double>::infinity();
    for (const EpochRecord& r : a.log) best = std::min(best, r.val_mae);
    CHECK(a.log[static_cast<std::size_t>(a.best_epoch - 1)].val_mae == best);
    CHECK(best <= a.log.back().val_mae);

    // deterministic: identical metric trajectories on a second run
    FitResult b = fit(mc, ds, nullptr, tc);
    REQUIRE(b.log.size() == a.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].train_mse == b.log[i].train_mse);
        CHECK(a.log[i].val_mae == b.log[i].val_mae);
        CHECK(a.log[i].val_mse == b.log[i].val_mse);
        CHECK(a.log[i].val_mape == b.log[i].val_mape);
        CHECK(a.log[i].tolerance_accuracy == b.log[i].tolerance_accuracy);
    }
    auto pa = a.best_params.trainable(), pb = b.best_params.trainable();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK((pa[i]->value() == pb[i]->value()).all());

    // statistics derive from training rows only
    NormStats recomputed = fit_norm(ds.matrix.topRows(a.split.train.size + mc.lookback));
    CHECK((recomputed.mean.array() == a.norm.mean.array()).all());
    CHECK((recomputed.std.array() == a.norm.std.array()).all());
}

TEST_CASE("training reduces the loss on a learnable signal") {
    // deterministic daily-shaped toy signal
    ModelConfig mc = toy_config(ModelKind::fnn, 4, 16);
    LoadDataset ds;
    ds.matrix.resize(400, 4);
    for (Index r = 0; r < 400; ++r)
        for (Index c = 0; c < 4; ++c)
            ds.matrix(r, c) = 10.0 + 3.0 * std::sin(2.0 * 3.14159265 * static_cast<double>(r % 24) / 24.0 +
                                                    static_cast<double>(c));
    for (Index r = 0; r < 400; ++r) ds.timestamps.push_back("t");
    TrainConfig tc;
    tc.epochs = 8;
    tc.batch_size = 32;
    tc.learning_rate = 3e-3;
    tc.seed = 7;

    FitResult res = fit(mc, ds, nullptr, tc);
    CHECK(res.log.back().train_mse < 0.5 * res.log.front().train_mse);
}

TEST_CASE("predict_range output aligns with target_rows") {
    ModelConfig mc = toy_config(ModelKind::fnn);
    LoadDataset ds = toy_dataset(120, 4, 13);
    NormStats norm = fit_norm(ds.matrix.topRows(80));
    MatrixRM normalized = apply_norm(norm, ds.matrix);
    ModelParams params = init_params(mc, 4);

    SplitRange range{50, 20};
    MatrixRM pred = predict_range(params, norm, normalized, range, mc.lookback);
    MatrixRM truth = target_rows(ds.matrix, range, mc.lookback);
    CHECK(pred.rows() == 20);
    CHECK(pred.cols() == 4);
    CHECK(truth.rows() == 20);
    CHECK(truth(0, 0) == ds.matrix(54, 0));
    CHECK_THROWS_AS(predict_range(params, norm, normalized, SplitRange{110, 20}, mc.lookback),
                    std::invalid_argument);
}

TEST_CASE("trainlog CSV carries one row per epoch plus the embedded config") {
    TrainLog log;
    for (int e = 1; e <= 3; ++e) {
        EpochRecord r;
        r.epoch = e;
        r.train_mse = 1.0 / e;
        r.val_mae = 2.0 / e;
        r.val_mse = 3.0 / e;
        r.val_mape = 4.0 / e;
        r.tolerance_accuracy = {50.0, 60.0, 70.0};
        r.wall_seconds = 0.25;
        log.push_back(r);
    }
    const std::string path = "/tmp/gridcast_test_trainlog.csv";
    write_trainlog_csv(path, log, {0.10, 0.15, 0.20}, "{\"run\":1}");

    std::ifstream is(path);
    std::string line;
    std::getline(is, line);
    CHECK(line == "# config: {\"run\":1}");
    std::getline(is, line);
    CHECK(line == "epoch,train_mse,val_mae,val_mse,val_mape,tol_acc_10,tol_acc_15,tol_acc_20,wall_seconds");
    int rows = 0;
    while (std::getline(is, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 3);
}
