#include "gridcast/models.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace gridcast {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void expect(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::fnn: return "fnn";
        case ModelKind::rnn: return "rnn";
        case ModelKind::lstm: return "lstm";
        case ModelKind::gru: return "gru";
        case ModelKind::a3tgcn: return "a3tgcn";
    }
    throw std::logic_error("unreachable model kind");
}

ModelKind parse_model_kind(const std::string& name) {
    std::string low = name;
    std::transform(low.begin(), low.end(), low.begin(), [](unsigned char c) { return std::tolower(c); });
    for (ModelKind k : all_model_kinds())
        if (low == to_string(k)) return k;
    throw std::invalid_argument("unknown model kind '" + name +
                                "' (expected one of fnn, rnn, lstm, gru, a3tgcn)");
}

std::vector<ModelKind> all_model_kinds() {
    return {ModelKind::fnn, ModelKind::rnn, ModelKind::lstm, ModelKind::gru, ModelKind::a3tgcn};
}

void ModelConfig::validate() const {
    expect(num_nodes >= 1, "config: num_nodes must be positive");
    expect(node_feature_dim >= 1, "config: node_feature_dim must be positive");
    expect(input_dim == num_nodes * node_feature_dim,
           "config: input_dim " + std::to_string(input_dim) + " != num_nodes * node_feature_dim " +
               std::to_string(num_nodes * node_feature_dim));
    expect(lookback >= 1, "config: lookback must be >= 1");
    expect(horizon >= 1, "config: horizon must be >= 1");
    expect(hidden_dim >= 1, "config: hidden_dim must be positive");
    expect(output_dim >= 1, "config: output_dim must be positive");
    expect(gcn_dim >= 1, "config: gcn_dim must be positive");
    expect(attention_dim >= 1, "config: attention_dim must be positive");
}

// ---------------------------------------------------------------------------
// Parameter visitation
// ---------------------------------------------------------------------------

namespace {

using VisitFn = std::function<void(const std::string&, Tensor&)>;

void visit_dense(const std::string& prefix, DenseLayer& d, const VisitFn& fn) {
    fn(prefix + ".W", d.W);
    fn(prefix + ".b", d.b);
}

void visit_gate(const std::string& prefix, GateParams& g, const VisitFn& fn) {
    fn(prefix + ".W_x", g.W_x);
    fn(prefix + ".W_h", g.W_h);
    fn(prefix + ".b", g.b);
}

}  // namespace

void ModelParams::visit(const VisitFn& fn) {
    std::visit(overloaded{
                   [&](FnnParams& p) {
                       visit_dense("hidden", p.hidden, fn);
                       visit_dense("head", p.head, fn);
                   },
                   [&](RnnParams& p) {
                       visit_gate("cell", p.cell, fn);
                       visit_dense("head", p.head, fn);
                   },
                   [&](LstmParams& p) {
                       visit_gate("cell.forget", p.cell.forget, fn);
                       visit_gate("cell.input", p.cell.input, fn);
                       visit_gate("cell.output", p.cell.output, fn);
                       visit_gate("cell.cand", p.cell.cand, fn);
                       visit_dense("head", p.head, fn);
                   },
                   [&](GruParams& p) {
                       visit_gate("cell.update", p.cell.update, fn);
                       visit_gate("cell.reset", p.cell.reset, fn);
                       visit_gate("cell.cand", p.cell.cand, fn);
                       visit_dense("head", p.head, fn);
                   },
                   [&](A3tgcnParams& p) {
                       fn("gcn.W", p.gcn.W);
                       visit_gate("gru.update", p.gru.update, fn);
                       visit_gate("gru.reset", p.gru.reset, fn);
                       visit_gate("gru.cand", p.gru.cand, fn);
                       fn("attention.W1", p.attention.W1);
                       fn("attention.b1", p.attention.b1);
                       fn("attention.w2", p.attention.w2);
                       visit_dense("head", p.head, fn);
                   },
               },
               arch);
}

std::vector<Tensor*> ModelParams::trainable() {
    std::vector<Tensor*> out;
    visit([&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
}

std::size_t ModelParams::parameter_count() {
    std::size_t n = 0;
    visit([&](const std::string&, Tensor& t) { n += static_cast<std::size_t>(t.numel()); });
    return n;
}

void ModelParams::zero_grads() {
    visit([](const std::string&, Tensor& t) { t.zero_grad(); });
}

ModelParams ModelParams::clone() const {
    ModelParams copy = *this;
    copy.visit([](const std::string&, Tensor& t) { t = t.clone(); });
    return copy;
}

ModelParams ModelParams::detached() const {
    ModelParams copy = *this;
    copy.visit([](const std::string&, Tensor& t) { t = t.detached(); });
    return copy;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace {

/// Glorot-uniform initializer. Draw order is the canonical visitation order
/// of the weight tensors; biases consume no randomness.
struct ParamInit {
    std::mt19937_64 rng;

    explicit ParamInit(std::uint64_t seed) : rng(seed) {}

    Tensor weight(Index out, Index in) {
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        Tensor::Array a(out * in);
        for (Index i = 0; i < a.size(); ++i) a[i] = dist(rng);
        return Tensor::from_array({out, in}, std::move(a), true);
    }

    Tensor weight_vector(Index n) {
        const double limit = std::sqrt(6.0 / static_cast<double>(n + 1));
        std::uniform_real_distribution<double> dist(-limit, limit);
        Tensor::Array a(n);
        for (Index i = 0; i < a.size(); ++i) a[i] = dist(rng);
        return Tensor::from_array({n}, std::move(a), true);
    }

    Tensor bias(Index n) { return Tensor::zeros({n}, true); }

    DenseLayer dense(Index out, Index in) { return {weight(out, in), bias(out)}; }

    GateParams gate(Index hidden, Index in) { return {weight(hidden, in), weight(hidden, hidden), bias(hidden)}; }
};

}  // namespace

ModelParams init_params(const ModelConfig& config, std::uint64_t seed, const MatrixRM* a_hat) {
    config.validate();
    ParamInit init(seed);
    ModelParams mp;
    mp.config = config;
    const Index in = config.input_dim;
    const Index hidden = config.hidden_dim;
    const Index head_out = config.head_dim();

    switch (config.kind) {
        case ModelKind::fnn: {
            FnnParams p;
            p.hidden = init.dense(hidden, static_cast<Index>(config.lookback) * in);
            p.head = init.dense(head_out, hidden);
            mp.arch = std::move(p);
            break;
        }
        case ModelKind::rnn: {
            RnnParams p;
            p.cell = init.gate(hidden, in);
            p.head = init.dense(head_out, hidden);
            mp.arch = std::move(p);
            break;
        }
        case ModelKind::lstm: {
            LstmParams p;
            p.cell.forget = init.gate(hidden, in);
            p.cell.input = init.gate(hidden, in);
            p.cell.output = init.gate(hidden, in);
            p.cell.cand = init.gate(hidden, in);
            p.head = init.dense(head_out, hidden);
            mp.arch = std::move(p);
            break;
        }
        case ModelKind::gru: {
            GruParams p;
            p.cell.update = init.gate(hidden, in);
            p.cell.reset = init.gate(hidden, in);
            p.cell.cand = init.gate(hidden, in);
            p.head = init.dense(head_out, hidden);
            mp.arch = std::move(p);
            break;
        }
        case ModelKind::a3tgcn: {
            A3tgcnParams p;
            p.gcn.W = init.weight(config.gcn_dim, config.node_feature_dim);
            if (a_hat) {
                expect(a_hat->rows() == config.num_nodes && a_hat->cols() == config.num_nodes,
                       "init_params: adjacency size does not match num_nodes");
                p.gcn.a_hat = std::make_shared<const MatrixRM>(*a_hat);
            } else {
                p.gcn.a_hat = std::make_shared<const MatrixRM>(
                    MatrixRM(MatrixRM::Identity(config.num_nodes, config.num_nodes)));
            }
            const Index gru_in = static_cast<Index>(config.num_nodes) * config.gcn_dim;
            p.gru.update = init.gate(hidden, gru_in);
            p.gru.reset = init.gate(hidden, gru_in);
            p.gru.cand = init.gate(hidden, gru_in);
            p.attention.W1 = init.weight(config.attention_dim, hidden);
            p.attention.b1 = init.bias(config.attention_dim);
            p.attention.w2 = init.weight_vector(config.attention_dim);
            p.head = init.dense(head_out, hidden);
            mp.arch = std::move(p);
            break;
        }
    }
    return mp;
}

// ---------------------------------------------------------------------------
// Graph normalization
// ---------------------------------------------------------------------------

MatrixRM normalize_adjacency(const std::vector<std::pair<int, int>>& edges, int num_nodes) {
    expect(num_nodes >= 1, "normalize_adjacency: need at least one node");
    std::vector<double> degree(static_cast<std::size_t>(num_nodes), 1.0);  // self-loop included
    std::set<std::pair<int, int>> seen;
    for (auto [a, b] : edges) {
        expect(a >= 0 && a < num_nodes && b >= 0 && b < num_nodes,
               "normalize_adjacency: edge (" + std::to_string(a) + "," + std::to_string(b) +
                   ") out of range for " + std::to_string(num_nodes) + " nodes");
        expect(a != b, "normalize_adjacency: self-loop at node " + std::to_string(a));
        auto key = std::minmax(a, b);
        expect(seen.insert(key).second, "normalize_adjacency: duplicate edge (" + std::to_string(key.first) +
                                            "," + std::to_string(key.second) + ")");
        degree[static_cast<std::size_t>(a)] += 1.0;
        degree[static_cast<std::size_t>(b)] += 1.0;
    }
    MatrixRM out = MatrixRM::Zero(num_nodes, num_nodes);
    for (int i = 0; i < num_nodes; ++i) out(i, i) = 1.0 / degree[static_cast<std::size_t>(i)];
    for (auto [a, b] : edges) {
        const double w = 1.0 / std::sqrt(degree[static_cast<std::size_t>(a)] * degree[static_cast<std::size_t>(b)]);
        out(a, b) = w;
        out(b, a) = w;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

namespace {

void check_window(const Tensor& window) {
    expect(window.rank() == 3, "window must be rank-3 {batch, lookback, features}, got " +
                                   shape_string(window.shape()));
    expect(!window.grad_enabled(), "window is an input and must not carry gradient tracking");
}

/// Copy hour t out of a {B, L, D} window as a {B, D} constant.
Tensor hour_slice(const Tensor& window, Index t) {
    const Index B = window.shape()[0], L = window.shape()[1], D = window.shape()[2];
    Tensor::Array out(B * D);
    const auto& v = window.value();
    for (Index b = 0; b < B; ++b)
        for (Index d = 0; d < D; ++d) out[b * D + d] = v[(b * L + t) * D + d];
    return Tensor::from_array({B, D}, std::move(out));
}

/// Regroup one hour of a window into stacked per-node features {B*N, F}.
/// Feature f of node i lives at window column f*N + i.
Tensor node_feature_slice(const Tensor& window, Index t, Index num_nodes, Index feat) {
    const Index B = window.shape()[0], L = window.shape()[1], D = window.shape()[2];
    Tensor::Array out(B * num_nodes * feat);
    const auto& v = window.value();
    for (Index b = 0; b < B; ++b)
        for (Index i = 0; i < num_nodes; ++i)
            for (Index f = 0; f < feat; ++f)
                out[(b * num_nodes + i) * feat + f] = v[(b * L + t) * D + f * num_nodes + i];
    return Tensor::from_array({B * num_nodes, feat}, std::move(out));
}

Tensor gate_preactivation(const GateParams& g, const Tensor& x, const Tensor& h) {
    return add(linear(x, g.W_x, g.b), matmul(h, transpose(g.W_h)));
}

}  // namespace

Tensor fnn_forward(const FnnParams& params, const Tensor& window) {
    check_window(window);
    const Index B = window.shape()[0];
    const Index flat = window.shape()[1] * window.shape()[2];
    expect(params.hidden.W.shape()[1] == flat,
           "fnn_forward: window " + shape_string(window.shape()) + " incompatible with hidden layer " +
               shape_string(params.hidden.W.shape()));
    Tensor x = reshape(window, {B, flat});
    Tensor h = relu(linear(x, params.hidden.W, params.hidden.b));
    return linear(h, params.head.W, params.head.b);
}

Tensor rnn_cell(const RnnCellParams& params, const Tensor& x_t, const Tensor& h_prev) {
    return tanh(gate_preactivation(params, x_t, h_prev));
}

std::pair<Tensor, Tensor> lstm_cell(const LstmCellParams& params, const Tensor& x_t, const Tensor& h_prev,
                                    const Tensor& c_prev) {
    Tensor f = sigmoid(gate_preactivation(params.forget, x_t, h_prev));
    Tensor i = sigmoid(gate_preactivation(params.input, x_t, h_prev));
    Tensor o = sigmoid(gate_preactivation(params.output, x_t, h_prev));
    Tensor g = tanh(gate_preactivation(params.cand, x_t, h_prev));
    Tensor c_t = add(mul(f, c_prev), mul(i, g));
    Tensor h_t = mul(o, tanh(c_t));
    return {h_t, c_t};
}

Tensor gru_cell(const GruCellParams& params, const Tensor& x_t, const Tensor& h_prev) {
    Tensor z = sigmoid(gate_preactivation(params.update, x_t, h_prev));
    Tensor r = sigmoid(gate_preactivation(params.reset, x_t, h_prev));
    Tensor candidate = tanh(add(linear(x_t, params.cand.W_x, params.cand.b),
                                matmul(mul(r, h_prev), transpose(params.cand.W_h))));
    // h_t = (1 - z) (.) h_prev + z (.) candidate
    return add(sub(h_prev, mul(z, h_prev)), mul(z, candidate));
}

Tensor gcn_layer(const GcnLayerParams& params, const Tensor& x) {
    expect(x.rank() == 3, "gcn_layer: expected {B, N, F}, got " + shape_string(x.shape()));
    const Index B = x.shape()[0], N = x.shape()[1], F = x.shape()[2];
    expect(params.a_hat && params.a_hat->rows() == N,
           "gcn_layer: adjacency does not match node count " + std::to_string(N));
    expect(params.W.shape()[1] == F, "gcn_layer: weight " + shape_string(params.W.shape()) +
                                         " incompatible with feature width " + std::to_string(F));
    const Index out = params.W.shape()[0];
    Tensor flat = reshape(x, {B * N, F});
    Tensor propagated = graph_propagate<double>(params.a_hat, flat);
    Tensor y = relu(matmul(propagated, transpose(params.W)));
    return reshape(y, {B, N, out});
}

Tensor a3tgcn_forward(const A3tgcnParams& params, const Tensor& window, Tensor* attention_out) {
    check_window(window);
    const Index B = window.shape()[0], L = window.shape()[1], D = window.shape()[2];
    const Index N = params.gcn.a_hat ? params.gcn.a_hat->rows() : 0;
    const Index F = params.gcn.W.shape()[1];
    expect(N > 0 && D == N * F, "a3tgcn_forward: window features " + std::to_string(D) +
                                    " != num_nodes * node_feature_dim " + std::to_string(N * F));
    const Index gcn_out = params.gcn.W.shape()[0];
    const Index hidden = params.gru.cand.W_h.shape()[1];
    const Index attn = params.attention.W1.shape()[0];

    Tensor h = Tensor::zeros({B, hidden});
    std::vector<Tensor> states;
    states.reserve(static_cast<std::size_t>(L));
    for (Index t = 0; t < L; ++t) {
        Tensor xt = node_feature_slice(window, t, N, F);
        Tensor propagated = graph_propagate<double>(params.gcn.a_hat, xt);
        Tensor features = relu(matmul(propagated, transpose(params.gcn.W)));
        Tensor u = reshape(features, {B, N * gcn_out});
        h = gru_cell(params.gru, u, h);
        states.push_back(h);
    }

    Tensor w2col = reshape(params.attention.w2, {attn, 1});
    std::vector<Tensor> scores;
    scores.reserve(states.size());
    for (const Tensor& state : states)
        scores.push_back(matmul(tanh(linear(state, params.attention.W1, params.attention.b1)), w2col));
    Tensor alpha = softmax_rows(concat_cols(scores));  // {B, L}
    if (attention_out) *attention_out = alpha;

    Tensor context = scale_rows(states[0], col(alpha, 0));
    for (Index t = 1; t < L; ++t) context = add(context, scale_rows(states[static_cast<std::size_t>(t)], col(alpha, t)));
    return linear(context, params.head.W, params.head.b);
}

Tensor unroll_and_predict(const ModelParams& params, const Tensor& window) {
    check_window(window);
    const ModelConfig& cfg = params.config;
    expect(window.shape()[1] == cfg.lookback && window.shape()[2] == cfg.input_dim,
           "unroll_and_predict: window " + shape_string(window.shape()) + " does not match config {" +
               std::to_string(cfg.lookback) + ", " + std::to_string(cfg.input_dim) + "}");
    const Index B = window.shape()[0];
    const Index hidden = cfg.hidden_dim;

    return std::visit(
        overloaded{
            [&](const FnnParams& p) { return fnn_forward(p, window); },
            [&](const RnnParams& p) {
                Tensor h = Tensor::zeros({B, hidden});
                for (Index t = 0; t < cfg.lookback; ++t) h = rnn_cell(p.cell, hour_slice(window, t), h);
                return linear(h, p.head.W, p.head.b);
            },
            [&](const LstmParams& p) {
                Tensor h = Tensor::zeros({B, hidden});
                Tensor c = Tensor::zeros({B, hidden});
                for (Index t = 0; t < cfg.lookback; ++t)
                    std::tie(h, c) = lstm_cell(p.cell, hour_slice(window, t), h, c);
                return linear(h, p.head.W, p.head.b);
            },
            [&](const GruParams& p) {
                Tensor h = Tensor::zeros({B, hidden});
                for (Index t = 0; t < cfg.lookback; ++t) h = gru_cell(p.cell, hour_slice(window, t), h);
                return linear(h, p.head.W, p.head.b);
            },
            [&](const A3tgcnParams& p) { return a3tgcn_forward(p, window); },
        },
        params.arch);
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

namespace {

/// Decimal with 17 significant digits: lossless for binary64.
std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_array(std::ostream& os, const double* data, Index n) {
    os << '[';
    for (Index i = 0; i < n; ++i) {
        if (i) os << ',';
        os << format_double(data[i]);
    }
    os << ']';
}

nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"kind", to_string(c.kind)},
            {"num_nodes", c.num_nodes},
            {"node_feature_dim", c.node_feature_dim},
            {"input_dim", c.input_dim},
            {"lookback", c.lookback},
            {"hidden_dim", c.hidden_dim},
            {"output_dim", c.output_dim},
            {"horizon", c.horizon},
            {"gcn_dim", c.gcn_dim},
            {"attention_dim", c.attention_dim}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.kind = parse_model_kind(j.at("kind").get<std::string>());
    c.num_nodes = j.at("num_nodes").get<int>();
    c.node_feature_dim = j.at("node_feature_dim").get<int>();
    c.input_dim = j.at("input_dim").get<int>();
    c.lookback = j.at("lookback").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.output_dim = j.at("output_dim").get<int>();
    c.horizon = j.at("horizon").get<int>();
    c.gcn_dim = j.at("gcn_dim").get<int>();
    c.attention_dim = j.at("attention_dim").get<int>();
    c.validate();
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, ModelParams& params, std::uint64_t seed,
                     const std::map<std::string, std::vector<double>>& extras,
                     const std::string& experiment_json) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);

    os << "{\n\"format\": \"gridcast-checkpoint-v1\",\n";
    os << "\"config\": " << config_to_json(params.config).dump() << ",\n";
    if (!experiment_json.empty()) os << "\"experiment\": " << experiment_json << ",\n";
    os << "\"seed\": " << seed << ",\n";

    os << "\"constants\": {";
    if (const auto* p = std::get_if<A3tgcnParams>(&params.arch)) {
        os << "\"gcn.A_hat\": ";
        write_array(os, p->gcn.a_hat->data(), p->gcn.a_hat->size());
    }
    os << "},\n";

    os << "\"params\": {";
    bool first = true;
    params.visit([&](const std::string& name, Tensor& t) {
        if (!first) os << ',';
        first = false;
        os << "\n\"" << name << "\": ";
        write_array(os, t.value().data(), t.numel());
    });
    os << "\n},\n";

    os << "\"extras\": {";
    first = true;
    for (const auto& [name, values] : extras) {
        if (!first) os << ',';
        first = false;
        os << "\n\"" << name << "\": ";
        write_array(os, values.data(), static_cast<Index>(values.size()));
    }
    os << "\n}\n}\n";
    if (!os) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    nlohmann::json j = nlohmann::json::parse(is);
    if (j.value("format", "") != "gridcast-checkpoint-v1")
        throw std::runtime_error("unrecognized checkpoint format in " + path);

    Checkpoint ck;
    ck.seed = j.at("seed").get<std::uint64_t>();
    ModelConfig config = config_from_json(j.at("config"));

    MatrixRM a_hat;
    const MatrixRM* a_hat_ptr = nullptr;
    if (config.kind == ModelKind::a3tgcn) {
        auto flat = j.at("constants").at("gcn.A_hat").get<std::vector<double>>();
        const Index n = config.num_nodes;
        if (flat.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(n))
            throw std::runtime_error("checkpoint adjacency has wrong size in " + path);
        a_hat = Eigen::Map<const MatrixRM>(flat.data(), n, n);
        a_hat_ptr = &a_hat;
    }

    ck.params = init_params(config, 0, a_hat_ptr);
    const auto& arrays = j.at("params");
    ck.params.visit([&](const std::string& name, Tensor& t) {
        auto values = arrays.at(name).get<std::vector<double>>();
        if (static_cast<Index>(values.size()) != t.numel())
            throw std::runtime_error("checkpoint array '" + name + "' has wrong length in " + path);
        for (Index i = 0; i < t.numel(); ++i) t.value_mut()[i] = values[static_cast<std::size_t>(i)];
    });

    if (j.contains("extras"))
        for (const auto& [name, arr] : j.at("extras").items())
            ck.extras[name] = arr.get<std::vector<double>>();
    if (j.contains("experiment")) ck.experiment_json = j.at("experiment").dump();
    return ck;
}

}  // namespace gridcast
