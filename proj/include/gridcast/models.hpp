#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "gridcast/tensor.hpp"

namespace gridcast {

enum class ModelKind { fnn, rnn, lstm, gru, a3tgcn };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);
std::vector<ModelKind> all_model_kinds();

/// Architecture hyperparameters shared by the five forecasters. The feature
/// axis packs active then reactive power per node: [P_0..P_{N-1}, Q_0..Q_{N-1}].
struct ModelConfig {
    ModelKind kind = ModelKind::fnn;
    int num_nodes = 44;
    int node_feature_dim = 2;
    int input_dim = 88;
    int lookback = 24;
    int hidden_dim = 64;
    int output_dim = 88;
    int horizon = 1;
    int gcn_dim = 8;        // per-node width after graph convolution
    int attention_dim = 32;

    int head_dim() const { return horizon * output_dim; }
    void validate() const;
};

struct DenseLayer {
    Tensor W;  // out x in
    Tensor b;  // out
};

struct GateParams {
    Tensor W_x;  // hidden x in
    Tensor W_h;  // hidden x hidden
    Tensor b;    // hidden
};

using RnnCellParams = GateParams;

struct LstmCellParams {
    GateParams forget, input, output, cand;
};

struct GruCellParams {
    GateParams update, reset, cand;
};

struct GcnLayerParams {
    Tensor W;  // gcn_dim x node_feature_dim
    std::shared_ptr<const MatrixRM> a_hat;  // normalized adjacency, not learnable
};

struct AttentionParams {
    Tensor W1;  // attention_dim x hidden
    Tensor b1;  // attention_dim
    Tensor w2;  // attention_dim
};

struct FnnParams {
    DenseLayer hidden, head;
};
struct RnnParams {
    RnnCellParams cell;
    DenseLayer head;
};
struct LstmParams {
    LstmCellParams cell;
    DenseLayer head;
};
struct GruParams {
    GruCellParams cell;
    DenseLayer head;
};
struct A3tgcnParams {
    GcnLayerParams gcn;
    GruCellParams gru;
    AttentionParams attention;
    DenseLayer head;
};

/// Learnable state of one forecaster plus its configuration.
struct ModelParams {
    ModelConfig config;
    std::variant<FnnParams, RnnParams, LstmParams, GruParams, A3tgcnParams> arch;

    /// Visit every trainable tensor in canonical order with its canonical name.
    void visit(const std::function<void(const std::string&, Tensor&)>& fn);
    std::vector<Tensor*> trainable();
    std::size_t parameter_count();
    void zero_grads();

    ModelParams clone() const;     // deep copy, keeps gradient tracking
    ModelParams detached() const;  // deep copy with gradient tracking stripped
};

/// Glorot-uniform weights, zero biases, deterministic per seed. A3T-GCN needs
/// the normalized feeder adjacency; when absent it falls back to the identity
/// (self-loops only).
ModelParams init_params(const ModelConfig& config, std::uint64_t seed, const MatrixRM* a_hat = nullptr);

/// D^(-1/2) (A+I) D^(-1/2) over an undirected edge list; rejects self-loops,
/// duplicate edges and out-of-range endpoints.
MatrixRM normalize_adjacency(const std::vector<std::pair<int, int>>& edges, int num_nodes);

Tensor fnn_forward(const FnnParams& params, const Tensor& window);
Tensor rnn_cell(const RnnCellParams& params, const Tensor& x_t, const Tensor& h_prev);
std::pair<Tensor, Tensor> lstm_cell(const LstmCellParams& params, const Tensor& x_t, const Tensor& h_prev,
                                    const Tensor& c_prev);
Tensor gru_cell(const GruCellParams& params, const Tensor& x_t, const Tensor& h_prev);

/// ReLU(A_hat X W^T) applied per batch element; x is {B, N, F}.
Tensor gcn_layer(const GcnLayerParams& params, const Tensor& x);

/// Optionally reports the temporal attention weights {B, lookback} via
/// attention_out.
Tensor a3tgcn_forward(const A3tgcnParams& params, const Tensor& window, Tensor* attention_out = nullptr);

/// Forward dispatch for any kind: window {B, lookback, input_dim} to
/// next-step prediction {B, horizon * output_dim}.
Tensor unroll_and_predict(const ModelParams& params, const Tensor& window);

// ---------------------------------------------------------------------------
// Checkpoint file format
// ---------------------------------------------------------------------------

struct Checkpoint {
    ModelParams params;
    std::uint64_t seed = 0;
    std::map<std::string, std::vector<double>> extras;
    std::string experiment_json;  // embedded run description, when present
};

/// Single JSON document: config, seed, flat parameter arrays keyed by
/// canonical names (decimal, 17 significant digits), non-learnable constants,
/// caller-supplied extra arrays, and an optional embedded run description.
void save_checkpoint(const std::string& path, ModelParams& params, std::uint64_t seed,
                     const std::map<std::string, std::vector<double>>& extras = {},
                     const std::string& experiment_json = "");
Checkpoint load_checkpoint(const std::string& path);

}  // namespace gridcast
