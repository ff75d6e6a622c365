#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "procgt/encodings.hpp"
#include "procgt/graphbuild.hpp"

namespace procgt {

inline constexpr const char* kCheckpointMagic = "PROCGTCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class Readout { Mean, Sum };

struct ModelConfig {
    std::size_t hidden_dim = 64;
    std::size_t num_layers = 5;
    std::size_t num_heads = 8;
    std::size_t d_pe = 8;
    std::size_t d_se = 8;
    std::size_t edge_encoder_layers = 2; // 1 or 2
    double mpnn_dropout = 0.0;
    double attn_dropout = 0.5;
    Readout readout = Readout::Mean;
    bool residual_and_norm = true;
    std::uint64_t seed = 0;
    std::size_t vocab_size = 0;          // event-class ids incl. the unknown id
    std::size_t edge_feature_length = 0;

    std::size_t head_dim() const { return hidden_dim / num_heads; }
    void validate() const; // throws Usage on violated invariants
};

// Dense layer y = x W^T + b with w: out x in, b: out x 1.
struct LinearParams {
    Eigen::MatrixXd w;
    Eigen::MatrixXd b;
};

struct LayerNormParams {
    Eigen::MatrixXd gamma; // d x 1
    Eigen::MatrixXd beta;  // d x 1
};

struct GpsLayerParams {
    Eigen::MatrixXd gin_eps; // 1 x 1
    LinearParams edge_term;  // hidden -> hidden, applied to edge embeddings
    LinearParams gin_fc1, gin_fc2;
    LinearParams attn_q, attn_k, attn_v, attn_o;
    LinearParams mlp_fc1, mlp_fc2;
    LayerNormParams norm_mpnn, norm_attn, norm_out;
};

struct ModelParams {
    Eigen::MatrixXd node_embedding;        // vocab x hidden
    std::vector<LinearParams> edge_encoder; // 1-2 layers, first maps edge features -> hidden
    LinearParams pe_fc1, pe_fc2;           // d_pe -> hidden -> hidden
    LinearParams se_fc1, se_fc2;           // d_se -> hidden -> hidden
    std::vector<GpsLayerParams> layers;
    LinearParams head_fc1, head_fc2;       // hidden -> hidden -> 1

    // Enumerates every parameter array in a fixed order as (name, matrix).
    template <class F> void visit(F&& f) { visit_impl(*this, f); }
    template <class F> void visit(F&& f) const { visit_impl(*this, f); }

    void set_zero();
    bool all_finite() const;
    std::size_t total_parameters() const;

  private:
    template <class Self, class F> static void visit_impl(Self& self, F& f) {
        f("node_embedding", self.node_embedding);
        for (std::size_t i = 0; i < self.edge_encoder.size(); ++i) {
            const std::string p = "edge_encoder" + std::to_string(i);
            f(p + ".w", self.edge_encoder[i].w);
            f(p + ".b", self.edge_encoder[i].b);
        }
        auto lin = [&](const std::string& name, auto& l) {
            f(name + ".w", l.w);
            f(name + ".b", l.b);
        };
        auto norm = [&](const std::string& name, auto& n) {
            f(name + ".gamma", n.gamma);
            f(name + ".beta", n.beta);
        };
        lin("pe_fc1", self.pe_fc1);
        lin("pe_fc2", self.pe_fc2);
        lin("se_fc1", self.se_fc1);
        lin("se_fc2", self.se_fc2);
        for (std::size_t i = 0; i < self.layers.size(); ++i) {
            auto& ly = self.layers[i];
            const std::string p = "layer" + std::to_string(i) + ".";
            f(p + "gin_eps", ly.gin_eps);
            lin(p + "edge_term", ly.edge_term);
            lin(p + "gin_fc1", ly.gin_fc1);
            lin(p + "gin_fc2", ly.gin_fc2);
            lin(p + "attn_q", ly.attn_q);
            lin(p + "attn_k", ly.attn_k);
            lin(p + "attn_v", ly.attn_v);
            lin(p + "attn_o", ly.attn_o);
            lin(p + "mlp_fc1", ly.mlp_fc1);
            lin(p + "mlp_fc2", ly.mlp_fc2);
            norm(p + "norm_mpnn", ly.norm_mpnn);
            norm(p + "norm_attn", ly.norm_attn);
            norm(p + "norm_out", ly.norm_out);
        }
        lin("head_fc1", self.head_fc1);
        lin("head_fc2", self.head_fc2);
    }
};

// Allocates every array at the shapes the config dictates, zero-filled.
ModelParams make_params(const ModelConfig& config);

// Seeded initialization: dense weights uniform +-sqrt(6/(fan_in+fan_out)),
// embedding rows normal(0, 0.02), biases and GIN epsilon zero, norms identity.
ModelParams init_params(const ModelConfig& config);

// Variable-size graphs batched by concatenation; per-graph node ranges keep
// attention and readout from crossing graph boundaries.
struct BatchedGraphs {
    std::vector<int> node_class_ids;          // concatenated, length n
    std::vector<std::pair<int, int>> edges;   // node indices offset per graph
    Eigen::MatrixXd edge_features;            // m x edge_feature_length
    Eigen::MatrixXd lap_pe;                   // n x d_pe
    Eigen::MatrixXd rwse;                     // n x d_se
    std::vector<std::size_t> node_offsets;    // length G+1
    std::vector<double> targets;              // length G

    std::size_t graph_count() const { return targets.size(); }
    std::size_t node_count() const { return node_class_ids.size(); }
    std::size_t edge_count() const { return edges.size(); }
};

BatchedGraphs make_batch(const std::vector<const PrefixGraph*>& graphs,
                         const std::vector<const GraphEncodings*>& encodings,
                         const ModelConfig& config);

// Input embeddings: X0[v] = embedding[classId(v)] + peMlp(lapPe[v]) + seMlp(rwse[v]);
// Z0 = edge encoder applied to raw edge features.
struct Embedded {
    Eigen::MatrixXd x0; // n x hidden
    Eigen::MatrixXd z0; // m x hidden
};
Embedded embed(const BatchedGraphs& batch, const ModelParams& params, const ModelConfig& config);

// One hybrid layer: GIN-style message passing with edge features, per-graph
// multi-head self-attention, summed and pushed through a two-layer network;
// residual connections and layer normalization when configured. Edge
// embeddings pass through unchanged.
Eigen::MatrixXd gps_layer(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z,
                          const BatchedGraphs& batch, const GpsLayerParams& p,
                          const ModelConfig& config, bool training_mode,
                          std::uint64_t dropout_seed, std::size_t layer_index);

struct ForwardResult {
    std::vector<double> predictions; // one normalized remaining time per graph
    Eigen::MatrixXd pooled;          // G x hidden readout, pre-head
};

ForwardResult forward(const BatchedGraphs& batch, const ModelParams& params,
                      const ModelConfig& config, bool training_mode,
                      std::uint64_t dropout_seed = 0);

// L1 loss against batch targets plus exact gradients for every parameter
// array under the dropout masks drawn from dropout_seed. grads must have the
// shapes of params; it is overwritten.
double backward(const BatchedGraphs& batch, const ModelParams& params,
                const ModelConfig& config, std::uint64_t dropout_seed, ModelParams& grads);

double l1_loss(const std::vector<double>& predictions, const std::vector<double>& targets);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

void save_checkpoint(const ModelParams& params, const ModelConfig& config,
                     const std::string& path);
struct Checkpoint {
    ModelConfig config;
    ModelParams params;
};
Checkpoint load_checkpoint(const std::string& path);

} // namespace procgt
