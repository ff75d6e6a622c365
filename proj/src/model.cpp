#include "procgt/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "procgt/errors.hpp"
#include "procgt/rng.hpp"

namespace procgt {

namespace {

using Json = nlohmann::json;

constexpr double kLnEps = 1e-5;

Eigen::MatrixXd linear(const Eigen::MatrixXd& x, const LinearParams& p) {
    return (x * p.w.transpose()).rowwise() + p.b.col(0).transpose();
}

// Accumulates into grad; returns gradient with respect to the input.
Eigen::MatrixXd linear_backward(const Eigen::MatrixXd& x, const LinearParams& p,
                                const Eigen::MatrixXd& dy, LinearParams& grad) {
    grad.w += dy.transpose() * x;
    grad.b.col(0) += dy.colwise().sum().transpose();
    return dy * p.w;
}

Eigen::MatrixXd relu(const Eigen::MatrixXd& x) { return x.cwiseMax(0.0); }

Eigen::MatrixXd relu_backward(const Eigen::MatrixXd& pre, const Eigen::MatrixXd& dy) {
    return ((pre.array() > 0.0).cast<double>() * dy.array()).matrix();
}

struct LnTape {
    Eigen::MatrixXd xhat;
    Eigen::VectorXd inv_std;
};

Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const LayerNormParams& p, LnTape& tape) {
    const auto n = x.rows();
    const auto d = x.cols();
    tape.xhat.resize(n, d);
    tape.inv_std.resize(n);
    Eigen::MatrixXd y(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mean = x.row(i).mean();
        const double var = (x.row(i).array() - mean).square().mean();
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        tape.inv_std(i) = inv;
        tape.xhat.row(i) = ((x.row(i).array() - mean) * inv).matrix();
        y.row(i) = (tape.xhat.row(i).array() * p.gamma.col(0).transpose().array() +
                    p.beta.col(0).transpose().array())
                       .matrix();
    }
    return y;
}

Eigen::MatrixXd layer_norm_backward(const LnTape& tape, const LayerNormParams& p,
                                    const Eigen::MatrixXd& dy, LayerNormParams& grad) {
    const auto n = dy.rows();
    const auto d = dy.cols();
    for (Eigen::Index i = 0; i < n; ++i) {
        grad.gamma.col(0).array() +=
            dy.row(i).transpose().array() * tape.xhat.row(i).transpose().array();
        grad.beta.col(0) += dy.row(i).transpose();
    }
    Eigen::MatrixXd dx(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::RowVectorXd dxhat =
            (dy.row(i).array() * p.gamma.col(0).transpose().array()).matrix();
        const double m1 = dxhat.mean();
        const double m2 = (dxhat.array() * tape.xhat.row(i).array()).mean();
        dx.row(i) =
            (tape.inv_std(i) * (dxhat.array() - m1 - tape.xhat.row(i).array() * m2)).matrix();
    }
    return dx;
}

// Inverted dropout: kept entries scale by 1/(1-p); the mask is a pure
// function of the seed so training replays are exact.
Eigen::MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double p,
                             std::uint64_t seed) {
    Eigen::MatrixXd mask(rows, cols);
    Rng rng(seed);
    const double scale = 1.0 / (1.0 - p);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            mask(i, j) = rng.next_double() < p ? 0.0 : scale;
    return mask;
}

struct LayerTape {
    Eigen::MatrixXd x_in;
    // GIN block
    Eigen::MatrixXd edge_term_out, msg_pre, agg, gin_in;
    Eigen::MatrixXd gin_h_pre, gin_h, gin_out;
    Eigen::MatrixXd gin_mask, gin_dropped;
    // attention block
    Eigen::MatrixXd q, k, v, attn_concat, attn_out;
    std::vector<std::vector<Eigen::MatrixXd>> probs; // [graph][head], rows softmaxed
    Eigen::MatrixXd attn_mask, attn_dropped;
    // combination
    LnTape ln_mpnn, ln_attn, ln_out;
    Eigen::MatrixXd x_m, x_t, s;
    Eigen::MatrixXd mlp_h_pre, mlp_h, mlp_out;
    Eigen::MatrixXd x_out;
};

struct EmbedTape {
    Eigen::MatrixXd pe_h_pre, pe_h, se_h_pre, se_h;
    Eigen::MatrixXd edge_h_pre, edge_h; // only with a 2-layer edge encoder
    Eigen::MatrixXd x0, z0;
};

struct ModelTape {
    EmbedTape emb;
    std::vector<LayerTape> layers;
    Eigen::MatrixXd pooled;
    Eigen::MatrixXd head_h_pre, head_h;
    Eigen::VectorXd yhat;
};

EmbedTape embed_forward(const BatchedGraphs& batch, const ModelParams& params,
                        const ModelConfig& config) {
    EmbedTape t;
    const std::size_t n = batch.node_count();
    t.x0.resize(n, config.hidden_dim);
    for (std::size_t i = 0; i < n; ++i) {
        const int cid = batch.node_class_ids[i];
        if (cid < 0 || static_cast<std::size_t>(cid) >= config.vocab_size)
            throw Error(ErrorKind::ShapeMismatch,
                        "node class id " + std::to_string(cid) + " outside vocabulary");
        t.x0.row(i) = params.node_embedding.row(cid);
    }
    t.pe_h_pre = linear(batch.lap_pe, params.pe_fc1);
    t.pe_h = relu(t.pe_h_pre);
    t.x0 += linear(t.pe_h, params.pe_fc2);
    t.se_h_pre = linear(batch.rwse, params.se_fc1);
    t.se_h = relu(t.se_h_pre);
    t.x0 += linear(t.se_h, params.se_fc2);

    if (params.edge_encoder.size() == 2) {
        t.edge_h_pre = linear(batch.edge_features, params.edge_encoder[0]);
        t.edge_h = relu(t.edge_h_pre);
        t.z0 = linear(t.edge_h, params.edge_encoder[1]);
    } else {
        t.z0 = linear(batch.edge_features, params.edge_encoder[0]);
    }
    return t;
}

LayerTape layer_forward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z,
                        const BatchedGraphs& batch, const GpsLayerParams& p,
                        const ModelConfig& config, bool training_mode,
                        std::uint64_t dropout_seed, std::size_t layer_index) {
    LayerTape t;
    t.x_in = x;
    const auto n = x.rows();
    const auto d = x.cols();

    // GIN with edge features: aggregate rectified (source + edge term) messages.
    t.edge_term_out = linear(z, p.edge_term);
    t.msg_pre.resize(batch.edge_count(), d);
    t.agg = Eigen::MatrixXd::Zero(n, d);
    for (std::size_t e = 0; e < batch.edge_count(); ++e) {
        t.msg_pre.row(e) = x.row(batch.edges[e].first) + t.edge_term_out.row(e);
        t.agg.row(batch.edges[e].second) += t.msg_pre.row(e).cwiseMax(0.0);
    }
    const double eps = p.gin_eps(0, 0);
    t.gin_in = (1.0 + eps) * x + t.agg;
    t.gin_h_pre = linear(t.gin_in, p.gin_fc1);
    t.gin_h = relu(t.gin_h_pre);
    t.gin_out = linear(t.gin_h, p.gin_fc2);
    if (training_mode && config.mpnn_dropout > 0.0) {
        t.gin_mask = dropout_mask(n, d, config.mpnn_dropout,
                                  derive_seed(dropout_seed, "drop/mpnn", layer_index));
        t.gin_dropped = t.gin_out.cwiseProduct(t.gin_mask);
    } else {
        t.gin_dropped = t.gin_out;
    }

    // Per-graph multi-head self-attention; boundaries never crossed.
    t.q = linear(x, p.attn_q);
    t.k = linear(x, p.attn_k);
    t.v = linear(x, p.attn_v);
    t.attn_concat.resize(n, d);
    const std::size_t heads = config.num_heads;
    const std::size_t dk = config.head_dim();
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    t.probs.resize(batch.graph_count());
    for (std::size_t g = 0; g < batch.graph_count(); ++g) {
        const auto b = static_cast<Eigen::Index>(batch.node_offsets[g]);
        const auto ng = static_cast<Eigen::Index>(batch.node_offsets[g + 1]) - b;
        t.probs[g].resize(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            const auto c = static_cast<Eigen::Index>(h * dk);
            auto qh = t.q.block(b, c, ng, dk);
            auto kh = t.k.block(b, c, ng, dk);
            auto vh = t.v.block(b, c, ng, dk);
            Eigen::MatrixXd scores = qh * kh.transpose() * inv_sqrt_dk;
            Eigen::MatrixXd prob(ng, ng);
            for (Eigen::Index i = 0; i < ng; ++i) {
                Eigen::RowVectorXd row = scores.row(i);
                const double mx = row.maxCoeff();
                row = (row.array() - mx).exp().matrix();
                prob.row(i) = row / row.sum();
            }
            t.probs[g][h] = prob;
            t.attn_concat.block(b, c, ng, dk) = prob * vh;
        }
    }
    t.attn_out = linear(t.attn_concat, p.attn_o);
    if (training_mode && config.attn_dropout > 0.0) {
        t.attn_mask = dropout_mask(n, d, config.attn_dropout,
                                   derive_seed(dropout_seed, "drop/attn", layer_index));
        t.attn_dropped = t.attn_out.cwiseProduct(t.attn_mask);
    } else {
        t.attn_dropped = t.attn_out;
    }

    if (config.residual_and_norm) {
        t.x_m = layer_norm(x + t.gin_dropped, p.norm_mpnn, t.ln_mpnn);
        t.x_t = layer_norm(x + t.attn_dropped, p.norm_attn, t.ln_attn);
        t.s = t.x_m + t.x_t;
        t.mlp_h_pre = linear(t.s, p.mlp_fc1);
        t.mlp_h = relu(t.mlp_h_pre);
        t.mlp_out = linear(t.mlp_h, p.mlp_fc2);
        t.x_out = layer_norm(t.s + t.mlp_out, p.norm_out, t.ln_out);
    } else {
        t.x_m = t.gin_dropped;
        t.x_t = t.attn_dropped;
        t.s = t.x_m + t.x_t;
        t.mlp_h_pre = linear(t.s, p.mlp_fc1);
        t.mlp_h = relu(t.mlp_h_pre);
        t.mlp_out = linear(t.mlp_h, p.mlp_fc2);
        t.x_out = t.mlp_out;
    }
    return t;
}

// Gradient of one layer. dx_out is the loss gradient at the layer output;
// returns the gradient at the layer input and accumulates dz and parameter
// gradients.
Eigen::MatrixXd layer_backward(const LayerTape& t, const Eigen::MatrixXd& z,
                               const BatchedGraphs& batch, const GpsLayerParams& p,
                               const ModelConfig& config, const Eigen::MatrixXd& dx_out,
                               Eigen::MatrixXd& dz, GpsLayerParams& grad) {
    Eigen::MatrixXd ds;
    Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(t.x_in.rows(), t.x_in.cols());

    if (config.residual_and_norm) {
        Eigen::MatrixXd dsum3 = layer_norm_backward(t.ln_out, p.norm_out, dx_out, grad.norm_out);
        Eigen::MatrixXd dmlp_h = linear_backward(t.mlp_h, p.mlp_fc2, dsum3, grad.mlp_fc2);
        Eigen::MatrixXd dmlp_h_pre = relu_backward(t.mlp_h_pre, dmlp_h);
        ds = dsum3 + linear_backward(t.s, p.mlp_fc1, dmlp_h_pre, grad.mlp_fc1);
    } else {
        Eigen::MatrixXd dmlp_h = linear_backward(t.mlp_h, p.mlp_fc2, dx_out, grad.mlp_fc2);
        Eigen::MatrixXd dmlp_h_pre = relu_backward(t.mlp_h_pre, dmlp_h);
        ds = linear_backward(t.s, p.mlp_fc1, dmlp_h_pre, grad.mlp_fc1);
    }

    // ds splits equally into the MPNN and attention branches.
    Eigen::MatrixXd d_gin_dropped, d_attn_dropped;
    if (config.residual_and_norm) {
        Eigen::MatrixXd dsum1 = layer_norm_backward(t.ln_mpnn, p.norm_mpnn, ds, grad.norm_mpnn);
        Eigen::MatrixXd dsum2 = layer_norm_backward(t.ln_attn, p.norm_attn, ds, grad.norm_attn);
        dx += dsum1 + dsum2;
        d_gin_dropped = std::move(dsum1);
        d_attn_dropped = std::move(dsum2);
    } else {
        d_gin_dropped = ds;
        d_attn_dropped = ds;
    }

    // Attention branch.
    Eigen::MatrixXd d_attn_out = t.attn_mask.size() > 0
                                     ? d_attn_dropped.cwiseProduct(t.attn_mask).eval()
                                     : d_attn_dropped;
    Eigen::MatrixXd d_concat = linear_backward(t.attn_concat, p.attn_o, d_attn_out, grad.attn_o);
    Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(t.q.rows(), t.q.cols());
    Eigen::MatrixXd dk_m = Eigen::MatrixXd::Zero(t.k.rows(), t.k.cols());
    Eigen::MatrixXd dv = Eigen::MatrixXd::Zero(t.v.rows(), t.v.cols());
    const std::size_t heads = config.num_heads;
    const std::size_t dk = config.head_dim();
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    for (std::size_t g = 0; g < batch.graph_count(); ++g) {
        const auto b = static_cast<Eigen::Index>(batch.node_offsets[g]);
        const auto ng = static_cast<Eigen::Index>(batch.node_offsets[g + 1]) - b;
        for (std::size_t h = 0; h < heads; ++h) {
            const auto c = static_cast<Eigen::Index>(h * dk);
            const Eigen::MatrixXd& prob = t.probs[g][h];
            auto qh = t.q.block(b, c, ng, dk);
            auto kh = t.k.block(b, c, ng, dk);
            auto vh = t.v.block(b, c, ng, dk);
            auto d_oh = d_concat.block(b, c, ng, dk);
            Eigen::MatrixXd dprob = d_oh * vh.transpose();
            dv.block(b, c, ng, dk) += prob.transpose() * d_oh;
            // softmax backward, rows independent
            Eigen::MatrixXd dscore(ng, ng);
            for (Eigen::Index i = 0; i < ng; ++i) {
                const double dot = dprob.row(i).dot(prob.row(i));
                dscore.row(i) =
                    (prob.row(i).array() * (dprob.row(i).array() - dot)).matrix();
            }
            dscore *= inv_sqrt_dk;
            dq.block(b, c, ng, dk) += dscore * kh;
            dk_m.block(b, c, ng, dk) += dscore.transpose() * qh;
        }
    }
    dx += linear_backward(t.x_in, p.attn_q, dq, grad.attn_q);
    dx += linear_backward(t.x_in, p.attn_k, dk_m, grad.attn_k);
    dx += linear_backward(t.x_in, p.attn_v, dv, grad.attn_v);

    // GIN branch.
    Eigen::MatrixXd d_gin_out = t.gin_mask.size() > 0
                                    ? d_gin_dropped.cwiseProduct(t.gin_mask).eval()
                                    : d_gin_dropped;
    Eigen::MatrixXd d_gin_h = linear_backward(t.gin_h, p.gin_fc2, d_gin_out, grad.gin_fc2);
    Eigen::MatrixXd d_gin_h_pre = relu_backward(t.gin_h_pre, d_gin_h);
    Eigen::MatrixXd d_gin_in = linear_backward(t.gin_in, p.gin_fc1, d_gin_h_pre, grad.gin_fc1);
    const double eps = p.gin_eps(0, 0);
    grad.gin_eps(0, 0) += (d_gin_in.array() * t.x_in.array()).sum();
    dx += (1.0 + eps) * d_gin_in;
    Eigen::MatrixXd d_msg_pre(batch.edge_count(), t.x_in.cols());
    for (std::size_t e = 0; e < batch.edge_count(); ++e) {
        Eigen::RowVectorXd d_msg = d_gin_in.row(batch.edges[e].second);
        d_msg_pre.row(e) =
            ((t.msg_pre.row(e).array() > 0.0).cast<double>() * d_msg.array()).matrix();
        dx.row(batch.edges[e].first) += d_msg_pre.row(e);
    }
    dz += linear_backward(z, p.edge_term, d_msg_pre, grad.edge_term);
    return dx;
}

ModelTape forward_with_tape(const BatchedGraphs& batch, const ModelParams& params,
                            const ModelConfig& config, bool training_mode,
                            std::uint64_t dropout_seed) {
    ModelTape tape;
    tape.emb = embed_forward(batch, params, config);
    Eigen::MatrixXd x = tape.emb.x0;
    tape.layers.reserve(config.num_layers);
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        tape.layers.push_back(layer_forward(x, tape.emb.z0, batch, params.layers[l], config,
                                            training_mode, dropout_seed, l));
        x = tape.layers.back().x_out;
    }
    const std::size_t g_count = batch.graph_count();
    tape.pooled.resize(g_count, config.hidden_dim);
    for (std::size_t g = 0; g < g_count; ++g) {
        const auto b = static_cast<Eigen::Index>(batch.node_offsets[g]);
        const auto ng = static_cast<Eigen::Index>(batch.node_offsets[g + 1]) - b;
        Eigen::RowVectorXd sum = x.middleRows(b, ng).colwise().sum();
        tape.pooled.row(g) =
            config.readout == Readout::Mean ? (sum / static_cast<double>(ng)).eval() : sum;
    }
    tape.head_h_pre = linear(tape.pooled, params.head_fc1);
    tape.head_h = relu(tape.head_h_pre);
    tape.yhat = linear(tape.head_h, params.head_fc2).col(0);
    return tape;
}

} // namespace

void ModelConfig::validate() const {
    if (hidden_dim == 0 || num_layers == 0 || num_heads == 0 || d_pe == 0 || d_se == 0)
        throw Error(ErrorKind::Usage, "model dimensions must be positive");
    if (hidden_dim % num_heads != 0)
        throw Error(ErrorKind::Usage, "hidden_dim must be divisible by num_heads");
    if (edge_encoder_layers != 1 && edge_encoder_layers != 2)
        throw Error(ErrorKind::Usage, "edge_encoder_layers must be 1 or 2");
    if (mpnn_dropout < 0.0 || mpnn_dropout >= 1.0 || attn_dropout < 0.0 || attn_dropout >= 1.0)
        throw Error(ErrorKind::Usage, "dropout rates must lie in [0, 1)");
}

void ModelParams::set_zero() {
    visit([](const std::string&, Eigen::MatrixXd& m) { m.setZero(); });
}

bool ModelParams::all_finite() const {
    bool ok = true;
    visit([&](const std::string&, const Eigen::MatrixXd& m) { ok = ok && m.allFinite(); });
    return ok;
}

std::size_t ModelParams::total_parameters() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Eigen::MatrixXd& m) { n += m.size(); });
    return n;
}

ModelParams make_params(const ModelConfig& config) {
    config.validate();
    if (config.vocab_size == 0 || config.edge_feature_length == 0)
        throw Error(ErrorKind::Usage, "vocab_size and edge_feature_length must be set");
    const auto d = static_cast<Eigen::Index>(config.hidden_dim);
    ModelParams p;
    auto lin = [](Eigen::Index out, Eigen::Index in) {
        return LinearParams{Eigen::MatrixXd::Zero(out, in), Eigen::MatrixXd::Zero(out, 1)};
    };
    auto norm = [d]() {
        return LayerNormParams{Eigen::MatrixXd::Zero(d, 1), Eigen::MatrixXd::Zero(d, 1)};
    };
    p.node_embedding = Eigen::MatrixXd::Zero(config.vocab_size, d);
    p.edge_encoder.push_back(lin(d, static_cast<Eigen::Index>(config.edge_feature_length)));
    if (config.edge_encoder_layers == 2) p.edge_encoder.push_back(lin(d, d));
    p.pe_fc1 = lin(d, static_cast<Eigen::Index>(config.d_pe));
    p.pe_fc2 = lin(d, d);
    p.se_fc1 = lin(d, static_cast<Eigen::Index>(config.d_se));
    p.se_fc2 = lin(d, d);
    p.layers.resize(config.num_layers);
    for (auto& ly : p.layers) {
        ly.gin_eps = Eigen::MatrixXd::Zero(1, 1);
        ly.edge_term = lin(d, d);
        ly.gin_fc1 = lin(d, d);
        ly.gin_fc2 = lin(d, d);
        ly.attn_q = lin(d, d);
        ly.attn_k = lin(d, d);
        ly.attn_v = lin(d, d);
        ly.attn_o = lin(d, d);
        ly.mlp_fc1 = lin(d, d);
        ly.mlp_fc2 = lin(d, d);
        ly.norm_mpnn = norm();
        ly.norm_attn = norm();
        ly.norm_out = norm();
    }
    p.head_fc1 = lin(d, d);
    p.head_fc2 = lin(1, d);
    return p;
}

ModelParams init_params(const ModelConfig& config) {
    ModelParams p = make_params(config);
    Rng rng(derive_seed(config.seed, "model/init"));
    for (Eigen::Index r = 0; r < p.node_embedding.rows(); ++r)
        for (Eigen::Index c = 0; c < p.node_embedding.cols(); ++c)
            p.node_embedding(r, c) = rng.normal(0.0, 0.02);
    auto init_lin = [&](LinearParams& l) {
        const double lim = std::sqrt(6.0 / static_cast<double>(l.w.rows() + l.w.cols()));
        for (Eigen::Index r = 0; r < l.w.rows(); ++r)
            for (Eigen::Index c = 0; c < l.w.cols(); ++c) l.w(r, c) = rng.uniform(-lim, lim);
        l.b.setZero();
    };
    for (auto& e : p.edge_encoder) init_lin(e);
    init_lin(p.pe_fc1);
    init_lin(p.pe_fc2);
    init_lin(p.se_fc1);
    init_lin(p.se_fc2);
    for (auto& ly : p.layers) {
        ly.gin_eps.setZero();
        init_lin(ly.edge_term);
        init_lin(ly.gin_fc1);
        init_lin(ly.gin_fc2);
        init_lin(ly.attn_q);
        init_lin(ly.attn_k);
        init_lin(ly.attn_v);
        init_lin(ly.attn_o);
        init_lin(ly.mlp_fc1);
        init_lin(ly.mlp_fc2);
        ly.norm_mpnn.gamma.setOnes();
        ly.norm_mpnn.beta.setZero();
        ly.norm_attn.gamma.setOnes();
        ly.norm_attn.beta.setZero();
        ly.norm_out.gamma.setOnes();
        ly.norm_out.beta.setZero();
    }
    init_lin(p.head_fc1);
    init_lin(p.head_fc2);
    return p;
}

BatchedGraphs make_batch(const std::vector<const PrefixGraph*>& graphs,
                         const std::vector<const GraphEncodings*>& encodings,
                         const ModelConfig& config) {
    if (graphs.size() != encodings.size())
        throw Error(ErrorKind::LengthMismatch, "graphs and encodings differ in length");
    BatchedGraphs b;
    std::size_t n = 0, m = 0;
    for (const auto* g : graphs) {
        n += g->node_count();
        m += g->edge_count();
    }
    b.node_class_ids.reserve(n);
    b.edges.reserve(m);
    b.edge_features.resize(m, static_cast<Eigen::Index>(config.edge_feature_length));
    b.lap_pe.resize(n, static_cast<Eigen::Index>(config.d_pe));
    b.rwse.resize(n, static_cast<Eigen::Index>(config.d_se));
    b.node_offsets.push_back(0);
    std::size_t edge_row = 0;
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
        const PrefixGraph& g = *graphs[gi];
        const GraphEncodings& enc = *encodings[gi];
        if (g.node_count() == 0)
            throw Error(ErrorKind::ShapeMismatch, "graph without nodes cannot be batched");
        if (enc.lap_pe.size() != g.node_count() || enc.rwse.size() != g.node_count())
            throw Error(ErrorKind::ShapeMismatch, "encodings do not match graph node count");
        const int base = static_cast<int>(b.node_class_ids.size());
        for (std::size_t i = 0; i < g.node_count(); ++i) {
            if (enc.lap_pe[i].size() != config.d_pe || enc.rwse[i].size() != config.d_se)
                throw Error(ErrorKind::ShapeMismatch, "encoding dimensions do not match config");
            const auto row = static_cast<Eigen::Index>(base + static_cast<int>(i));
            for (std::size_t c = 0; c < config.d_pe; ++c)
                b.lap_pe(row, static_cast<Eigen::Index>(c)) = enc.lap_pe[i][c];
            for (std::size_t c = 0; c < config.d_se; ++c)
                b.rwse(row, static_cast<Eigen::Index>(c)) = enc.rwse[i][c];
            b.node_class_ids.push_back(g.node_class_ids[i]);
        }
        for (std::size_t e = 0; e < g.edge_count(); ++e) {
            if (g.edge_features[e].size() != config.edge_feature_length)
                throw Error(ErrorKind::ShapeMismatch, "edge feature length does not match config");
            b.edges.emplace_back(g.edges[e].first + base, g.edges[e].second + base);
            for (std::size_t c = 0; c < config.edge_feature_length; ++c)
                b.edge_features(static_cast<Eigen::Index>(edge_row),
                                static_cast<Eigen::Index>(c)) = g.edge_features[e][c];
            ++edge_row;
        }
        b.node_offsets.push_back(b.node_class_ids.size());
        b.targets.push_back(g.target_normalized);
    }
    return b;
}

Embedded embed(const BatchedGraphs& batch, const ModelParams& params,
               const ModelConfig& config) {
    EmbedTape t = embed_forward(batch, params, config);
    return Embedded{std::move(t.x0), std::move(t.z0)};
}

Eigen::MatrixXd gps_layer(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z,
                          const BatchedGraphs& batch, const GpsLayerParams& p,
                          const ModelConfig& config, bool training_mode,
                          std::uint64_t dropout_seed, std::size_t layer_index) {
    return layer_forward(x, z, batch, p, config, training_mode, dropout_seed, layer_index)
        .x_out;
}

ForwardResult forward(const BatchedGraphs& batch, const ModelParams& params,
                      const ModelConfig& config, bool training_mode,
                      std::uint64_t dropout_seed) {
    ModelTape tape = forward_with_tape(batch, params, config, training_mode, dropout_seed);
    ForwardResult r;
    r.pooled = std::move(tape.pooled);
    r.predictions.assign(tape.yhat.data(), tape.yhat.data() + tape.yhat.size());
    for (double v : r.predictions)
        if (!std::isfinite(v))
            throw Error(ErrorKind::NonFiniteOutput, "non-finite model prediction");
    return r;
}

double l1_loss(const std::vector<double>& predictions, const std::vector<double>& targets) {
    if (predictions.size() != targets.size())
        throw Error(ErrorKind::LengthMismatch, "predictions and targets differ in length");
    if (predictions.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        sum += std::abs(predictions[i] - targets[i]);
    return sum / static_cast<double>(predictions.size());
}

double backward(const BatchedGraphs& batch, const ModelParams& params,
                const ModelConfig& config, std::uint64_t dropout_seed, ModelParams& grads) {
    grads.set_zero();
    ModelTape tape = forward_with_tape(batch, params, config, true, dropout_seed);
    const std::size_t g_count = batch.graph_count();
    double loss = 0.0;
    Eigen::MatrixXd dyhat(g_count, 1);
    for (std::size_t g = 0; g < g_count; ++g) {
        const double diff = tape.yhat(static_cast<Eigen::Index>(g)) - batch.targets[g];
        loss += std::abs(diff);
        // L1 subgradient, defined 0 at 0
        const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        dyhat(static_cast<Eigen::Index>(g), 0) = s / static_cast<double>(g_count);
    }
    loss /= static_cast<double>(g_count);
    if (!std::isfinite(loss)) throw Error(ErrorKind::NonFiniteGradient, "non-finite loss");

    Eigen::MatrixXd d_head_h = linear_backward(tape.head_h, params.head_fc2, dyhat, grads.head_fc2);
    Eigen::MatrixXd d_head_h_pre = relu_backward(tape.head_h_pre, d_head_h);
    Eigen::MatrixXd d_pooled =
        linear_backward(tape.pooled, params.head_fc1, d_head_h_pre, grads.head_fc1);

    Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(batch.node_count(), config.hidden_dim);
    for (std::size_t g = 0; g < g_count; ++g) {
        const auto b = static_cast<Eigen::Index>(batch.node_offsets[g]);
        const auto ng = static_cast<Eigen::Index>(batch.node_offsets[g + 1]) - b;
        Eigen::RowVectorXd grad_row = d_pooled.row(static_cast<Eigen::Index>(g));
        if (config.readout == Readout::Mean) grad_row /= static_cast<double>(ng);
        for (Eigen::Index i = 0; i < ng; ++i) dx.row(b + i) = grad_row;
    }

    Eigen::MatrixXd dz = Eigen::MatrixXd::Zero(batch.edge_count(), config.hidden_dim);
    for (std::size_t l = config.num_layers; l-- > 0;)
        dx = layer_backward(tape.layers[l], tape.emb.z0, batch, params.layers[l], config, dx,
                            dz, grads.layers[l]);

    // Embedding backward: dx is now the gradient at X0.
    for (std::size_t i = 0; i < batch.node_count(); ++i)
        grads.node_embedding.row(batch.node_class_ids[i]) += dx.row(static_cast<Eigen::Index>(i));
    Eigen::MatrixXd d_pe_h = linear_backward(tape.emb.pe_h, params.pe_fc2, dx, grads.pe_fc2);
    linear_backward(batch.lap_pe, params.pe_fc1, relu_backward(tape.emb.pe_h_pre, d_pe_h),
                    grads.pe_fc1);
    Eigen::MatrixXd d_se_h = linear_backward(tape.emb.se_h, params.se_fc2, dx, grads.se_fc2);
    linear_backward(batch.rwse, params.se_fc1, relu_backward(tape.emb.se_h_pre, d_se_h),
                    grads.se_fc1);

    if (params.edge_encoder.size() == 2) {
        Eigen::MatrixXd d_edge_h =
            linear_backward(tape.emb.edge_h, params.edge_encoder[1], dz, grads.edge_encoder[1]);
        linear_backward(batch.edge_features, params.edge_encoder[0],
                        relu_backward(tape.emb.edge_h_pre, d_edge_h), grads.edge_encoder[0]);
    } else {
        linear_backward(batch.edge_features, params.edge_encoder[0], dz, grads.edge_encoder[0]);
    }

    if (!grads.all_finite()) throw Error(ErrorKind::NonFiniteGradient, "non-finite gradient");
    return loss;
}

namespace {

Json config_to_json_obj(const ModelConfig& c) {
    Json j;
    j["hidden_dim"] = c.hidden_dim;
    j["num_layers"] = c.num_layers;
    j["num_heads"] = c.num_heads;
    j["d_pe"] = c.d_pe;
    j["d_se"] = c.d_se;
    j["edge_encoder_layers"] = c.edge_encoder_layers;
    j["mpnn_dropout"] = c.mpnn_dropout;
    j["attn_dropout"] = c.attn_dropout;
    j["readout"] = c.readout == Readout::Mean ? "mean" : "sum";
    j["residual_and_norm"] = c.residual_and_norm;
    j["seed"] = c.seed;
    j["vocab_size"] = c.vocab_size;
    j["edge_feature_length"] = c.edge_feature_length;
    return j;
}

ModelConfig config_from_json_obj(const Json& j) {
    ModelConfig c;
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.d_pe = j.at("d_pe").get<std::size_t>();
    c.d_se = j.at("d_se").get<std::size_t>();
    c.edge_encoder_layers = j.at("edge_encoder_layers").get<std::size_t>();
    c.mpnn_dropout = j.at("mpnn_dropout").get<double>();
    c.attn_dropout = j.at("attn_dropout").get<double>();
    c.readout = j.at("readout").get<std::string>() == "sum" ? Readout::Sum : Readout::Mean;
    c.residual_and_norm = j.at("residual_and_norm").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.edge_feature_length = j.at("edge_feature_length").get<std::size_t>();
    return c;
}

} // namespace

void save_checkpoint(const ModelParams& params, const ModelConfig& config,
                     const std::string& path) {
    Json header;
    header["version"] = kCheckpointVersion;
    header["config"] = config_to_json_obj(config);
    Json arrays = Json::array();
    params.visit([&](const std::string& name, const Eigen::MatrixXd& m) {
        arrays.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    });
    header["arrays"] = std::move(arrays);
    const std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    out.write(kCheckpointMagic, 8);
    const std::uint32_t version = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t header_len = header_text.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    params.visit([&](const std::string&, const Eigen::MatrixXd& m) {
        out.write(reinterpret_cast<const char*>(m.data()),
                  static_cast<std::streamsize>(sizeof(double) * m.size()));
    });
    if (!out) throw Error(ErrorKind::Io, "write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw Error(ErrorKind::SchemaVersionMismatch, "not a checkpoint file: " + path);
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != kCheckpointVersion)
        throw Error(ErrorKind::SchemaVersionMismatch,
                    "unsupported checkpoint version " + std::to_string(version));
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw Error(ErrorKind::Io, "truncated checkpoint header: " + path);
    Json header;
    try {
        header = Json::parse(header_text);
    } catch (const Json::exception& e) {
        throw Error(ErrorKind::Io, std::string("bad checkpoint header: ") + e.what());
    }

    Checkpoint ck;
    ck.config = config_from_json_obj(header.at("config"));
    ck.params = make_params(ck.config);
    const Json& arrays = header.at("arrays");
    std::size_t idx = 0;
    ck.params.visit([&](const std::string& name, Eigen::MatrixXd& m) {
        if (idx >= arrays.size())
            throw Error(ErrorKind::ShapeMismatch, "checkpoint lists too few arrays");
        const Json& a = arrays.at(idx++);
        if (a.at("name").get<std::string>() != name ||
            a.at("rows").get<Eigen::Index>() != m.rows() ||
            a.at("cols").get<Eigen::Index>() != m.cols())
            throw Error(ErrorKind::ShapeMismatch, "checkpoint array mismatch at " + name);
        in.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(sizeof(double) * m.size()));
    });
    if (!in || idx != arrays.size())
        throw Error(ErrorKind::Io, "truncated checkpoint payload: " + path);
    return ck;
}

std::string model_config_to_json(const ModelConfig& config) {
    return config_to_json_obj(config).dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
    try {
        return config_from_json_obj(Json::parse(text));
    } catch (const Json::exception& e) {
        throw Error(ErrorKind::Io, std::string("bad model config: ") + e.what());
    }
}

} // namespace procgt
