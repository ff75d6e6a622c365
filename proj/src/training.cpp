#include "procgt/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "procgt/errors.hpp"
#include "procgt/rng.hpp"

namespace procgt {

namespace {

using Json = nlohmann::json;

std::vector<Eigen::MatrixXd*> collect_arrays(ModelParams& p) {
    std::vector<Eigen::MatrixXd*> out;
    p.visit([&](const std::string&, Eigen::MatrixXd& m) { out.push_back(&m); });
    return out;
}

std::vector<const Eigen::MatrixXd*> collect_arrays(const ModelParams& p) {
    std::vector<const Eigen::MatrixXd*> out;
    p.visit([&](const std::string&, const Eigen::MatrixXd& m) { out.push_back(&m); });
    return out;
}

std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace

void TrainConfig::validate() const {
    if (epochs == 0 || batch_size == 0)
        throw Error(ErrorKind::Usage, "epochs and batch_size must be positive");
    if (warmup_epochs >= epochs)
        throw Error(ErrorKind::Usage, "warmup_epochs must be less than epochs");
    if (base_lr <= 0.0 || weight_decay < 0.0)
        throw Error(ErrorKind::Usage, "base_lr must be positive and weight_decay nonnegative");
}

double lr_schedule(std::size_t epoch, const TrainConfig& config) {
    if (config.warmup_epochs > 0 && epoch < config.warmup_epochs)
        return config.base_lr * static_cast<double>(epoch) /
               static_cast<double>(config.warmup_epochs);
    const double progress = static_cast<double>(epoch - config.warmup_epochs) /
                            static_cast<double>(config.epochs - config.warmup_epochs);
    return config.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamWState make_adamw_state(const ModelConfig& config) {
    AdamWState s;
    s.m = make_params(config);
    s.v = make_params(config);
    return s;
}

void adamw_step(ModelParams& params, const ModelParams& grads, AdamWState& state, double lr,
                double weight_decay, double beta1, double beta2, double eps) {
    auto ps = collect_arrays(params);
    auto gs = collect_arrays(grads);
    auto ms = collect_arrays(state.m);
    auto vs = collect_arrays(state.v);
    if (ps.size() != gs.size() || ps.size() != ms.size())
        throw Error(ErrorKind::ShapeMismatch, "optimizer state does not match parameters");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < ps.size(); ++i) {
        Eigen::MatrixXd& p = *ps[i];
        const Eigen::MatrixXd& g = *gs[i];
        Eigen::MatrixXd& m = *ms[i];
        Eigen::MatrixXd& v = *vs[i];
        if (p.rows() != g.rows() || p.cols() != g.cols())
            throw Error(ErrorKind::ShapeMismatch, "gradient shape does not match parameter");
        p -= lr * weight_decay * p;
        m = beta1 * m + (1.0 - beta1) * g;
        v = (beta2 * v.array() + (1.0 - beta2) * g.array().square()).matrix();
        p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
        if (!p.allFinite())
            throw Error(ErrorKind::NonFiniteGradient, "non-finite parameter after optimizer step");
    }
}

TrainedModel train_model(const std::vector<PrefixGraph>& train_graphs,
                         const std::vector<PrefixGraph>& val_graphs,
                         const NormalizationStats& stats, ModelConfig model_config,
                         TrainConfig train_config) {
    if (train_graphs.empty())
        throw Error(ErrorKind::TooFewCases, "training set is empty");
    train_config.validate();
    model_config.vocab_size = stats.vocab_size();
    model_config.edge_feature_length = stats.feature_length();
    model_config.validate();

    const std::uint64_t master =
        derive_seed(train_config.seed, "train/master", model_config.seed);

    std::vector<GraphEncodings> train_enc, val_enc;
    train_enc.reserve(train_graphs.size());
    for (const auto& g : train_graphs)
        train_enc.push_back(compute_encodings(g, model_config.d_pe, model_config.d_se));
    val_enc.reserve(val_graphs.size());
    for (const auto& g : val_graphs)
        val_enc.push_back(compute_encodings(g, model_config.d_pe, model_config.d_se));

    ModelConfig init_cfg = model_config;
    init_cfg.seed = derive_seed(master, "init");
    TrainedModel out;
    out.model_config = model_config;
    out.train_config = train_config;
    out.stats = stats;
    ModelParams params = init_params(init_cfg);
    out.params = params;
    ModelParams grads = make_params(model_config);
    AdamWState opt = make_adamw_state(model_config);

    auto slice_batch = [&](const std::vector<PrefixGraph>& graphs,
                           const std::vector<GraphEncodings>& encs,
                           const std::vector<std::size_t>& idx, std::size_t begin,
                           std::size_t end) {
        std::vector<const PrefixGraph*> gp;
        std::vector<const GraphEncodings*> ep;
        gp.reserve(end - begin);
        ep.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i) {
            gp.push_back(&graphs[idx[i]]);
            ep.push_back(&encs[idx[i]]);
        }
        return make_batch(gp, ep, model_config);
    };

    std::vector<std::size_t> val_idx(val_graphs.size());
    for (std::size_t i = 0; i < val_idx.size(); ++i) val_idx[i] = i;

    auto validation_loss = [&](const ModelParams& p) {
        if (val_graphs.empty()) return std::numeric_limits<double>::quiet_NaN();
        double abs_sum = 0.0;
        for (std::size_t b = 0; b < val_graphs.size(); b += train_config.batch_size) {
            const std::size_t e = std::min(val_graphs.size(), b + train_config.batch_size);
            BatchedGraphs batch = slice_batch(val_graphs, val_enc, val_idx, b, e);
            ForwardResult r = forward(batch, p, model_config, false);
            for (std::size_t i = 0; i < r.predictions.size(); ++i)
                abs_sum += std::abs(r.predictions[i] - batch.targets[i]);
        }
        return abs_sum / static_cast<double>(val_graphs.size());
    };

    std::vector<std::size_t> idx(train_graphs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

    std::size_t epochs_since_best = 0;
    for (std::size_t epoch = 0; epoch < train_config.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(master, "shuffle", epoch));
        shuffle_rng.shuffle(idx);
        const double lr = lr_schedule(epoch, train_config);
        double abs_sum = 0.0;
        bool bad = false;
        std::size_t batch_index = 0;
        for (std::size_t b = 0; b < idx.size(); b += train_config.batch_size, ++batch_index) {
            const std::size_t e = std::min(idx.size(), b + train_config.batch_size);
            BatchedGraphs batch = slice_batch(train_graphs, train_enc, idx, b, e);
            const std::uint64_t dropout_seed =
                derive_seed(master, "dropout", epoch, batch_index);
            try {
                const double loss = backward(batch, params, model_config, dropout_seed, grads);
                abs_sum += loss * static_cast<double>(e - b);
                adamw_step(params, grads, opt, lr, train_config.weight_decay);
            } catch (const Error& err) {
                if (err.kind() == ErrorKind::NonFiniteGradient ||
                    err.kind() == ErrorKind::NonFiniteOutput) {
                    bad = true;
                    break;
                }
                throw;
            }
        }
        if (bad) {
            out.diverged = true;
            break;
        }
        const double train_loss = abs_sum / static_cast<double>(idx.size());
        double val_loss;
        try {
            val_loss = validation_loss(params);
        } catch (const Error& err) {
            if (err.kind() == ErrorKind::NonFiniteOutput) {
                out.diverged = true;
                break;
            }
            throw;
        }
        if (val_graphs.empty()) val_loss = train_loss;
        const double selection = val_loss;
        if (!std::isfinite(selection)) {
            out.diverged = true;
            break;
        }
        out.curve.push_back({train_loss, val_loss, lr});
        if (selection < out.best_val_loss) {
            out.best_val_loss = selection;
            out.best_epoch = epoch;
            out.params = params;
            epochs_since_best = 0;
        } else if (train_config.early_stop_patience > 0 &&
                   ++epochs_since_best >= train_config.early_stop_patience) {
            break;
        }
    }
    return out;
}

double predict_seconds(const TrainedModel& model, const EventPrefixRecord& record,
                       const EventLog& log) {
    if (record.k < 2) throw Error(ErrorKind::PrefixTooShort, "prefix must contain >= 2 events");
    PrefixGraph g = build_graph(record, log, model.stats);
    std::vector<double> preds = predict_seconds(model, {g});
    return preds[0];
}

std::vector<double> predict_seconds(const TrainedModel& model,
                                    const std::vector<PrefixGraph>& graphs) {
    std::vector<double> out;
    out.reserve(graphs.size());
    const ModelConfig& cfg = model.model_config;
    const std::size_t chunk = std::max<std::size_t>(1, model.train_config.batch_size);
    for (std::size_t b = 0; b < graphs.size(); b += chunk) {
        const std::size_t e = std::min(graphs.size(), b + chunk);
        std::vector<const PrefixGraph*> gp;
        std::vector<GraphEncodings> encs;
        encs.reserve(e - b);
        std::vector<const GraphEncodings*> ep;
        for (std::size_t i = b; i < e; ++i) {
            gp.push_back(&graphs[i]);
            encs.push_back(compute_encodings(graphs[i], cfg.d_pe, cfg.d_se));
        }
        for (const auto& enc : encs) ep.push_back(&enc);
        BatchedGraphs batch = make_batch(gp, ep, cfg);
        ForwardResult r = forward(batch, model.params, cfg, false);
        for (double p : r.predictions)
            out.push_back(std::max(0.0, p * model.stats.max_case_duration_seconds));
    }
    return out;
}

void write_metrics_csv(const std::vector<EpochStats>& curve, const std::string& path,
                       const std::string& manifest_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    if (!manifest_hash.empty()) out << "# manifest_hash=" << manifest_hash << '\n';
    out << "epoch,train_loss,val_loss,lr\n";
    for (std::size_t i = 0; i < curve.size(); ++i)
        out << i << ',' << format_double(curve[i].train_loss) << ','
            << format_double(curve[i].val_loss) << ',' << format_double(curve[i].lr) << '\n';
    if (!out) throw Error(ErrorKind::Io, "write failed for " + path);
}

std::string train_config_to_json(const TrainConfig& c) {
    Json j;
    j["epochs"] = c.epochs;
    j["warmup_epochs"] = c.warmup_epochs;
    j["base_lr"] = c.base_lr;
    j["weight_decay"] = c.weight_decay;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    j["early_stop_patience"] = c.early_stop_patience;
    j["checkpoint_every"] = c.checkpoint_every;
    return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::exception& e) {
        throw Error(ErrorKind::Io, std::string("bad train config: ") + e.what());
    }
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    return c;
}

} // namespace procgt
