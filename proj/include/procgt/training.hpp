#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "procgt/model.hpp"
#include "procgt/prefixing.hpp"

namespace procgt {

struct TrainConfig {
    std::size_t epochs = 600;
    std::size_t warmup_epochs = 50;
    double base_lr = 1e-3;
    double weight_decay = 1e-5;
    std::size_t batch_size = 128;
    std::uint64_t seed = 0;
    std::size_t early_stop_patience = 0; // 0 disables early stopping
    std::size_t checkpoint_every = 0;    // 0 disables periodic snapshots

    void validate() const; // throws Usage
};

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);

struct EpochStats {
    double train_loss;
    double val_loss;
    double lr;
};

struct TrainedModel {
    ModelConfig model_config;
    TrainConfig train_config;
    ModelParams params; // best-validation parameters
    NormalizationStats stats;
    std::vector<EpochStats> curve;
    std::size_t best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    bool diverged = false;
};

// Linear warmup from 0 to base_lr over warmup_epochs, then cosine decay to 0
// at the final epoch. Continuous at the boundary.
double lr_schedule(std::size_t epoch, const TrainConfig& config);

struct AdamWState {
    ModelParams m, v; // first and second moment estimates
    long long step = 0;
};

AdamWState make_adamw_state(const ModelConfig& config);

// Decoupled weight decay applied separately from the bias-corrected adaptive
// step.
void adamw_step(ModelParams& params, const ModelParams& grads, AdamWState& state, double lr,
                double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

// Deterministic given (train_config.seed, model_config.seed): initialization,
// shuffling, and dropout all derive from them. Keeps the epoch with the best
// validation loss; a non-finite loss or gradient flips `diverged` and returns
// the last good checkpoint.
TrainedModel train_model(const std::vector<PrefixGraph>& train_graphs,
                         const std::vector<PrefixGraph>& val_graphs,
                         const NormalizationStats& stats, ModelConfig model_config,
                         TrainConfig train_config);

// Remaining time in seconds: eval-mode forward, denormalized by the model's
// frozen maxCaseDurationSeconds, clamped at 0.
double predict_seconds(const TrainedModel& model, const EventPrefixRecord& record,
                       const EventLog& log);
std::vector<double> predict_seconds(const TrainedModel& model,
                                    const std::vector<PrefixGraph>& graphs);

void write_metrics_csv(const std::vector<EpochStats>& curve, const std::string& path,
                       const std::string& manifest_hash);

} // namespace procgt
