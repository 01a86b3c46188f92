#pragma once

#include <atomic>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "coca/adam.hpp"
#include "coca/checkpoint.hpp"
#include "coca/cifar.hpp"
#include "coca/config.hpp"
#include "coca/model.hpp"

namespace coca::train {

struct MetricsRow {
    std::size_t epoch = 0;
    double loss = 0.0;
    double seconds = 0.0;
    std::optional<double> top1, top5;

    bool operator==(const MetricsRow&) const = default;
};

// CSV schema: epoch,loss,seconds,top1,top5 (accuracy cells empty when not evaluated).
std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::string metrics_csv_row(const MetricsRow& row);
// Throws std::runtime_error naming the offending line.
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);

// Everything needed to continue a run exactly where it stopped.
struct TrainState {
    TrainConfig config;
    data::NormalizationStats stats;
    CapsuleNetwork<float> network;
    optim::AdamState<float> adam;
    std::size_t epoch = 0;  // completed epochs
    // Progress inside an interrupted epoch.
    std::size_t next_batch = 0;
    double partial_loss_sum = 0.0;
    std::size_t partial_batches = 0;

    TrainState(TrainConfig cfg, data::NormalizationStats s, CapsuleNetwork<float> net);

    Checkpoint to_checkpoint() const;
    // Validates the whole record before returning; nothing is applied on failure.
    static TrainState from_checkpoint(const Checkpoint& ckpt);
};

TrainState initial_state(const TrainConfig& config, const data::NormalizationStats& stats);

class TrainingError : public std::runtime_error {
public:
    TrainingError(std::size_t epoch, std::size_t batch, const std::string& what);
    std::size_t epoch() const { return epoch_; }
    std::size_t batch() const { return batch_; }

private:
    std::size_t epoch_, batch_;
};

struct TrainOptions {
    // Wall-clock seconds are recorded as 0 so metrics are bitwise reproducible.
    bool deterministic = true;
    std::function<void(const MetricsRow&)> on_epoch;
    // After every optimizer step: (epoch, batch index, batch loss).
    std::function<void(std::size_t, std::size_t, double)> on_batch;
    // Returns (top1, top5) for the current network; called every eval_every epochs.
    std::function<std::pair<double, double>(CapsuleNetwork<float>&)> evaluate;
    // Called every checkpoint_every epochs, at the end, and on interruption.
    std::function<void(const TrainState&)> on_checkpoint;
    const std::atomic<bool>* stop = nullptr;
};

struct TrainResult {
    TrainState state;
    std::vector<MetricsRow> metrics;
    bool interrupted = false;
};

// Two augmented, standardized views of each image in `indices`: [B][3][32][32] each.
// Views depend only on (seed, augment seed, epoch, image index).
std::pair<Tensor<float>, Tensor<float>> make_view_batch(const data::UnlabeledImages& images,
                                                        std::span<const std::size_t> indices,
                                                        const TrainConfig& config,
                                                        const data::NormalizationStats& stats, std::uint64_t epoch);

// One Siamese step: both views through the same parameters, NT-Xent, backprop, Adam.
// Running batch-norm statistics move on the first view only.
double train_step(TrainState& state, const Tensor<float>& view_i, const Tensor<float>& view_j);

TrainResult train(const TrainConfig& config, const data::UnlabeledImages& images,
                  const data::NormalizationStats& stats, const TrainOptions& options = {});

// Continues `checkpoint` up to config.epochs. The config must hash-match the one
// that produced the checkpoint; a finished checkpoint is returned unchanged.
TrainResult resume(TrainState checkpoint, const TrainConfig& config, const data::UnlabeledImages& images,
                   const TrainOptions& options = {});

}  // namespace coca::train
