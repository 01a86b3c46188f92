#pragma once

#include <atomic>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "coca/app/fetch.hpp"
#include "coca/app/run_config.hpp"
#include "coca/knn.hpp"
#include "coca/profiler.hpp"
#include "coca/trainer.hpp"

namespace coca::app {

// Raised when the dataset directory is missing; the message tells the user to run fetch.
class MissingDataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LoadedData {
    data::DatasetSplit train;   // training subset, labels withheld from the trainer
    data::DatasetSplit memory;  // same images with labels, for the kNN bank
    data::DatasetSplit test;
};

LoadedData load_data(const RunConfig& config);

std::filesystem::path latest_checkpoint(const RunConfig& config);
std::filesystem::path epoch_checkpoint(const RunConfig& config, std::size_t epoch);

// Exclusive lock on a checkpoint directory, released on destruction.
class DirectoryLock {
public:
    explicit DirectoryLock(const std::filesystem::path& dir);
    ~DirectoryLock();
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    std::filesystem::path file_;
};

struct TrainCommand {
    RunConfig config;
    bool dry_run = false;
    bool resume = false;  // continue from latest.ckpt in the checkpoint directory
    const std::atomic<bool>* stop = nullptr;
};

struct TrainOutcome {
    std::vector<train::MetricsRow> metrics;  // every row in the metrics file
    bool interrupted = false;
    std::filesystem::path checkpoint;
};

TrainOutcome cmd_train(const TrainCommand& cmd, std::ostream& out);

struct EvalCommand {
    RunConfig config;
    std::optional<std::filesystem::path> checkpoint;  // default: latest.ckpt
    bool untrained = false;                           // random weights from config seed
};

knn::EvalReport cmd_eval(const EvalCommand& cmd, std::ostream& out);

profile::Audit cmd_profile(const ModelConfig& model, const std::string& convention,
                           const std::optional<std::filesystem::path>& csv_out, std::ostream& out);

std::vector<std::filesystem::path> cmd_plot(const std::filesystem::path& csv, const std::filesystem::path& out_dir,
                                            std::ostream& out);

FetchResult cmd_fetch(const FetchOptions& options, std::ostream& out);

}  // namespace coca::app
