#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "coca/config.hpp"
#include "coca/knn.hpp"

namespace coca::app {

inline constexpr const char* kDataRootEnv = "COCA_DATA_ROOT";

// Everything one command invocation needs, reconstructable from one key=value file.
struct RunConfig {
    TrainConfig train;
    knn::EvalConfig eval;
    std::string data_dir;  // defaults to $COCA_DATA_ROOT, else "data"
    std::string checkpoint_dir = "checkpoints";
    std::string metrics_path = "metrics.csv";
    std::string plot_dir = "plots";
    std::string fetch_source;  // archive URL or local path for `fetch`
    std::string fetch_md5;
    std::size_t subset = 0;       // first N training images; 0 = all
    std::size_t eval_subset = 0;  // first N test images; 0 = all
    bool deterministic = true;

    RunConfig();

    // Throws on a malformed value; returns false for an unknown key.
    bool apply(const std::string& key, const std::string& value);
    KeyValues to_key_values() const;
    std::string to_text() const;
};

std::vector<std::string> run_config_keys();

// Flat text: `key = value` per line, `#` comments, blank lines ignored.
// Unknown keys and duplicates are errors naming the line.
RunConfig parse_run_config(const std::string& text, RunConfig base = RunConfig());
RunConfig load_run_config(const std::filesystem::path& file);

// Full-scale recipe: batch 512, 500 epochs, whole dataset. Not a desk run.
void apply_full_scale(RunConfig& config);

}  // namespace coca::app
