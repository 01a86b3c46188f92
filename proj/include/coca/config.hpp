#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "coca/augment.hpp"
#include "coca/cifar.hpp"
#include "coca/model.hpp"

namespace coca {

// Hyperparameters of one training run. Epochs and batch size default to a desk-sized run.
struct TrainConfig {
    ModelConfig model;
    double temperature = 0.2;
    std::size_t epochs = 50;
    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    double weight_decay = 1e-6;
    std::uint64_t seed = 0;
    augment::AugmentConfig augment;
    std::size_t checkpoint_every = 1;  // epochs; 0 = final checkpoint only
    std::size_t eval_every = 0;        // epochs; 0 = never during training

    void validate() const;

    // Hash of everything that must match for a resumed run to continue the same
    // trajectory (epochs and cadences excluded).
    std::string resume_hash() const;
};

using KeyValues = std::map<std::string, std::string>;

// Flat key/value views used by run-config files and checkpoint metadata.
KeyValues to_key_values(const ModelConfig& c);
KeyValues to_key_values(const TrainConfig& c);  // includes model and augmentation keys
KeyValues to_key_values(const data::NormalizationStats& s);

// Return false when the key is not one of theirs; throw on a malformed value.
bool apply_key(ModelConfig& c, const std::string& key, const std::string& value);
bool apply_key(TrainConfig& c, const std::string& key, const std::string& value);
bool apply_key(data::NormalizationStats& s, const std::string& key, const std::string& value);

std::vector<std::string> model_keys();
std::vector<std::string> train_keys();

// Shortest round-trip decimal.
std::string format_double(double v);
double parse_double(const std::string& key, const std::string& value);
std::uint64_t parse_unsigned(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);

}  // namespace coca
