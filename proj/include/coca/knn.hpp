#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "coca/cifar.hpp"
#include "coca/model.hpp"
#include "coca/tensor.hpp"

namespace coca::knn {

struct EvalConfig {
    std::size_t k = 200;
    double temperature = 0.2;
    std::size_t class_count = 10;

    void validate(std::size_t bank_size) const;
};

// Unit-norm ConvBlock features of the memory split with their labels, in file order.
struct FeatureBank {
    Tensor<float> features;  // [M][D]
    std::vector<std::uint8_t> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return features.rank() == 2 ? features.dim(1) : 0; }
    void validate(std::size_t class_count = 10, double norm_tolerance = 1e-5) const;
};

// Standardized images of split records [begin, begin+count) as a [count][3][32][32] batch.
Tensor<float> image_batch(const data::DatasetSplit& split, std::size_t begin, std::size_t count,
                          const data::NormalizationStats& stats);

// h for every record, eval mode, in file order: [n][feature_dim].
Tensor<float> extract_features(CapsuleNetwork<float>& net, const data::DatasetSplit& split,
                               const data::NormalizationStats& stats, std::size_t batch_size = 256);

FeatureBank build_feature_bank(CapsuleNetwork<float>& net, const data::DatasetSplit& memory,
                               const data::NormalizationStats& stats, std::size_t batch_size = 256);

struct Prediction {
    std::vector<double> scores;  // per class
    std::vector<int> ranked;     // classes by descending score, ties by ascending class
};

// Top-k neighbours by similarity (ties: lower bank row first), weight exp(sim / tau),
// summed per neighbour label.
Prediction predict_from_similarities(std::span<const float> similarities, std::span<const std::uint8_t> labels,
                                     const EvalConfig& cfg);

Prediction weighted_knn_predict(std::span<const float> query, const FeatureBank& bank, const EvalConfig& cfg);

struct EvalReport {
    std::size_t queries = 0;
    std::size_t top1_hits = 0;
    std::size_t top5_hits = 0;
    std::size_t k = 0;
    double temperature = 0.0;

    double top1() const { return queries ? 100.0 * top1_hits / queries : 0.0; }
    double top5() const { return queries ? 100.0 * top5_hits / queries : 0.0; }
};

// Queries are unit-norm rows [Q][D]; similarities computed in chunks of `chunk` queries.
EvalReport evaluate_features(const FeatureBank& bank, const Tensor<float>& queries,
                             std::span<const std::uint8_t> query_labels, const EvalConfig& cfg,
                             std::size_t chunk = 128);

EvalReport evaluate(CapsuleNetwork<float>& net, const data::DatasetSplit& memory, const data::DatasetSplit& test,
                    const data::NormalizationStats& stats, const EvalConfig& cfg);

}  // namespace coca::knn
