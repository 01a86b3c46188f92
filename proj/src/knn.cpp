#include "coca/knn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace coca::knn {

void EvalConfig::validate(std::size_t bank_size) const {
    if (!(temperature > 0.0)) throw std::invalid_argument("kNN temperature must be positive");
    if (class_count == 0) throw std::invalid_argument("class_count must be positive");
    if (k < 1 || k > bank_size)
        throw std::invalid_argument("k = " + std::to_string(k) + " must lie in [1, bank size " +
                                    std::to_string(bank_size) + "]");
}

void FeatureBank::validate(std::size_t class_count, double norm_tolerance) const {
    if (labels.empty()) throw std::invalid_argument("feature bank is empty");
    if (features.rank() != 2 || features.dim(0) != labels.size())
        throw std::invalid_argument("feature bank rows and labels disagree");
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] >= class_count) throw std::invalid_argument("feature bank label out of range");
        double sq = 0.0;
        for (auto v : features.row(r)) sq += static_cast<double>(v) * v;
        if (std::abs(std::sqrt(sq) - 1.0) > norm_tolerance)
            throw std::invalid_argument("feature bank row " + std::to_string(r) + " is not unit-norm");
    }
}

Tensor<float> image_batch(const data::DatasetSplit& split, std::size_t begin, std::size_t count,
                          const data::NormalizationStats& stats) {
    Tensor<float> x({count, data::kChannels, data::kImageSide, data::kImageSide});
    for (std::size_t i = 0; i < count; ++i) {
        auto row = x.row(i);
        data::to_unit(split.records[begin + i], row);
        data::standardize(row, stats);
    }
    return x;
}

Tensor<float> extract_features(CapsuleNetwork<float>& net, const data::DatasetSplit& split,
                               const data::NormalizationStats& stats, std::size_t batch_size) {
    if (split.empty()) throw std::invalid_argument(std::string("cannot extract features of an empty ") +
                                                   data::to_string(split.kind) + " split");
    const std::size_t D = net.config().feature_dim();
    Tensor<float> out({split.size(), D});
    for (std::size_t b = 0; b < split.size(); b += batch_size) {
        const std::size_t n = std::min(batch_size, split.size() - b);
        const auto res = net.forward(image_batch(split, b, n, stats), Mode::eval);
        std::copy(res.h.data.begin(), res.h.data.end(), out.data.begin() + b * D);
    }
    return out;
}

FeatureBank build_feature_bank(CapsuleNetwork<float>& net, const data::DatasetSplit& memory,
                               const data::NormalizationStats& stats, std::size_t batch_size) {
    FeatureBank bank;
    bank.features = extract_features(net, memory, stats, batch_size);
    bank.labels.reserve(memory.size());
    for (const auto& r : memory.records) bank.labels.push_back(r.label);
    return bank;
}

Prediction predict_from_similarities(std::span<const float> sims, std::span<const std::uint8_t> labels,
                                     const EvalConfig& cfg) {
    if (sims.size() != labels.size()) throw std::invalid_argument("similarities and labels disagree in length");
    cfg.validate(sims.size());
    std::vector<std::uint32_t> idx(sims.size());
    std::iota(idx.begin(), idx.end(), 0u);
    auto closer = [&](std::uint32_t a, std::uint32_t b) { return sims[a] > sims[b] || (sims[a] == sims[b] && a < b); };
    std::nth_element(idx.begin(), idx.begin() + static_cast<long>(cfg.k - 1), idx.end(), closer);

    // Sum in (similarity, label) order so the result does not depend on bank row order.
    std::vector<std::uint32_t> top(idx.begin(), idx.begin() + static_cast<long>(cfg.k));
    std::sort(top.begin(), top.end(), [&](std::uint32_t a, std::uint32_t b) {
        return sims[a] > sims[b] || (sims[a] == sims[b] && labels[a] < labels[b]);
    });
    Prediction p;
    p.scores.assign(cfg.class_count, 0.0);
    for (auto i : top) {
        if (labels[i] >= cfg.class_count) throw std::invalid_argument("bank label out of range");
        p.scores[labels[i]] += std::exp(static_cast<double>(sims[i]) / cfg.temperature);
    }
    p.ranked.resize(cfg.class_count);
    std::iota(p.ranked.begin(), p.ranked.end(), 0);
    std::stable_sort(p.ranked.begin(), p.ranked.end(), [&](int a, int b) { return p.scores[a] > p.scores[b]; });
    return p;
}

Prediction weighted_knn_predict(std::span<const float> query, const FeatureBank& bank, const EvalConfig& cfg) {
    if (query.size() != bank.dim()) throw std::invalid_argument("query dimension does not match the bank");
    double sq = 0.0;
    for (auto v : query) sq += static_cast<double>(v) * v;
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-5) throw std::invalid_argument("query must be unit-norm");
    std::vector<float> sims(bank.size());
    const std::size_t D = bank.dim();
    for (std::size_t r = 0; r < bank.size(); ++r) {
        double dot = 0.0;
        const float* row = bank.features.ptr() + r * D;
        for (std::size_t d = 0; d < D; ++d) dot += static_cast<double>(row[d]) * query[d];
        sims[r] = static_cast<float>(dot);
    }
    return predict_from_similarities(sims, bank.labels, cfg);
}

EvalReport evaluate_features(const FeatureBank& bank, const Tensor<float>& queries,
                             std::span<const std::uint8_t> query_labels, const EvalConfig& cfg, std::size_t chunk) {
    if (queries.rank() != 2 || queries.dim(0) == 0) throw std::invalid_argument("empty query set");
    if (queries.dim(0) != query_labels.size()) throw std::invalid_argument("queries and labels disagree");
    if (queries.dim(1) != bank.dim()) throw std::invalid_argument("query dimension does not match the bank");
    cfg.validate(bank.size());

    using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const std::size_t M = bank.size(), D = bank.dim(), Q = queries.dim(0);
    Eigen::Map<const RowMat> B(bank.features.ptr(), M, D);
    RowMat S;
    EvalReport rep;
    rep.queries = Q;
    rep.k = cfg.k;
    rep.temperature = cfg.temperature;
    for (std::size_t q0 = 0; q0 < Q; q0 += chunk) {
        const std::size_t n = std::min(chunk, Q - q0);
        Eigen::Map<const RowMat> Qm(queries.ptr() + q0 * D, n, D);
        S.noalias() = Qm * B.transpose();
        for (std::size_t i = 0; i < n; ++i) {
            const auto p = predict_from_similarities(std::span<const float>(S.data() + i * M, M), bank.labels, cfg);
            const int truth = query_labels[q0 + i];
            if (p.ranked[0] == truth) ++rep.top1_hits;
            const std::size_t top = std::min<std::size_t>(5, p.ranked.size());
            if (std::find(p.ranked.begin(), p.ranked.begin() + static_cast<long>(top), truth) !=
                p.ranked.begin() + static_cast<long>(top))
                ++rep.top5_hits;
        }
    }
    return rep;
}

EvalReport evaluate(CapsuleNetwork<float>& net, const data::DatasetSplit& memory, const data::DatasetSplit& test,
                    const data::NormalizationStats& stats, const EvalConfig& cfg) {
    if (test.empty()) throw std::invalid_argument("test split is empty");
    const auto bank = build_feature_bank(net, memory, stats);
    const auto queries = extract_features(net, test, stats);
    std::vector<std::uint8_t> labels;
    labels.reserve(test.size());
    for (const auto& r : test.records) labels.push_back(r.label);
    return evaluate_features(bank, queries, labels, cfg);
}

}  // namespace coca::knn
