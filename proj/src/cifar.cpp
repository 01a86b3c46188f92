#include "coca/cifar.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "coca/tensor.hpp"

namespace coca {

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

}  // namespace coca

namespace coca::data {

namespace fs = std::filesystem;

const char* to_string(SplitKind kind) {
    switch (kind) {
        case SplitKind::train: return "train";
        case SplitKind::memory: return "memory";
        case SplitKind::test: return "test";
    }
    return "?";
}

DatasetSplit DatasetSplit::slice(std::size_t begin, std::size_t count) const {
    if (begin > records.size()) throw std::out_of_range("slice begins past end of split");
    count = std::min(count, records.size() - begin);
    DatasetSplit out{kind, {}};
    out.records.assign(records.begin() + begin, records.begin() + begin + count);
    return out;
}

DataError::DataError(std::string file, std::size_t record, const std::string& what)
    : std::runtime_error(file + " (record " + std::to_string(record) + "): " + what),
      file_(std::move(file)),
      record_(record) {}

DataError::DataError(std::string file, const std::string& what)
    : std::runtime_error(file + ": " + what), file_(std::move(file)) {}

std::vector<ImageRecord> read_batch_file(const fs::path& file) {
    const std::string name = file.string();
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError(name, "missing or unreadable batch file");

    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.empty()) throw DataError(name, "empty batch file (0 bytes)");

    const std::size_t whole = bytes.size() / kRecordBytes;
    if (bytes.size() % kRecordBytes != 0)
        throw DataError(name, whole,
                        "truncated record: file size " + std::to_string(bytes.size()) +
                            " is not a multiple of " + std::to_string(kRecordBytes));

    std::vector<ImageRecord> records(whole);
    for (std::size_t i = 0; i < whole; ++i) {
        const auto* rec = reinterpret_cast<const std::uint8_t*>(bytes.data()) + i * kRecordBytes;
        if (rec[0] >= kClassCount)
            throw DataError(name, i, "label byte " + std::to_string(rec[0]) + " out of range 0-9");
        records[i].label = rec[0];
        std::copy(rec + 1, rec + kRecordBytes, records[i].pixels.begin());
    }
    return records;
}

void write_batch_file(const fs::path& file, std::span<const ImageRecord> records) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    for (const auto& r : records) {
        out.put(static_cast<char>(r.label));
        out.write(reinterpret_cast<const char*>(r.pixels.data()), kPixelBytes);
    }
    if (!out) throw std::runtime_error("write failed for " + file.string());
}

fs::path resolve_batch_dir(const fs::path& path) {
    if (fs::exists(path / kTestFile)) return path;
    if (fs::exists(path / "cifar-10-batches-bin" / kTestFile)) return path / "cifar-10-batches-bin";
    return path;
}

CifarDataset load_cifar10_binary(const fs::path& path) {
    const fs::path dir = resolve_batch_dir(path);
    if (!fs::is_directory(dir)) throw DataError(dir.string(), "dataset directory does not exist");

    CifarDataset ds;
    ds.train.kind = SplitKind::train;
    ds.test.kind = SplitKind::test;
    for (const char* name : kTrainFiles) {
        auto recs = read_batch_file(dir / name);
        ds.train.records.insert(ds.train.records.end(), recs.begin(), recs.end());
    }
    ds.test.records = read_batch_file(dir / kTestFile);
    return ds;
}

void NormalizationStats::validate() const {
    for (std::size_t c = 0; c < kChannels; ++c) {
        if (!(std::isfinite(std[c]) && std[c] > 0.0))
            throw std::invalid_argument("normalization std must be positive and finite");
        if (!std::isfinite(mean[c])) throw std::invalid_argument("normalization mean must be finite");
    }
}

NormalizationStats compute_stats(const DatasetSplit& split) {
    if (split.empty()) throw std::invalid_argument("cannot compute normalization stats of an empty split");
    constexpr std::size_t plane = kImageSide * kImageSide;
    std::array<long double, kChannels> sum{}, sq{};
    for (const auto& r : split.records) {
        for (std::size_t c = 0; c < kChannels; ++c) {
            std::uint64_t s = 0, s2 = 0;
            for (std::size_t p = 0; p < plane; ++p) {
                const std::uint64_t v = r.pixels[c * plane + p];
                s += v;
                s2 += v * v;
            }
            sum[c] += s;
            sq[c] += s2;
        }
    }
    NormalizationStats stats;
    const long double n = static_cast<long double>(split.size()) * plane;
    for (std::size_t c = 0; c < kChannels; ++c) {
        const long double mean = sum[c] / n / 255.0L;
        const long double var = sq[c] / n / (255.0L * 255.0L) - mean * mean;
        stats.mean[c] = static_cast<double>(mean);
        stats.std[c] = static_cast<double>(std::sqrt(std::max(var, 1e-12L)));
    }
    return stats;
}

void to_unit(const ImageRecord& record, std::span<float> out) {
    if (out.size() != kPixelBytes) throw std::invalid_argument("image buffer must hold 3072 values");
    for (std::size_t i = 0; i < kPixelBytes; ++i) out[i] = static_cast<float>(record.pixels[i]) / 255.0f;
}

void standardize(std::span<float> image, const NormalizationStats& stats) {
    stats.validate();
    const std::size_t plane = image.size() / kChannels;
    for (std::size_t c = 0; c < kChannels; ++c) {
        const double mean = stats.mean[c], inv = 1.0 / stats.std[c];
        for (std::size_t p = 0; p < plane; ++p) {
            auto& v = image[c * plane + p];
            v = static_cast<float>((static_cast<double>(v) - mean) * inv);
        }
    }
}

std::vector<float> normalize(const ImageRecord& record, const NormalizationStats& stats) {
    std::vector<float> out(kPixelBytes);
    to_unit(record, out);
    standardize(out, stats);
    return out;
}

BatchPlan batch_iterator(std::size_t split_size, std::size_t batch_size, bool shuffle,
                         std::uint64_t seed, std::uint64_t epoch) {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
    std::vector<std::size_t> order(split_size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle) {
        Rng rng = make_rng(seed, {0x5348u, epoch});
        for (std::size_t i = split_size; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    }
    BatchPlan plan;
    for (std::size_t b = 0; b < split_size; b += batch_size) {
        const std::size_t end = std::min(split_size, b + batch_size);
        plan.batches.emplace_back(order.begin() + b, order.begin() + end);
        plan.last_batch_size = end - b;
    }
    return plan;
}

}  // namespace coca::data
