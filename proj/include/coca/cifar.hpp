#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "coca/rng.hpp"

namespace coca::data {

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kChannels = 3;
inline constexpr std::size_t kPixelBytes = kImageSide * kImageSide * kChannels;  // 3072
inline constexpr std::size_t kRecordBytes = kPixelBytes + 1;                       // 3073
inline constexpr std::size_t kClassCount = 10;
inline constexpr std::size_t kTrainRecords = 50000;
inline constexpr std::size_t kTestRecords = 10000;

inline constexpr std::array<const char*, 5> kTrainFiles = {
    "data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"};
inline constexpr const char* kTestFile = "test_batch.bin";

// One CIFAR-10 record: label byte, then 1024 red, 1024 green, 1024 blue bytes (row-major).
struct ImageRecord {
    std::uint8_t label = 0;
    std::array<std::uint8_t, kPixelBytes> pixels{};
};

enum class SplitKind { train, memory, test };

const char* to_string(SplitKind kind);

struct DatasetSplit {
    SplitKind kind = SplitKind::train;
    std::vector<ImageRecord> records;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }

    // Same records, different role (train -> memory keeps file order).
    DatasetSplit as(SplitKind k) const { return DatasetSplit{k, records}; }
    DatasetSplit slice(std::size_t begin, std::size_t count) const;
};

struct CifarDataset {
    DatasetSplit train;
    DatasetSplit test;

    DatasetSplit memory() const { return train.as(SplitKind::memory); }
};

// Raised for malformed dataset files. Carries the file and the record index at fault.
class DataError : public std::runtime_error {
public:
    DataError(std::string file, std::size_t record, const std::string& what);
    DataError(std::string file, const std::string& what);

    const std::string& file() const { return file_; }
    std::size_t record() const { return record_; }

    static constexpr std::size_t kNoRecord = static_cast<std::size_t>(-1);

private:
    std::string file_;
    std::size_t record_ = kNoRecord;
};

std::vector<ImageRecord> read_batch_file(const std::filesystem::path& file);
void write_batch_file(const std::filesystem::path& file, std::span<const ImageRecord> records);

// Accepts either the directory holding the six batch files or its parent
// (the official archive unpacks into cifar-10-batches-bin/).
std::filesystem::path resolve_batch_dir(const std::filesystem::path& path);

CifarDataset load_cifar10_binary(const std::filesystem::path& path);

struct NormalizationStats {
    std::array<double, kChannels> mean{0.0, 0.0, 0.0};
    std::array<double, kChannels> std{1.0, 1.0, 1.0};

    void validate() const;
};

NormalizationStats compute_stats(const DatasetSplit& split);

// Pixels to [0,1], channel-planar.
void to_unit(const ImageRecord& record, std::span<float> out);
// (x - mean) / std per channel, in place on a [0,1] channel-planar image.
void standardize(std::span<float> image, const NormalizationStats& stats);
std::vector<float> normalize(const ImageRecord& record, const NormalizationStats& stats);

struct BatchPlan {
    std::vector<std::vector<std::size_t>> batches;
    std::size_t last_batch_size = 0;
};

// Shuffled plans are a pure function of (seed, epoch). The last partial batch is kept.
BatchPlan batch_iterator(std::size_t split_size, std::size_t batch_size, bool shuffle,
                         std::uint64_t seed, std::uint64_t epoch = 0);

// Images without labels. The training path only ever sees this view.
class UnlabeledImages {
public:
    explicit UnlabeledImages(const DatasetSplit& split) : split_(&split) {}

    std::size_t size() const { return split_->size(); }
    const std::array<std::uint8_t, kPixelBytes>& pixels(std::size_t i) const {
        return split_->records[i].pixels;
    }

private:
    const DatasetSplit* split_;
};

}  // namespace coca::data
