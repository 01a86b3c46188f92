#pragma once

#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>

namespace coca::app {

inline constexpr const char* kCifarUrl = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz";
inline constexpr const char* kCifarMd5 = "c32a1d4ab5d03f1284b67883e8d87530";
inline constexpr const char* kBatchDirName = "cifar-10-batches-bin";
inline constexpr const char* kVerifiedMarker = ".coca-verified";

class ChecksumError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FetchOptions {
    std::string source = kCifarUrl;  // http(s) URL or a local archive path
    std::filesystem::path dest;      // the batch directory lands in dest/cifar-10-batches-bin
    std::string md5 = kCifarMd5;
};

struct FetchResult {
    std::filesystem::path dataset_dir;
    bool already_present = false;
};

// Verifies the archive checksum before touching `dest`, unpacks into a `.partial`
// directory, validates every batch file, then renames into place. A second call on
// verified data does nothing.
FetchResult fetch_cifar10(const FetchOptions& options, std::ostream& log);

std::string md5_file(const std::filesystem::path& file);

// Extracts the regular files under cifar-10-batches-bin/ of a gzip'd ustar archive
// into `out_dir` (flattened). Returns the number of files written.
std::size_t unpack_batches(const std::filesystem::path& archive, const std::filesystem::path& out_dir);

}  // namespace coca::app
