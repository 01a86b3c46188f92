#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "coca/app/fetch.hpp"

#include <openssl/evp.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <memory>
#include <vector>

#include <httplib.h>

#include "coca/cifar.hpp"

namespace fs = std::filesystem;

namespace coca::app {

namespace {

bool is_url(const std::string& s) { return s.rfind("http://", 0) == 0 || s.rfind("https://", 0) == 0; }

// Splits "https://host[:port]/path" into ("https://host[:port]", "/path").
std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme_end = url.find("://") + 3;
    const auto slash = url.find('/', scheme_end);
    if (slash == std::string::npos) return {url, "/"};
    return {url.substr(0, slash), url.substr(slash)};
}

void download(const std::string& url, const fs::path& out, std::ostream& log) {
    const auto [host, path] = split_url(url);
    httplib::Client client(host);
    client.set_follow_location(true);
    client.set_connection_timeout(30);
    client.set_read_timeout(120);
    std::ofstream file(out, std::ios::binary | std::ios::trunc);
    if (!file) throw std::runtime_error("cannot write " + out.string());
    log << "downloading " << url << "\n";
    auto res = client.Get(path, [&](const char* data, std::size_t n) {
        file.write(data, static_cast<std::streamsize>(n));
        return static_cast<bool>(file);
    });
    if (!res) throw std::runtime_error("download of " + url + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw std::runtime_error("download of " + url + " failed: HTTP status " + std::to_string(res->status));
    file.close();
    if (!file) throw std::runtime_error("write error on " + out.string());
}

std::uint64_t parse_octal(const char* p, std::size_t n) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n && p[i]; ++i) {
        if (p[i] == ' ') continue;
        if (p[i] < '0' || p[i] > '7') throw std::runtime_error("corrupt tar header (size field)");
        v = v * 8 + static_cast<std::uint64_t>(p[i] - '0');
    }
    return v;
}

std::string field(const char* p, std::size_t n) {
    std::size_t len = 0;
    while (len < n && p[len]) ++len;
    return std::string(p, len);
}

bool batch_files_present(const fs::path& dir) {
    for (const char* f : data::kTrainFiles)
        if (!fs::is_regular_file(dir / f)) return false;
    return fs::is_regular_file(dir / data::kTestFile);
}

}  // namespace

std::string md5_file(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + file.string());
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_md5(), nullptr) != 1) throw std::runtime_error("MD5 init failed");
    std::vector<char> buf(1 << 20);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), digest, &len);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

std::size_t unpack_batches(const fs::path& archive, const fs::path& out_dir) {
    gzFile gz = gzopen(archive.c_str(), "rb");
    if (!gz) throw std::runtime_error("cannot open archive " + archive.string());
    std::unique_ptr<gzFile_s, decltype(&gzclose)> guard(gz, gzclose);
    auto read_block = [&](char* block, std::size_t n) {
        const int got = gzread(gz, block, static_cast<unsigned>(n));
        if (got < 0) throw std::runtime_error("gzip stream error in " + archive.string());
        return static_cast<std::size_t>(got);
    };

    fs::create_directories(out_dir);
    std::size_t written = 0;
    std::array<char, 512> header{};
    std::vector<char> body;
    while (true) {
        const std::size_t got = read_block(header.data(), header.size());
        if (got == 0) break;
        if (got != header.size()) throw std::runtime_error("truncated tar header in " + archive.string());
        if (std::all_of(header.begin(), header.end(), [](char c) { return c == 0; })) break;

        std::string name = field(header.data(), 100);
        const std::string prefix = field(header.data() + 345, 155);
        if (field(header.data() + 257, 5) == "ustar" && !prefix.empty()) name = prefix + "/" + name;
        const std::uint64_t size = parse_octal(header.data() + 124, 12);
        const char type = header[156];
        const std::uint64_t padded = (size + 511) / 512 * 512;
        body.resize(padded);
        if (padded && read_block(body.data(), padded) != padded)
            throw std::runtime_error("truncated tar member " + name);

        if (type != '0' && type != '\0') continue;
        const fs::path member(name);
        if (name.find("..") != std::string::npos || member.is_absolute())
            throw std::runtime_error("refusing unsafe archive path " + name);
        auto it = member.begin();
        if (it == member.end() || *it != kBatchDirName) continue;
        const fs::path leaf = member.filename();
        if (leaf.empty() || std::distance(member.begin(), member.end()) != 2) continue;
        std::ofstream out(out_dir / leaf, std::ios::binary | std::ios::trunc);
        out.write(body.data(), static_cast<std::streamsize>(size));
        if (!out) throw std::runtime_error("cannot write " + (out_dir / leaf).string());
        ++written;
    }
    return written;
}

FetchResult fetch_cifar10(const FetchOptions& opt, std::ostream& log) {
    if (opt.dest.empty()) throw std::invalid_argument("fetch needs a destination directory");
    const fs::path final_dir = opt.dest / kBatchDirName;
    const fs::path marker = final_dir / kVerifiedMarker;
    if (fs::is_regular_file(marker)) {
        std::ifstream in(marker);
        std::string recorded;
        std::getline(in, recorded);
        if (recorded == opt.md5 && batch_files_present(final_dir)) {
            log << "dataset already verified at " << final_dir.string() << "\n";
            return {final_dir, true};
        }
    }
    if (fs::exists(final_dir))
        throw std::runtime_error(final_dir.string() + " exists but is not a verified dataset; remove it and retry");

    fs::path archive;
    fs::path temp;
    if (is_url(opt.source)) {
        temp = fs::temp_directory_path() / ("coca-cifar10-" + std::to_string(::getpid()) + ".tar.gz.partial");
        try {
            download(opt.source, temp, log);
        } catch (...) {
            fs::remove(temp);
            throw;
        }
        archive = temp;
    } else {
        archive = opt.source;
        if (!fs::is_regular_file(archive)) throw std::runtime_error("archive not found: " + archive.string());
    }
    struct Cleanup {
        fs::path p;
        ~Cleanup() {
            std::error_code ec;
            if (!p.empty()) fs::remove(p, ec);
        }
    } cleanup{temp};

    const std::string digest = md5_file(archive);
    if (digest != opt.md5)
        throw ChecksumError("checksum mismatch for " + opt.source + ": expected md5 " + opt.md5 + ", got " + digest);
    log << "md5 verified: " << digest << "\n";

    const fs::path partial = opt.dest / (std::string(kBatchDirName) + ".partial");
    fs::remove_all(partial);
    try {
        const std::size_t n = unpack_batches(archive, partial);
        log << "unpacked " << n << " files\n";
        data::load_cifar10_binary(partial);
        std::ofstream(partial / kVerifiedMarker) << opt.md5 << "\n";
        fs::rename(partial, final_dir);
    } catch (...) {
        std::error_code ec;
        fs::remove_all(partial, ec);
        throw;
    }
    log << "dataset ready at " << final_dir.string() << "\n";
    return {final_dir, false};
}

}  // namespace coca::app
