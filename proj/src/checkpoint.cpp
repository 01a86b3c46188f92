#include "coca/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace coca {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'O', 'C', 'A', 'C', 'K', 'P', 'T'};

template <typename U>
void put(std::string& out, U v) {
    char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    out.append(buf, sizeof(U));
}

void put_string(std::string& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

class Reader {
public:
    explicit Reader(const std::string& bytes, std::size_t begin, std::size_t end) : b_(bytes), pos_(begin), end_(end) {}

    template <typename U>
    U get() {
        need(sizeof(U));
        U v;
        std::memcpy(&v, b_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }
    std::string get_string() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void read_floats(float* dst, std::size_t count) {
        if (count > (end_ - pos_) / sizeof(float)) throw CheckpointError("checkpoint truncated");
        std::memcpy(dst, b_.data() + pos_, count * sizeof(float));
        pos_ += count * sizeof(float);
    }
    bool done() const { return pos_ == end_; }

private:
    void need(std::size_t n) const {
        if (n > end_ - pos_) throw CheckpointError("checkpoint truncated");
    }
    const std::string& b_;
    std::size_t pos_, end_;
};

}  // namespace

const Tensor<float>& Checkpoint::tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw CheckpointError("checkpoint has no tensor named " + name);
}

bool Checkpoint::has_tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return true;
    return false;
}

const std::string& Checkpoint::get(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw CheckpointError("checkpoint metadata lacks key " + key);
    return it->second;
}

std::uint32_t crc32_of(const std::string& bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
    std::size_t left = bytes.size();
    while (left > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
        crc = ::crc32(crc, p, chunk);
        p += chunk;
        left -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::string payload;
    put<std::uint32_t>(payload, static_cast<std::uint32_t>(ckpt.meta.size()));
    for (const auto& [k, v] : ckpt.meta) {
        put_string(payload, k);
        put_string(payload, v);
    }
    put<std::uint32_t>(payload, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        if (t.size() != shape_size(t.shape)) throw CheckpointError("tensor " + name + " has inconsistent shape");
        put_string(payload, name);
        put<std::uint32_t>(payload, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape) put<std::uint64_t>(payload, d);
        payload.append(reinterpret_cast<const char*>(t.ptr()), t.size() * sizeof(float));
    }
    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, Checkpoint::kVersion);
    put<std::uint64_t>(out, payload.size());
    out += payload;
    put<std::uint32_t>(out, crc32_of(payload));
    return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    constexpr std::size_t header = sizeof(kMagic) + 4 + 8;
    if (bytes.size() < header + 4 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw CheckpointError("not a checkpoint file (bad magic)");
    Reader head(bytes, sizeof(kMagic), header);
    const auto version = head.get<std::uint32_t>();
    if (version != Checkpoint::kVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const auto payload_bytes = head.get<std::uint64_t>();
    if (payload_bytes != bytes.size() - header - 4) throw CheckpointError("checkpoint truncated or padded");
    const std::string payload = bytes.substr(header, payload_bytes);
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + header + payload_bytes, 4);
    if (stored != crc32_of(payload)) throw CheckpointError("checkpoint checksum mismatch (corrupted file)");

    Checkpoint ckpt;
    Reader r(payload, 0, payload.size());
    const auto meta_count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < meta_count; ++i) {
        auto k = r.get_string();
        ckpt.meta[k] = r.get_string();
    }
    const auto tensor_count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < tensor_count; ++i) {
        auto name = r.get_string();
        const auto rank = r.get<std::uint32_t>();
        Shape shape(rank);
        for (auto& d : shape) d = r.get<std::uint64_t>();
        Tensor<float> t(shape);
        r.read_floats(t.ptr(), t.size());
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    if (!r.done()) throw CheckpointError("trailing bytes in checkpoint payload");
    return ckpt;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    auto partial = path;
    partial += ".partial";
    {
        std::ofstream out(partial, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + partial.string() + " for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) {
            out.close();
            std::filesystem::remove(partial);
            throw std::runtime_error("write failed for " + partial.string() + " (disk full?)");
        }
    }
    std::filesystem::rename(partial, path);
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str());
}

}  // namespace coca
