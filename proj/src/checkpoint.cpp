#include "ctxlog/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <string>

#include "ctxlog/errors.hpp"
#include "ctxlog/io.hpp"

namespace ctxlog {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

void put_f32s(std::string& out, const float* data, std::size_t n) {
    out.append(reinterpret_cast<const char*>(data), n * sizeof(float));
}

class Reader {
public:
    Reader(std::string bytes, std::string origin) : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, bytes_.data() + pos_, 4);
        pos_ += 4;
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void f32s(float* dst, std::size_t n) {
        need(n * sizeof(float));
        std::memcpy(dst, bytes_.data() + pos_, n * sizeof(float));
        pos_ += n * sizeof(float);
    }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n)
            throw CorruptCheckpoint(origin_ + ": truncated at byte " + std::to_string(pos_));
    }
    std::string bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

std::string read_bytes(const std::filesystem::path& path) {
    try {
        return read_file(path);
    } catch (const IoError& e) {
        throw CorruptCheckpoint(e.what());
    }
}

std::string shape_str(std::size_t r, std::size_t c) {
    return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

} // namespace

void save_checkpoint(const ParameterStore<float>& params, const std::filesystem::path& path) {
    std::string out = "CLCK";
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& e : params) {
        put_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out += e.name;
        put_u32(out, static_cast<std::uint32_t>(e.rank));
        if (e.rank == 1) {
            put_u32(out, static_cast<std::uint32_t>(e.value.cols()));
        } else {
            put_u32(out, static_cast<std::uint32_t>(e.value.rows()));
            put_u32(out, static_cast<std::uint32_t>(e.value.cols()));
        }
        put_f32s(out, e.value.data(), e.value.size());
    }
    write_file_atomic(path, out);
}

ParameterStore<float> load_checkpoint(const std::filesystem::path& path) {
    Reader r(read_bytes(path), path.string());
    if (r.str(4) != "CLCK") throw CorruptCheckpoint(path.string() + ": bad magic");
    if (auto v = r.u32(); v != kVersion) throw CorruptCheckpoint(path.string() + ": unsupported version " + std::to_string(v));
    const std::uint32_t count = r.u32();
    ParameterStore<float> ps;
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::uint32_t name_len = r.u32();
        if (name_len > 4096) throw CorruptCheckpoint(path.string() + ": implausible name length");
        std::string name = r.str(name_len);
        const std::uint32_t rank = r.u32();
        std::size_t rows = 1, cols = 1;
        if (rank == 1) {
            cols = r.u32();
        } else if (rank == 2) {
            rows = r.u32();
            cols = r.u32();
        } else {
            throw CorruptCheckpoint(path.string() + ": tensor " + name + " has unsupported rank " + std::to_string(rank));
        }
        if (rows * cols > (std::size_t{1} << 31)) throw CorruptCheckpoint(path.string() + ": implausible tensor size");
        Matrix<float> m(rows, cols);
        r.f32s(m.data(), m.size());
        try {
            ps.add(std::move(name), rank, std::move(m));
        } catch (const ShapeMismatch& e) {
            throw CorruptCheckpoint(path.string() + ": " + e.what());
        }
    }
    if (!r.at_end()) throw CorruptCheckpoint(path.string() + ": trailing bytes");
    return ps;
}

ParameterStore<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg) {
    auto loaded = load_checkpoint(path);
    const auto expected = init_parameters(cfg, 0);
    if (loaded.size() != expected.size())
        throw CorruptCheckpoint(path.string() + ": expected " + std::to_string(expected.size()) + " tensors, found " +
                                std::to_string(loaded.size()));
    for (const auto& e : expected) {
        if (!loaded.contains(e.name)) throw CorruptCheckpoint(path.string() + ": missing tensor " + e.name);
        const auto& got = loaded.value(e.name);
        if (!got.same_shape(e.value))
            throw CorruptCheckpoint(path.string() + ": tensor " + e.name + " has shape " +
                                    shape_str(got.rows(), got.cols()) + ", config expects " +
                                    shape_str(e.value.rows(), e.value.cols()));
    }
    // Re-order to the canonical layout.
    ParameterStore<float> ordered;
    for (const auto& e : expected) ordered.add(e.name, e.rank, loaded.value(e.name));
    return ordered;
}

void save_embeddings(const Matrix<float>& embeddings, const std::filesystem::path& path) {
    std::string out = "CLEM";
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(embeddings.rows()));
    put_u32(out, static_cast<std::uint32_t>(embeddings.cols()));
    put_f32s(out, embeddings.data(), embeddings.size());
    write_file_atomic(path, out);
}

Matrix<float> load_embeddings(const std::filesystem::path& path) {
    Reader r(read_bytes(path), path.string());
    if (r.str(4) != "CLEM") throw CorruptCheckpoint(path.string() + ": bad magic");
    if (auto v = r.u32(); v != kVersion) throw CorruptCheckpoint(path.string() + ": unsupported version " + std::to_string(v));
    const std::uint32_t count = r.u32();
    const std::uint32_t dim = r.u32();
    Matrix<float> m(count, dim);
    r.f32s(m.data(), m.size());
    if (!r.at_end()) throw CorruptCheckpoint(path.string() + ": trailing bytes");
    return m;
}

} // namespace ctxlog
