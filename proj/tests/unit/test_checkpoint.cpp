#include "doctest.h"

#include <cstring>
#include <filesystem>

#include <unistd.h>

#include "ctxlog/checkpoint.hpp"
#include "ctxlog/errors.hpp"
#include "ctxlog/io.hpp"

using namespace ctxlog;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("ctxlog_ckpt_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ModelConfig cfg_with_d(std::size_t d) {
    ModelConfig c;
    c.vocab_size = 270;
    c.token_embed_dim = 16;
    c.d = d;
    c.n_layers = 1;
    c.n_heads = 2;
    c.max_message_len = 8;
    c.max_sequence_len = 8;
    return c;
}

} // namespace

TEST_CASE("checkpoint round trip is bit exact") {
    TempDir tmp;
    const auto cfg = cfg_with_d(32);
    const auto p = init_parameters(cfg, 4);
    const auto file = tmp.path / "m.ckpt";
    save_checkpoint(p, file);
    const auto q = load_checkpoint(file, cfg);
    REQUIRE(q.size() == p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(q.at(i).name == p.at(i).name);
        CHECK(q.at(i).rank == p.at(i).rank);
        const auto& a = p.at(i).value.storage();
        const auto& b = q.at(i).value.storage();
        REQUIRE(a.size() == b.size());
        CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("checkpoint corruption") {
    TempDir tmp;
    const auto cfg = cfg_with_d(32);
    const auto file = tmp.path / "m.ckpt";
    save_checkpoint(init_parameters(cfg, 4), file);
    const auto bytes = read_file(file);

    write_file_atomic(tmp.path / "short.ckpt", bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(tmp.path / "short.ckpt"), CorruptCheckpoint);

    auto bad = bytes;
    bad[0] = 'X';
    write_file_atomic(tmp.path / "magic.ckpt", bad);
    CHECK_THROWS_AS(load_checkpoint(tmp.path / "magic.ckpt"), CorruptCheckpoint);

    write_file_atomic(tmp.path / "tail.ckpt", bytes + "x");
    CHECK_THROWS_AS(load_checkpoint(tmp.path / "tail.ckpt"), CorruptCheckpoint);
}

TEST_CASE("checkpoint shape guard") {
    TempDir tmp;
    const auto file = tmp.path / "d32.ckpt";
    save_checkpoint(init_parameters(cfg_with_d(32), 1), file);
    try {
        load_checkpoint(file, cfg_with_d(64));
        FAIL("expected CorruptCheckpoint");
    } catch (const CorruptCheckpoint& e) {
        const std::string what = std::string(e.what()).substr(file.string().size());
        CHECK(what.find("shape") != std::string::npos);
        CHECK(what.find("32") != std::string::npos);
        CHECK(what.find("64") != std::string::npos);
    }
}

TEST_CASE("embedding file round trip") {
    TempDir tmp;
    Matrix<float> m(3, 5);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(i) * 0.1f - 0.7f;
    save_embeddings(m, tmp.path / "e.emb");
    CHECK(load_embeddings(tmp.path / "e.emb") == m);
    const auto bytes = read_file(tmp.path / "e.emb");
    CHECK(bytes.substr(0, 4) == "CLEM");
    CHECK(bytes.size() == 16 + 15 * 4);
    write_file_atomic(tmp.path / "cut.emb", bytes.substr(0, 20));
    CHECK_THROWS_AS(load_embeddings(tmp.path / "cut.emb"), CorruptCheckpoint);
}

TEST_CASE("atomic write replaces whole file") {
    TempDir tmp;
    const auto f = tmp.path / "x.txt";
    write_file_atomic(f, "first version, longer");
    write_file_atomic(f, "second");
    CHECK(read_file(f) == "second");
    std::size_t entries = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(tmp.path)) ++entries;
    CHECK(entries == 1);
}
