#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "voltron/adaptation.hpp"
#include "voltron/checkpoint.hpp"
#include "voltron/error.hpp"
#include "voltron/model.hpp"
#include "voltron/png_io.hpp"
#include "voltron/verify.hpp"

using namespace voltron;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& leaf) {
    fs::path dir = fs::temp_directory_path() / "voltron-io-tests" / leaf;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void put_be32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v >> 24));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4],
               const std::vector<uint8_t>& payload) {
    put_be32(out, uint32_t(payload.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    uint32_t crc = uint32_t(::crc32(0, out.data() + start, uInt(out.size() - start)));
    put_be32(out, crc);
}

// Assembles a minimal non-interlaced PNG around already-filtered scanlines.
void craft_png(const fs::path& path, int width, int height, uint8_t color_type,
               uint8_t bit_depth, const std::vector<uint8_t>& raw_scanlines) {
    std::vector<uint8_t> file = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

    std::vector<uint8_t> ihdr;
    put_be32(ihdr, uint32_t(width));
    put_be32(ihdr, uint32_t(height));
    ihdr.push_back(bit_depth);
    ihdr.push_back(color_type);
    ihdr.push_back(0);  // deflate
    ihdr.push_back(0);  // adaptive filters
    ihdr.push_back(0);  // no interlace
    put_chunk(file, "IHDR", ihdr);

    uLongf bound = compressBound(uLong(raw_scanlines.size()));
    std::vector<uint8_t> idat(bound);
    REQUIRE(compress2(idat.data(), &bound, raw_scanlines.data(),
                      uLong(raw_scanlines.size()), 6) == Z_OK);
    idat.resize(bound);
    put_chunk(file, "IDAT", idat);
    put_chunk(file, "IEND", {});

    std::ofstream os(path, std::ios::binary);
    os.write(reinterpret_cast<const char*>(file.data()), std::streamsize(file.size()));
}

}  // namespace

TEST_CASE("rgb png survives a write/read round trip") {
    fs::path dir = scratch_dir("png-rgb");
    Image img;
    img.width = 9;
    img.height = 5;
    img.rgb.resize(size_t(9) * 5 * 3);
    Rng rng = Rng::seeded(77);
    for (auto& b : img.rgb) b = uint8_t(rng.uniform_int(256));

    fs::path path = dir / "img.png";
    write_png(path.string(), img);
    Image back = read_png(path.string());

    CHECK(back.width == 9);
    CHECK(back.height == 5);
    CHECK(back.rgb == img.rgb);
}

TEST_CASE("grayscale and rgba pngs read as rgb") {
    fs::path dir = scratch_dir("png-kinds");

    SUBCASE("grayscale expands to equal channels") {
        // 3x2 gray, one filter byte (0 = none) per row.
        std::vector<uint8_t> raw = {0, 10, 20, 30, 0, 40, 50, 255};
        fs::path path = dir / "gray.png";
        craft_png(path, 3, 2, 0, 8, raw);
        Image img = read_png(path.string());
        CHECK(img.width == 3);
        CHECK(img.height == 2);
        CHECK(img.at(0, 0, 0) == 10);
        CHECK(img.at(0, 0, 1) == 10);
        CHECK(img.at(0, 0, 2) == 10);
        CHECK(img.at(1, 2, 0) == 255);
    }

    SUBCASE("alpha is dropped") {
        std::vector<uint8_t> raw = {0, 1, 2, 3, 200, 4, 5, 6, 10};
        fs::path path = dir / "rgba.png";
        craft_png(path, 2, 1, 6, 8, raw);
        Image img = read_png(path.string());
        CHECK(img.width == 2);
        CHECK(img.height == 1);
        CHECK(img.at(0, 0, 0) == 1);
        CHECK(img.at(0, 0, 1) == 2);
        CHECK(img.at(0, 0, 2) == 3);
        CHECK(img.at(0, 1, 0) == 4);
        CHECK(img.at(0, 1, 2) == 6);
    }
}

TEST_CASE("unsupported or malformed pngs are rejected") {
    fs::path dir = scratch_dir("png-bad");

    SUBCASE("not a png at all") {
        fs::path path = dir / "junk.png";
        std::ofstream(path) << "certainly not an image";
        CHECK_THROWS_AS(read_png(path.string()), DataError);
    }

    SUBCASE("missing file") {
        CHECK_THROWS_AS(read_png((dir / "absent.png").string()), DataError);
    }

    SUBCASE("16-bit depth is out of scope") {
        std::vector<uint8_t> raw = {0, 0, 1, 0, 2, 0, 3, 0, 4, 0, 5, 0, 6};
        fs::path path = dir / "deep.png";
        craft_png(path, 2, 1, 2, 16, raw);
        CHECK_THROWS_AS(read_png(path.string()), DataError);
    }

    SUBCASE("palette images are out of scope") {
        std::vector<uint8_t> raw = {0, 0, 1};
        fs::path path = dir / "pal.png";
        craft_png(path, 2, 1, 3, 8, raw);
        CHECK_THROWS_AS(read_png(path.string()), DataError);
    }

    SUBCASE("truncated file") {
        Image img;
        img.width = 8;
        img.height = 8;
        img.rgb.assign(size_t(8) * 8 * 3, 123);
        fs::path whole = dir / "whole.png";
        write_png(whole.string(), img);
        std::ifstream is(whole, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(is)),
                                std::istreambuf_iterator<char>());
        fs::path cut = dir / "cut.png";
        std::ofstream os(cut, std::ios::binary);
        os.write(bytes.data(), std::streamsize(bytes.size() / 2));
        os.close();
        CHECK_THROWS_AS(read_png(cut.string()), DataError);
    }
}

TEST_CASE("checkpoints restore the full training state") {
    fs::path dir = scratch_dir("ckpt");
    ModelConfig cfg = toy_config(Variant::VGen);
    cfg.seed = 99;
    Vocabulary vocab = toy_vocab(cfg.vocab_size);
    VoltronModel model = VoltronModel::create(cfg, vocab);

    AdamW opt(model.trainable_parameters());
    // Give the moments recognizable non-zero content.
    {
        Rng g = Rng::seeded(5);
        for (auto& p : opt.parameters()) {
            std::vector<double> grad(size_t(p.size()));
            for (auto& v : grad) v = g.normal() * 0.01;
            p.node()->grad = grad;
        }
        AdamWHyper hp;
        hp.lr = 1e-3;
        opt.step(hp);
    }

    std::vector<RngSnapshot> streams = {{"data", {1, 2, 3, 4}}, {"mask", {5, 6, 7, 8}}};
    fs::path path = dir / "state.vckp";
    save_checkpoint(path.string(), model, &opt, streams, 1234, 7);

    SUBCASE("no temporary files remain next to the checkpoint") {
        int entries = 0;
        for (const auto& e : fs::directory_iterator(dir)) {
            ++entries;
            CHECK(e.path().filename() == "state.vckp");
        }
        CHECK(entries == 1);
    }

    LoadedCheckpoint loaded = load_checkpoint(path.string());

    SUBCASE("counters, streams, and vocabulary match") {
        CHECK(loaded.step == 1234);
        CHECK(loaded.epoch == 7);
        CHECK(loaded.has_optimizer);
        CHECK(loaded.adam_step == 1);
        REQUIRE(loaded.streams.size() == 2);
        CHECK(loaded.find_stream("mask") != nullptr);
        CHECK(loaded.find_stream("mask")->state == std::array<uint64_t, 4>{5, 6, 7, 8});
        CHECK(loaded.find_stream("nope") == nullptr);
        CHECK(loaded.model.vocab.id_to_token == vocab.id_to_token);
        CHECK(loaded.model.cfg.variant == cfg.variant);
        CHECK(loaded.model.cfg.dim == cfg.dim);
    }

    SUBCASE("parameters and forward outputs are bit-identical") {
        auto want = model.named_parameters();
        auto got = loaded.model.named_parameters();
        REQUIRE(want.size() == got.size());
        size_t mismatched = 0;
        for (size_t i = 0; i < want.size(); ++i) {
            CHECK(want[i].name == got[i].name);
            for (size_t j = 0; j < want[i].tensor.values().size(); ++j)
                mismatched += want[i].tensor.values()[j] != got[i].tensor.values()[j];
        }
        CHECK(mismatched == 0);

        std::vector<double> frame(size_t(cfg.height) * cfg.width * 3);
        Rng rng = Rng::seeded(31);
        for (auto& v : frame) v = rng.uniform();
        TokenizedUtterance cond = tokenize("red field", vocab, cfg.caption_len);
        Tensor a = frozen_visual_rows(model, frame, cfg.height, cfg.width, cond);
        Tensor b = frozen_visual_rows(loaded.model, frame, cfg.height, cfg.width, cond);
        REQUIRE(a.size() == b.size());
        mismatched = 0;
        for (int i = 0; i < a.size(); ++i)
            mismatched += a.values()[size_t(i)] != b.values()[size_t(i)];
        CHECK(mismatched == 0);
    }

    SUBCASE("optimizer moments restore exactly") {
        AdamW fresh(loaded.model.trainable_parameters());
        loaded.restore_optimizer(fresh);
        CHECK(fresh.step_count() == opt.step_count());
        for (size_t i = 0; i < opt.parameters().size(); ++i) {
            CHECK(fresh.first_moment(i) == opt.first_moment(i));
            CHECK(fresh.second_moment(i) == opt.second_moment(i));
        }
    }

    SUBCASE("saving without an optimizer marks its absence") {
        fs::path bare = dir / "bare.vckp";
        save_checkpoint(bare.string(), model, nullptr, {}, 1, 0);
        LoadedCheckpoint lean = load_checkpoint(bare.string());
        CHECK(!lean.has_optimizer);
        AdamW fresh(lean.model.trainable_parameters());
        CHECK_THROWS_AS(lean.restore_optimizer(fresh), CheckpointError);
    }
}

TEST_CASE("broken checkpoints fail loudly") {
    fs::path dir = scratch_dir("ckpt-bad");

    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_checkpoint((dir / "absent.vckp").string()), CheckpointError);
    }

    SUBCASE("wrong magic") {
        fs::path path = dir / "wrong.vckp";
        std::ofstream(path, std::ios::binary) << "VDEMnot a checkpoint";
        CHECK_THROWS_AS(load_checkpoint(path.string()), CheckpointError);
    }

    SUBCASE("truncation") {
        ModelConfig cfg = toy_config(Variant::VCond);
        VoltronModel model = VoltronModel::create(cfg, toy_vocab(cfg.vocab_size));
        fs::path whole = dir / "whole.vckp";
        save_checkpoint(whole.string(), model, nullptr, {}, 0, 0);
        std::ifstream is(whole, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(is)),
                                std::istreambuf_iterator<char>());
        REQUIRE(bytes.size() > 100);
        fs::path cut = dir / "cut.vckp";
        std::ofstream os(cut, std::ios::binary);
        os.write(bytes.data(), std::streamsize(bytes.size() - 57));
        os.close();
        CHECK_THROWS_AS(load_checkpoint(cut.string()), CheckpointError);
    }
}
