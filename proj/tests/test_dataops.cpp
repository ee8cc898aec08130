#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "voltron/dataops.hpp"
#include "voltron/error.hpp"
#include "voltron/fixtures.hpp"
#include "voltron/rng.hpp"

using namespace voltron;
namespace fs = std::filesystem;

namespace {

std::string scratch_dir(const std::string& leaf) {
    fs::path p = fs::temp_directory_path() / "voltron-tests" / leaf;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

}  // namespace

TEST_CASE("vocabulary reserves special ids and sorts corpus words") {
    Vocabulary v = Vocabulary::build({"the Red block", "a red DISK"}, 16);
    CHECK(v.size() == 16);
    CHECK(v.token_of(Vocabulary::kPad) == "<pad>");
    CHECK(v.token_of(Vocabulary::kNull) == "<null>");
    CHECK(v.token_of(Vocabulary::kBos) == "<bos>");
    CHECK(v.token_of(Vocabulary::kEos) == "<eos>");
    CHECK(v.token_of(Vocabulary::kUnk) == "<unk>");
    // a < block < disk < red < the, lowercased and deduplicated
    CHECK(v.token_of(Vocabulary::kReserved) == "a");
    CHECK(v.id_of("red") > Vocabulary::kUnk);
    // lookup is exact; lowercasing is the tokenizer's job
    CHECK(v.id_of("RED") == Vocabulary::kUnk);
    CHECK(tokenize("RED", v, 4).ids[1] == v.id_of("red"));
    CHECK(v.id_of("zebra") == Vocabulary::kUnk);
    // filler up to the target size
    CHECK(v.token_of(15).substr(0, 7) == "<unused");

    Vocabulary back = Vocabulary::from_tokens(v.id_to_token);
    CHECK(back.id_of("red") == v.id_of("red"));
    CHECK_THROWS_AS(Vocabulary::build({"a b c d e f g h i j k l"}, 8), VocabularyError);
}

TEST_CASE("tokenize frames, pads, truncates and survives a round trip") {
    Vocabulary v = Vocabulary::build({"pick up the red block"}, 16);
    TokenizedUtterance u = tokenize("Pick up the RED block", v, 10);
    CHECK(u.ids.size() == 10);
    CHECK(u.ids[0] == Vocabulary::kBos);
    CHECK(u.ids[6] == Vocabulary::kEos);
    CHECK(u.real_length() == 7);
    for (int i = 7; i < 10; ++i) {
        CHECK(u.ids[i] == Vocabulary::kPad);
        CHECK_FALSE(u.length_mask[i]);
    }
    CHECK(detokenize(u.ids, v) == "pick up the red block");

    TokenizedUtterance unk = tokenize("grab the red block", v, 10);
    CHECK(unk.ids[1] == Vocabulary::kUnk);

    // truncation keeps <EOS> as the final retained token
    TokenizedUtterance t = tokenize("pick up the red block", v, 4);
    CHECK(t.real_length() == 4);
    CHECK(t.ids[3] == Vocabulary::kEos);

    TokenizedUtterance n = null_utterance(6);
    CHECK(n.is_null());
    CHECK(n.ids[0] == Vocabulary::kNull);
    CHECK(n.real_length() == 1);
    CHECK_FALSE(tokenize("", v, 6).is_null());

    CHECK_THROWS_AS(tokenize("hi", v, 2), ConfigError);
}

TEST_CASE("patchify orders regions row-major with contiguous rgb pixels") {
    // 4x4 frame, p=2: four regions; pixel value encodes (y, x, channel)
    const int h = 4, w = 4, p = 2;
    std::vector<double> frame(h * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                frame[(size_t(y) * w + x) * 3 + c] = (y * 100 + x * 10 + c) / 1000.0;

    Tensor patches = patchify(frame, h, w, p);
    CHECK(patches.rows() == 4);
    CHECK(patches.cols() == p * p * 3);
    // region 1 covers x in [2,4), y in [0,2); its first pixel is (0,2)
    CHECK(patches.values()[1 * 12 + 0] == doctest::Approx(0.020));
    CHECK(patches.values()[1 * 12 + 1] == doctest::Approx(0.021));
    // region 2 covers y in [2,4), x in [0,2); its last pixel is (3,1) blue
    CHECK(patches.values()[2 * 12 + 11] == doctest::Approx(0.312));

    CHECK_THROWS_AS(patchify(frame, 5, 4, 2), ConfigError);
    std::vector<double> short_frame(frame.begin(), frame.end() - 3);
    CHECK_THROWS_AS(patchify(short_frame, 4, 4, 2), ShapeError);
}

TEST_CASE("make_mask drops exactly round(gamma * regions)") {
    Rng rng = Rng::seeded(5);
    for (int regions : {4, 9, 16, 35}) {
        for (double gamma : {0.3, 0.5, 0.75, 0.9}) {
            long want = std::lround(gamma * regions);
            if (want < 1 || want >= regions) continue;
            MaskSpec m = make_mask(regions, gamma, rng);
            long dropped = std::count(m.keep.begin(), m.keep.end(), 0);
            CHECK(dropped == want);
        }
    }

    Rng a = Rng::seeded(9), b = Rng::seeded(9);
    CHECK(make_mask(16, 0.75, a).keep == make_mask(16, 0.75, b).keep);

    // every region must get dropped sometimes: uniform shuffle, not a prefix
    std::vector<int> hits(8, 0);
    Rng r2 = Rng::seeded(77);
    for (int t = 0; t < 400; ++t) {
        MaskSpec m = make_mask(8, 0.5, r2);
        for (int i = 0; i < 8; ++i) hits[i] += m.keep[i] ? 0 : 1;
    }
    for (int i = 0; i < 8; ++i) {
        CHECK(hits[i] > 120);
        CHECK(hits[i] < 280);
    }

    CHECK_THROWS_AS(make_mask(16, 0.0, rng), ConfigError);
    CHECK_THROWS_AS(make_mask(16, 1.0, rng), ConfigError);
    CHECK_THROWS_AS(make_mask(16, 0.01, rng), ConfigError);  // rounds to zero dropped
}

TEST_CASE("frame sampling respects the dual-frame 20/80 split") {
    Rng rng = Rng::seeded(3);
    for (int t = 0; t < 100; ++t) {
        auto one = sample_frame_indices(7, 1, rng);
        REQUIRE(one.size() == 1);
        CHECK(one[0] >= 0);
        CHECK(one[0] < 7);
    }
    // 10 frames: first index from [0,2), second from [2,10)
    bool saw_early_1 = false;
    for (int t = 0; t < 200; ++t) {
        auto two = sample_frame_indices(10, 2, rng);
        REQUIRE(two.size() == 2);
        CHECK(two[0] < 2);
        CHECK(two[1] >= 2);
        CHECK(two[1] < 10);
        saw_early_1 = saw_early_1 || two[0] == 1;
    }
    CHECK(saw_early_1);
    CHECK_THROWS_AS(sample_frame_indices(1, 2, rng), DataError);
    CHECK_THROWS_AS(sample_frame_indices(5, 3, rng), ConfigError);
}

TEST_CASE("corpus loading round-trips a generated fixture") {
    std::string dir = scratch_dir("colors-corpus");
    write_color_corpus(dir, 4, 3, 16, 16, 21);
    Corpus c = load_corpus(dir);
    CHECK(c.height == 16);
    CHECK(c.width == 16);
    REQUIRE(c.clips.size() == 4);
    for (const ClipRecord& clip : c.clips) {
        CHECK(clip.frame_count() == 3);
        CHECK(clip.caption.find("checker field") != std::string::npos);
        for (const auto& f : clip.frames) {
            REQUIRE(f.size() == size_t(16) * 16 * 3);
            for (double v : f) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
    }

    Vocabulary v = Vocabulary::build({c.clips[0].caption}, 32);
    tokenize_corpus(c, v, 8);
    CHECK(c.clips[0].tokens.real_length() > 2);

    try {
        load_corpus(dir + "/does-not-exist");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("does-not-exist") != std::string::npos);
    }
}

TEST_CASE("epoch index is deterministic and covers every clip") {
    std::string dir = scratch_dir("index-corpus");
    write_color_corpus(dir, 5, 4, 16, 16, 8);
    Corpus c = load_corpus(dir);

    EpochIndex a = build_epoch_index(c, 4, 2, 123);
    EpochIndex b = build_epoch_index(c, 4, 2, 123);
    REQUIRE(a.entries.size() == 20);
    bool same = true, shuffled = false;
    std::vector<int> per_clip(5, 0);
    for (size_t i = 0; i < a.entries.size(); ++i) {
        same = same && a.entries[i].clip_id == b.entries[i].clip_id &&
               a.entries[i].frame_indices == b.entries[i].frame_indices;
        per_clip[a.entries[i].clip_id]++;
        shuffled = shuffled || (i > 0 && a.entries[i].clip_id < a.entries[i - 1].clip_id);
    }
    CHECK(same);
    CHECK(shuffled);
    for (int n : per_clip) CHECK(n == 4);
    for (const auto& e : a.entries) {
        REQUIRE(e.frame_indices.size() == 2);
        CHECK(e.frame_indices[1] < 4);
    }

    EpochIndex other = build_epoch_index(c, 4, 2, 124);
    bool differs = false;
    for (size_t i = 0; i < a.entries.size(); ++i)
        differs = differs || a.entries[i].clip_id != other.entries[i].clip_id ||
                  a.entries[i].frame_indices != other.entries[i].frame_indices;
    CHECK(differs);

    std::string path = dir + "/epoch.veix";
    write_epoch_index(path, a);
    EpochIndex back = read_epoch_index(path, 2);
    CHECK(back.seed == a.seed);
    REQUIRE(back.entries.size() == a.entries.size());
    for (size_t i = 0; i < a.entries.size(); ++i) {
        CHECK(back.entries[i].clip_id == a.entries[i].clip_id);
        CHECK(back.entries[i].frame_indices == a.entries[i].frame_indices);
    }
    CHECK_THROWS_AS(read_epoch_index(path, 1), DataError);
}
