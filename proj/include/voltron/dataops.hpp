#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "voltron/rng.hpp"
#include "voltron/tensor.hpp"

namespace voltron {

// Token ids 0..4 are reserved in every vocabulary.
struct Vocabulary {
    static constexpr int kPad = 0;
    static constexpr int kNull = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr int kUnk = 4;
    static constexpr int kReserved = 5;

    std::vector<std::string> id_to_token;
    std::unordered_map<std::string, int> token_to_id;

    int size() const { return static_cast<int>(id_to_token.size()); }
    int id_of(const std::string& token) const;  // kUnk when absent
    const std::string& token_of(int id) const;

    // Reserved tokens, then the sorted unique lowercased words of `texts`,
    // then <unusedN> filler up to target_size.
    static Vocabulary build(const std::vector<std::string>& texts, int target_size);

    // Rebuilds a vocabulary from an exact id-ordered token list (checkpoints).
    static Vocabulary from_tokens(std::vector<std::string> tokens);
};

struct TokenizedUtterance {
    std::vector<int> ids;         // length L
    std::vector<uint8_t> length_mask;  // true at real (non-pad) slots

    int real_length() const;
    bool is_null() const;
};

// Lowercase + whitespace split, framed <BOS> ... <EOS>, <UNK> for OOV, padded
// to L. Truncation keeps <EOS> as the final retained token. L < 3 is an error.
TokenizedUtterance tokenize(const std::string& text, const Vocabulary& vocab, int L);

// Words between <BOS> and <EOS>, space separated.
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);

// The empty-language-context utterance: <NULL> then padding, mask true only
// at slot 0. Distinct from an empty caption, which still carries BOS/EOS.
TokenizedUtterance null_utterance(int L);

struct ClipRecord {
    std::string name;
    int height = 0;
    int width = 0;
    std::vector<std::vector<double>> frames;  // each H*W*3, RGB in [0,1]
    std::string caption;
    TokenizedUtterance tokens;  // filled by tokenize_corpus

    int frame_count() const { return static_cast<int>(frames.size()); }
};

struct Corpus {
    int height = 0;
    int width = 0;
    std::vector<ClipRecord> clips;
};

// Directory layout: <dir>/manifest.txt lists clip folders (one relative path
// per line); each clip folder holds 0.png, 1.png, ... plus caption.txt.
Corpus load_corpus(const std::string& dir);

void tokenize_corpus(Corpus& corpus, const Vocabulary& vocab, int L);

std::vector<std::string> corpus_captions(const Corpus& corpus);

struct MaskSpec {
    std::vector<uint8_t> keep;  // one flag per region
    double gamma = 0.0;

    int num_regions() const { return static_cast<int>(keep.size()); }
    int dropped_count() const;
    int kept_count() const { return num_regions() - dropped_count(); }
    std::vector<int> kept_indices() const;
    std::vector<int> dropped_indices() const;
};

// Uniform subset of exactly round(gamma * num_regions) dropped regions. One
// MaskSpec governs every frame of a context.
MaskSpec make_mask(int num_regions, double gamma, Rng& rng);

struct FrameContext {
    std::vector<int> frame_indices;           // k source positions in the clip
    std::vector<std::vector<double>> frames;  // k frames, H*W*3
    TokenizedUtterance tokens;
    int height = 0;
    int width = 0;

    int k() const { return static_cast<int>(frames.size()); }
};

// k=1: one uniform frame. k=2: first index inside the first 20% of the clip
// (i < ceil(0.2 T)), second inside the remainder. T=1 with k=2 is an error.
std::vector<int> sample_frame_indices(int num_frames, int k, Rng& rng);

FrameContext sample_frame_context(const ClipRecord& clip, int k, Rng& rng);
FrameContext context_from_indices(const ClipRecord& clip, const std::vector<int>& idx);

// H*W*3 pixel buffer -> |R| x (p*p*3) patch matrix, regions row-major, pixels
// row-major inside each patch, RGB contiguous per pixel.
Tensor patchify(const std::vector<double>& frame, int height, int width, int p);
std::vector<double> unpatchify(const Tensor& patches, int height, int width, int p);

// Standardizes each patch row to zero mean and unit variance (eps 1e-6).
Tensor normalize_targets(const Tensor& patches);

struct EpochIndex {
    uint64_t seed = 0;
    int k = 1;
    struct Entry {
        uint32_t clip_id = 0;
        std::vector<uint16_t> frame_indices;
    };
    std::vector<Entry> entries;
};

// frames_per_clip contexts per clip, order shuffled; fully determined by seed.
EpochIndex build_epoch_index(const Corpus& corpus, int frames_per_clip, int k,
                             uint64_t seed);

void write_epoch_index(const std::string& path, const EpochIndex& index);
EpochIndex read_epoch_index(const std::string& path, int k);

}  // namespace voltron
