#pragma once

#include <string>
#include <vector>

#include "voltron/config.hpp"
#include "voltron/dataops.hpp"
#include "voltron/nn.hpp"
#include "voltron/tensor.hpp"

namespace voltron {

// Output of the encoder plus the row layout needed to slice it apart:
// visible patch rows for each of the k frames first, then the L language rows.
struct EncodedSequence {
    Tensor h;  // S' x dim
    int k = 0;
    int visible_per_frame = 0;
    int caption_len = 0;
    std::vector<int> visible_region_ids;  // shared by all frames
    std::vector<uint8_t> lang_mask;       // non-pad language slots
    bool null_conditioned = false;

    int visual_row_count() const { return k * visible_per_frame; }
    Tensor visual_rows() const { return slice_rows(h, 0, visual_row_count()); }
    Tensor frame_rows(int frame) const {
        return slice_rows(h, frame * visible_per_frame, (frame + 1) * visible_per_frame);
    }
    Tensor language_rows() const {
        return slice_rows(h, visual_row_count(), visual_row_count() + caption_len);
    }
};

// Joint vision+language encoder. Masked patches are dropped before embedding,
// so the output cannot depend on their pixels. The language table is frozen
// (seeded from token strings, or loaded from a file); only its projection
// trains.
struct Encoder {
    ModelConfig cfg;
    Tensor lang_table;  // vocab_size x lang_dim, requires_grad = false
    Linear patch_proj;  // patch_dim -> dim
    Linear lang_proj;   // lang_dim -> dim
    Tensor e_img, e_lang;      // 1 x dim modality embeddings
    std::vector<Tensor> e_frame;  // k frame-index embeddings, 1 x dim
    std::vector<TransformerBlock> blocks;
    Tensor final_scale;  // 1 x dim, used when cfg.final_norm
    Tensor pos_2d;       // regions x dim, constant
    Tensor pos_1d;       // caption_len x dim, constant

    static Encoder create(const ModelConfig& cfg, const Vocabulary& vocab, Rng& rng);

    // mask == nullptr means every region is visible (adaptation mode).
    Tensor embed_patches(const FrameContext& ctx, const MaskSpec* mask) const;
    Tensor embed_language(const TokenizedUtterance& utterance) const;
    EncodedSequence encode(const FrameContext& ctx, const MaskSpec* mask,
                           const TokenizedUtterance& utterance) const;

    void collect(std::vector<Tensor>& trainable) const;  // excludes lang_table
};

// Deterministic stand-in rows for a pretrained text embedding table: each
// token string hashes to its own Gaussian row, N(0, 1/lang_dim).
Tensor seeded_language_table(const Vocabulary& vocab, int lang_dim);

// "VEMB" file: u32 vocab size, u32 lang_dim, row-major little-endian float32.
Tensor read_embedding_table(const std::string& path);
void write_embedding_table(const std::string& path, const Tensor& table);

}  // namespace voltron
