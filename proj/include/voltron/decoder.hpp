#pragma once

#include <vector>

#include "voltron/config.hpp"
#include "voltron/dataops.hpp"
#include "voltron/encoder.hpp"
#include "voltron/nn.hpp"
#include "voltron/tensor.hpp"

namespace voltron {

// Attention pattern for the shared decoder: patch rows attend to every patch
// row and to no language row; language row t attends to every patch row and
// to language rows 0..t.
AttentionMask build_prefix_mask(int num_patch_rows, int caption_len);

// Shared Transformer decoder hosting the pixel reconstructor and the
// prefix-causal caption generator.
struct Decoder {
    ModelConfig cfg;
    Linear enc2dec;     // dim -> dec_dim
    Tensor mask_embed;  // 1 x dec_dim, stands in for every hidden region
    Tensor e_img_dec, e_lang_dec;      // 1 x dec_dim modality embeddings
    std::vector<Tensor> e_frame_dec;   // k frame-index embeddings
    Tensor token_table;                // vocab_size x dec_dim, trained
    std::vector<TransformerBlock> blocks;
    Linear pixel_head;  // dec_dim -> patch_dim
    Linear lang_head;   // dec_dim -> vocab_size
    Tensor pos_2d, pos_1d;  // constants

    static Decoder create(const ModelConfig& cfg, Rng& rng);

    // Predicted (normalized-pixel) patches for the masked regions of all k
    // frames: (k * dropped) x patch_dim, frames outer, region order inner.
    Tensor reconstruct(const EncodedSequence& h, const MaskSpec& mask) const;

    // Teacher-forced caption logits, caption_len x vocab_size; logits at row t
    // predict token t+1 of the utterance (row 0 consumes <BOS>). h must have
    // been encoded with the <NULL> utterance. mask_hook is a fault-injection
    // point for the verifier; nullptr selects the real prefix mask.
    Tensor generate_logits(const EncodedSequence& h, const TokenizedUtterance& teacher,
                           const AttentionMask* mask_hook = nullptr) const;

    void collect(std::vector<Tensor>& trainable) const;

private:
    Tensor build_patch_rows(const EncodedSequence& h) const;
};

struct UtteranceScore {
    double total = 0.0;  // sum of target log-probabilities
    int scored_tokens = 0;

    double per_token() const { return scored_tokens > 0 ? total / scored_tokens : 0.0; }
};

// Log-likelihood of the real (non-pad) targets of `u` under `logits`.
UtteranceScore score_from_logits(const Tensor& logits, const TokenizedUtterance& u);

// Differentiable mean NLL over real target positions (pads contribute zero).
Tensor caption_nll(const Tensor& logits, const TokenizedUtterance& u);

}  // namespace voltron
