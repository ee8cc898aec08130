#include "voltron/decoder.hpp"

#include <cmath>

#include "voltron/error.hpp"

namespace voltron {

AttentionMask build_prefix_mask(int num_patch_rows, int caption_len) {
    if (num_patch_rows < 1 || caption_len < 1) {
        throw ContractError("prefix mask needs at least one patch row and one language row");
    }
    const int total = num_patch_rows + caption_len;
    AttentionMask m;
    m.rows = total;
    m.cols = total;
    m.allow.assign(size_t(total) * total, 0);
    for (int i = 0; i < total; ++i) {
        for (int j = 0; j < num_patch_rows; ++j) m.set(i, j, true);
        if (i >= num_patch_rows) {
            for (int j = num_patch_rows; j <= i; ++j) m.set(i, j, true);
        }
    }
    return m;
}

Decoder Decoder::create(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    Decoder d;
    d.cfg = cfg;
    d.enc2dec = Linear::create(cfg.dim, cfg.dec_dim, rng);
    d.mask_embed = trunc_normal(1, cfg.dec_dim, 0.02, rng);
    d.e_img_dec = trunc_normal(1, cfg.dec_dim, 0.02, rng);
    d.e_lang_dec = trunc_normal(1, cfg.dec_dim, 0.02, rng);
    for (int f = 0; f < cfg.k; ++f) {
        d.e_frame_dec.push_back(trunc_normal(1, cfg.dec_dim, 0.02, rng));
    }
    d.token_table = trunc_normal(cfg.vocab_size, cfg.dec_dim, 0.02, rng);
    for (int b = 0; b < cfg.dec_depth; ++b) {
        d.blocks.push_back(TransformerBlock::create(cfg.dec_dim, cfg.dec_heads, rng));
    }
    d.pixel_head = Linear::create(cfg.dec_dim, cfg.patch_dim(), rng);
    d.lang_head = Linear::create(cfg.dec_dim, cfg.vocab_size, rng);
    d.pos_2d = sinusoid_2d(cfg.grid_h(), cfg.grid_w(), cfg.dec_dim);
    d.pos_1d = sinusoid_1d(cfg.caption_len, cfg.dec_dim);
    return d;
}

// Full k*|R| grid: projected encoder rows at their original positions, the
// shared <MASK> embedding everywhere else, plus position/modality/frame terms.
Tensor Decoder::build_patch_rows(const EncodedSequence& h) const {
    const int regions = cfg.regions();
    if (h.k < 1 || h.k > int(e_frame_dec.size())) {
        throw ContractError("encoded sequence frame count unsupported by this decoder");
    }
    std::vector<int> scatter(regions, -1);
    for (size_t i = 0; i < h.visible_region_ids.size(); ++i) {
        int r = h.visible_region_ids[i];
        if (r < 0 || r >= regions) throw ContractError("visible region id out of range");
        scatter[r] = static_cast<int>(i);
    }
    std::vector<double> indicator(regions);
    for (int r = 0; r < regions; ++r) indicator[r] = scatter[r] == -1 ? 1.0 : 0.0;
    Tensor hidden_flag = Tensor::from_values(regions, 1, std::move(indicator));
    std::vector<Tensor> frames;
    for (int f = 0; f < h.k; ++f) {
        Tensor proj = enc2dec.forward(h.frame_rows(f));
        Tensor placed = gather_rows(proj, scatter);  // -1 rows are zero
        Tensor rows = add(placed, matmul(hidden_flag, mask_embed));
        rows = add(rows, pos_2d);
        rows = add_rowvec(rows, e_img_dec);
        rows = add_rowvec(rows, e_frame_dec[f]);
        frames.push_back(rows);
    }
    return frames.size() == 1 ? frames[0] : concat_rows(frames);
}

Tensor Decoder::reconstruct(const EncodedSequence& h, const MaskSpec& mask) const {
    if (mask.num_regions() != cfg.regions()) {
        throw ContractError("mask region count does not match the patch grid");
    }
    if (mask.kept_indices() != h.visible_region_ids) {
        throw ContractError("encoded sequence was produced under a different mask");
    }
    Tensor x = build_patch_rows(h);
    AttentionMask attn = AttentionMask::all_visible(x.rows(), x.rows());
    for (const auto& block : blocks) x = block.forward(x, attn);

    std::vector<int> dropped = mask.dropped_indices();
    std::vector<int> rows_to_predict;
    rows_to_predict.reserve(size_t(h.k) * dropped.size());
    for (int f = 0; f < h.k; ++f) {
        for (int r : dropped) rows_to_predict.push_back(f * cfg.regions() + r);
    }
    return pixel_head.forward(gather_rows(x, rows_to_predict));
}

Tensor Decoder::generate_logits(const EncodedSequence& h, const TokenizedUtterance& teacher,
                                const AttentionMask* mask_hook) const {
    if (!h.null_conditioned) {
        throw ContractError(
            "caption generation requires a <NULL>-conditioned encoding; conditioning on "
            "the target caption would let the generator copy it");
    }
    if (int(teacher.ids.size()) != cfg.caption_len) {
        throw ContractError("teacher utterance length does not match config caption_len");
    }
    for (int id : teacher.ids) {
        if (id < 0 || id >= cfg.vocab_size) {
            throw VocabularyError("teacher token id outside vocabulary");
        }
    }
    Tensor patch_rows = build_patch_rows(h);
    Tensor lang_rows = add(gather_rows(token_table, teacher.ids), pos_1d);
    lang_rows = add_rowvec(lang_rows, e_lang_dec);
    Tensor x = concat_rows({patch_rows, lang_rows});
    AttentionMask attn =
        mask_hook ? *mask_hook : build_prefix_mask(patch_rows.rows(), cfg.caption_len);
    for (const auto& block : blocks) x = block.forward(x, attn);
    Tensor lang_out = slice_rows(x, patch_rows.rows(), x.rows());
    return lang_head.forward(lang_out);
}

void Decoder::collect(std::vector<Tensor>& trainable) const {
    enc2dec.collect(trainable);
    trainable.push_back(mask_embed);
    trainable.push_back(e_img_dec);
    trainable.push_back(e_lang_dec);
    for (const auto& f : e_frame_dec) trainable.push_back(f);
    trainable.push_back(token_table);
    for (const auto& b : blocks) b.collect(trainable);
    pixel_head.collect(trainable);
    lang_head.collect(trainable);
}

UtteranceScore score_from_logits(const Tensor& logits, const TokenizedUtterance& u) {
    const int L = logits.rows();
    if (int(u.ids.size()) != L) throw ContractError("utterance length does not match logits");
    Tensor lp = log_softmax_rows(logits.detach());
    UtteranceScore score;
    for (int t = 0; t + 1 < L; ++t) {
        if (!u.length_mask[t + 1]) continue;
        score.total += lp.at(t, u.ids[t + 1]);
        ++score.scored_tokens;
    }
    return score;
}

Tensor caption_nll(const Tensor& logits, const TokenizedUtterance& u) {
    const int L = logits.rows();
    if (int(u.ids.size()) != L) throw ContractError("utterance length does not match logits");
    std::vector<int> targets(L, 0);
    std::vector<double> target_mask(L, 0.0);
    int count = 0;
    for (int t = 0; t + 1 < L; ++t) {
        if (!u.length_mask[t + 1]) continue;
        targets[t] = u.ids[t + 1];
        target_mask[t] = 1.0;
        ++count;
    }
    if (count == 0) throw ContractError("utterance has no target tokens to score");
    Tensor picked = take_per_row(log_softmax_rows(logits), targets);
    Tensor masked = mul_colvec(picked, Tensor::from_values(L, 1, std::move(target_mask)));
    return scale(sum(masked), -1.0 / count);
}

}  // namespace voltron
